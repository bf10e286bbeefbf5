"""Training objective: range-scaled MSE plus annealed-weight KL, and the
attention-center auxiliary terms (sparsity and ordering hinge).

Each loss accepts either plain numpy inputs (closed-form route, used for
reporting and as the oracle in tests) or tape Tensors (differentiable route
used by the trainer). The hinge and absolute-value pieces are differentiable
almost everywhere; gradients at the kinks take the subgradient 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError
from .model import AttentionMap
from .stochastic import GaussianEmbedding, kl_standard_normal
from .tensor import Tensor


@dataclass
class LossConfig:
    total_steps: int
    beta_start: float = 1e-5
    beta_max: float = 0.005
    gamma: float = 0.1
    margin: float = 1.0
    output_sigma: float = 1.0

    def __post_init__(self):
        if self.total_steps < 1:
            raise ContractError("total_steps must be positive")
        if self.beta_start <= 0 or self.beta_max <= 0:
            raise ContractError("beta endpoints must be positive")
        if self.beta_start > self.beta_max:
            raise ContractError("beta_start must not exceed beta_max")
        if self.gamma < 0:
            raise ContractError("gamma must be non-negative")
        if self.margin <= 0 or self.output_sigma <= 0:
            raise ContractError("margin and output_sigma must be positive")


@dataclass
class LossBreakdown:
    mse: float
    kl: float | None  # absent in deterministic mode
    sparsity: float
    ranking: float
    total: float
    beta_used: float

    def recompose(self, gamma: float) -> float:
        kl_term = self.beta_used * self.kl if self.kl is not None else 0.0
        return self.mse + kl_term + gamma * (self.sparsity + self.ranking)


def _attn_values(a) -> np.ndarray:
    if isinstance(a, AttentionMap):
        return a.values
    return np.asarray(a, dtype=np.float64)


def mse_loss(pred, target, output_sigma: float = 1.0) -> float:
    """(1/N) sum((pred - target)^2) / sigma^2."""
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    target = np.asarray(target, dtype=np.float64).reshape(-1)
    if pred.size == 0:
        raise ContractError("empty batch")
    if pred.shape != target.shape:
        raise ContractError("pred and target lengths differ")
    return float(np.mean((pred - target) ** 2) / output_sigma ** 2)


def attention_centers(a):
    """Temporally weighted center per step: sum_t t * A[s, t], t = 1..T.

    Tensor input -> (K x 1) tensor on the tape; array input -> (K,) floats.
    """
    if isinstance(a, Tensor):
        t_grid = np.arange(1, a.shape[1] + 1, dtype=a.data.dtype).reshape(-1, 1)
        return T.matmul(a, Tensor(t_grid))
    vals = _attn_values(a)
    return vals @ np.arange(1, vals.shape[1] + 1, dtype=np.float64)


def sparsity_loss(a):
    """sum_s sum_t |t - center_s| * A[s, t]; zero iff every row is one-hot."""
    if isinstance(a, Tensor):
        centers = attention_centers(a)  # (K, 1)
        t_grid = np.arange(1, a.shape[1] + 1, dtype=a.data.dtype).reshape(1, -1)
        dist = T.absval(T.sub(Tensor(t_grid), centers))  # broadcast to (K, T)
        return T.asum(T.mul(dist, a))
    vals = _attn_values(a)
    centers = attention_centers(vals)
    t_grid = np.arange(1, vals.shape[1] + 1, dtype=np.float64)
    return float(np.sum(np.abs(t_grid[None, :] - centers[:, None]) * vals))


def ranking_loss(centers, t_clips: int, margin: float):
    """Hinge penalty for out-of-order centers plus the two boundary hinges."""
    if isinstance(centers, Tensor):
        k = centers.shape[0]
        c = centers if centers.shape[1] == 1 else T.transpose(centers)
        total = T.relu(T.add(T.scale(T.slice2d(c, 0, 1, 0, 1), -1.0), 1.0 + margin))
        total = T.add(total, T.relu(T.add(T.slice2d(c, k - 1, k, 0, 1), margin - t_clips)))
        if k >= 2:
            head = T.slice2d(c, 0, k - 1, 0, 1)
            tail = T.slice2d(c, 1, k, 0, 1)
            total = T.add(total, T.asum(T.relu(T.add(T.sub(head, tail), margin))))
        return total
    c = np.asarray(centers, dtype=np.float64).reshape(-1)
    if c.size == 0:
        raise ContractError("ranking_loss needs at least one center")
    total = max(0.0, 1.0 - c[0] + margin) + max(0.0, c[-1] - t_clips + margin)
    total += float(np.sum(np.maximum(0.0, c[:-1] - c[1:] + margin)))
    return float(total)


def beta_schedule(step: int, cfg: LossConfig) -> float:
    """Linear ramp from beta_start at step 0 to beta_max at total_steps."""
    if not 0 <= step <= cfg.total_steps:
        raise ContractError(f"step {step} outside [0, {cfg.total_steps}]")
    frac = step / cfg.total_steps
    return cfg.beta_start + (cfg.beta_max - cfg.beta_start) * frac


def total_loss(preds, targets, embeddings: list[list[GaussianEmbedding]],
               attentions, step: int, cfg: LossConfig, stochastic: bool = True,
               ordered: bool = True) -> LossBreakdown:
    """Batch objective from per-sample pieces (closed-form reporting route).

    KL is summed over a sample's steps and averaged over the batch; the
    auxiliary terms are batch averages and vanish for unordered rubrics.
    """
    n = len(preds)
    if n == 0:
        raise ContractError("empty batch")
    mse = mse_loss(preds, targets, cfg.output_sigma)
    if stochastic:
        beta = beta_schedule(step, cfg)
        kl = float(np.mean([sum(kl_standard_normal(g) for g in embs)
                            for embs in embeddings]))
    else:
        beta, kl = 0.0, None
    if ordered and cfg.gamma > 0:
        sp = float(np.mean([sparsity_loss(a) for a in attentions]))
        rk = float(np.mean([
            ranking_loss(attention_centers(_attn_values(a)), _attn_values(a).shape[1],
                         cfg.margin)
            for a in attentions]))
    else:
        sp, rk = 0.0, 0.0
    total = mse + (beta * kl if kl is not None else 0.0) + cfg.gamma * (sp + rk)
    return LossBreakdown(mse=mse, kl=kl, sparsity=sp, ranking=rk,
                         total=total, beta_used=beta)
