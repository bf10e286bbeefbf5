"""Diagonal-Gaussian step embeddings.

Closed-form pieces (KL to the standard-normal prior, harmonic-mean
uncertainty) are plain numpy; the `_t`-suffixed helpers build the same math
on the autodiff tape for training. The network predicts log-variance; sigma
is exp(half the log-variance) clamped to [SIGMA_MIN, SIGMA_MAX].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError, DomainError
from .tensor import Tensor

SIGMA_MIN = 1e-4
SIGMA_MAX = 1e4
LOGVAR_MIN = 2.0 * math.log(SIGMA_MIN)
LOGVAR_MAX = 2.0 * math.log(SIGMA_MAX)


@dataclass
class GaussianEmbedding:
    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64).reshape(-1)
        self.sigma = np.asarray(self.sigma, dtype=np.float64).reshape(-1)
        if self.mu.shape != self.sigma.shape:
            raise DimensionError("mu and sigma must share a dimension")
        if not np.isfinite(self.mu).all() or not np.isfinite(self.sigma).all():
            raise DomainError("non-finite Gaussian parameters")
        if np.any(self.sigma <= 0.0):
            raise DomainError("sigma must be strictly positive")


def sample_reparameterized(g: GaussianEmbedding, noise: np.ndarray) -> np.ndarray:
    """mu + sigma * noise for a standard-normal noise vector."""
    noise = np.asarray(noise, dtype=np.float64).reshape(-1)
    if noise.shape != g.mu.shape:
        raise DimensionError(f"noise length {noise.size} != embedding dim {g.mu.size}")
    return g.mu + g.sigma * noise


def kl_standard_normal(g: GaussianEmbedding) -> float:
    """0.5 * sum(mu^2 + sigma^2 - log sigma^2 - 1)."""
    s2 = g.sigma ** 2
    return float(0.5 * np.sum(g.mu ** 2 + s2 - np.log(s2) - 1.0))


def uncertainty(per_step_sigmas: list[np.ndarray]) -> float:
    """Sum over steps of the harmonic mean of the per-dimension sigmas."""
    if not per_step_sigmas:
        raise ContractError("uncertainty needs at least one step")
    dims = {np.asarray(s).size for s in per_step_sigmas}
    if len(dims) != 1:
        raise DimensionError("steps disagree on embedding dimension")
    total = 0.0
    for s in per_step_sigmas:
        s = np.asarray(s, dtype=np.float64).reshape(-1)
        if np.any(s <= 0.0):
            raise DomainError("sigma must be strictly positive")
        total += s.size / np.sum(1.0 / s)
    return float(total)


# ---------------------------------------------------------------------------
# tape-side building blocks
# ---------------------------------------------------------------------------

def clip_t(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp with gradient 1 inside [lo, hi], 0 outside (equivalent to the
    hinge composition lo + relu(x - lo) - relu(x - hi))."""
    return T.clip(x, lo, hi)


def sigma_from_logvar_t(logvar: Tensor) -> Tensor:
    return T.exp(T.scale(clip_t(logvar, LOGVAR_MIN, LOGVAR_MAX), 0.5))


def sample_reparameterized_t(mu: Tensor, sigma: Tensor, noise: np.ndarray) -> Tensor:
    """Tape version; gradients flow to mu and sigma, the noise is a constant."""
    if tuple(np.asarray(noise).shape) != mu.shape:
        raise DimensionError("noise shape must match mu")
    return T.add(mu, T.mul(sigma, Tensor(np.asarray(noise, dtype=mu.data.dtype))))


def kl_standard_normal_t(mu: Tensor, logvar: Tensor) -> Tensor:
    """KL of N(mu, diag exp(logvar)) from N(0, I), summed over all entries.

    Uses the (clamped) log-variance directly: 0.5 sum(mu^2 + e^lv - lv - 1).
    """
    lv = clip_t(logvar, LOGVAR_MIN, LOGVAR_MAX)
    terms = T.sub(T.add(T.mul(mu, mu), T.exp(lv)), T.add(lv, 1.0))
    return T.scale(T.asum(terms), 0.5)
