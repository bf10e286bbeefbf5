"""Adaptive-moment optimizer with decoupled weight decay and bias correction.

Decay is decoupled from the gradient-based update: each parameter is first
shrunk by (1 - lr * wd), then moved by the bias-corrected moment ratio. Only
names with a per-name decay entry > 0 are shrunk; the engine exempts biases,
normalization gains, and position tables.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, NumericalFault
from .tensor import Tensor


@dataclass
class OptimizerState:
    lr: dict[str, float]
    wd: dict[str, float]
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def init_optimizer(params: dict[str, Tensor], lr: dict[str, float],
                   wd: dict[str, float], beta1: float = 0.9, beta2: float = 0.999,
                   eps: float = 1e-8) -> OptimizerState:
    state = OptimizerState(lr=dict(lr), wd=dict(wd), beta1=beta1, beta2=beta2, eps=eps)
    for name, p in params.items():
        state.m[name] = np.zeros_like(p.data)
        state.v[name] = np.zeros_like(p.data)
    return state


def adam_decoupled_step(params: dict[str, Tensor], grads: dict[str, np.ndarray],
                        state: OptimizerState, lr_scale: float = 1.0) -> None:
    """One in-place update; missing grads are treated as zero."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        elif g.shape != p.data.shape:
            raise DimensionError(f"grad shape {g.shape} != param shape {p.data.shape} for '{name}'")
        elif not np.isfinite(g).all():
            raise NumericalFault(f"non-finite gradient for '{name}'")
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        lr = state.lr[name] * lr_scale
        wd = state.wd.get(name, 0.0)
        if wd > 0.0:
            p.data *= 1.0 - lr * wd
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
