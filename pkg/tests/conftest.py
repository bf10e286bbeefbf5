import numpy as np
import pytest

from raqa import tensor as T
from raqa.model import FeatureSequence, ModelDims, StepDescriptor, init_params
from raqa.rubric import RubricSpec, Stage, StepType, build_dag
from raqa.tensor import Tape, Tensor, backward, finite_difference_gradient


def rel_err(ad: np.ndarray, fd: np.ndarray) -> float:
    return float(np.max(np.abs(ad - fd)) / max(np.max(np.abs(fd)), 1e-6))


def gradcheck(build, params, tol: float, eps: float = 1e-5) -> float:
    """Autodiff gradients of build() (a scalar) vs central differences for
    every tensor in params. Returns the worst relative error seen."""
    with Tape() as tape:
        out = build()
    grads = backward(tape, out)
    worst = 0.0
    for t in params:
        def f(probe, t=t):
            old = t.data
            t.data = probe.data
            try:
                return build()
            finally:
                t.data = old
        fd = finite_difference_gradient(f, t, eps)
        ad = grads.get(t)
        if ad is None:
            ad = np.zeros_like(fd)
        err = rel_err(ad, fd)
        assert err < tol, f"{t.name or 'tensor'}: rel err {err:.3e} >= {tol}"
        worst = max(worst, err)
    return worst


@pytest.fixture
def small_rubric() -> RubricSpec:
    return RubricSpec(
        step_types=tuple(StepType(i, f"step_{i}") for i in range(6)),
        stages=(Stage("a", (0, 1)), Stage("b", (2, 3)), Stage("c", (4, 5))),
        difficulty_multiplier=True,
    )


@pytest.fixture
def tiny_model():
    """Small float64 model plus one input, for oracle and gradient tests."""
    spec = RubricSpec(
        step_types=tuple(StepType(i, f"s{i}") for i in range(4)),
        stages=(Stage("a", (0, 1)), Stage("b", (2,))),
    )
    dag = build_dag(spec, [0, 2])
    dims = ModelDims(d_feat=6, d_text=5, t_max=4, d_latent=8, n_heads=2, ffn_mult=2)
    params = init_params(dims, seed=0, dtype=np.float64)
    rng = np.random.default_rng(11)
    x = FeatureSequence(rng.standard_normal((4, 6)), "fixture")
    steps = [StepDescriptor(0, rng.standard_normal(5)),
             StepDescriptor(2, rng.standard_normal(5))]
    return spec, dag, dims, params, x, steps
