"""The embedding network and the DAG scoring network.

The embedding side turns clip features and step descriptors into one diagonal
Gaussian per step: a linear projection plus self-attention block over video
tokens, a two-layer MLP over step descriptors, two pre-norm cross-attention
blocks (steps as queries, video tokens as keys/values), then mean and
log-variance heads. The scoring side samples the leaf Gaussians, propagates
deterministically through the rubric DAG (per-node-kind shared two-layer MLP
over the mean of predecessor embeddings), and decodes a scalar score at the
root. The attention map exposed for localization is the head-averaged map of
the last cross-attention block.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import rng
from . import stochastic as st
from . import tensor as T
from .errors import ContractError, DimensionError
from .rubric import LEAF, ROOT, RubricDag
from .stochastic import GaussianEmbedding
from .tensor import Tensor


@dataclass
class ModelDims:
    d_feat: int
    d_text: int
    t_max: int
    d_latent: int = 64
    n_heads: int = 4
    ffn_mult: int = 2
    position_encoding: bool = True

    def __post_init__(self):
        if self.d_latent % self.n_heads != 0:
            raise ContractError("d_latent must be divisible by n_heads")


@dataclass
class FeatureSequence:
    values: np.ndarray  # (T, d_feat)
    sample_id: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 2 or self.values.shape[0] < 1:
            raise DimensionError("features must be a T x d_feat matrix with T >= 1")
        if not np.isfinite(self.values).all():
            raise DimensionError("non-finite feature values")


@dataclass
class StepDescriptor:
    type_id: int
    vector: np.ndarray

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=np.float64).reshape(-1)


@dataclass
class AttentionMap:
    values: np.ndarray  # (K, T), rows sum to 1

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DimensionError("attention map must be 2-D")


@dataclass
class ScorePrediction:
    score: float
    uncertainty: float | None
    attention: AttentionMap
    per_step: list[GaussianEmbedding]
    tensors: dict[str, Tensor] = field(default_factory=dict, repr=False)


class ModelParams:
    """Named parameter tensors plus the dimension config they were built for."""

    def __init__(self, dims: ModelDims, tensors: dict[str, Tensor]):
        self.dims = dims
        self.tensors = tensors

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    @property
    def dtype(self):
        return next(iter(self.tensors.values())).data.dtype

    def zero_grad(self):
        for t in self.tensors.values():
            t.zero_grad()


def _attention_param_shapes(dims: ModelDims, prefix: str, cross: bool):
    d, f = dims.d_latent, dims.ffn_mult * dims.d_latent
    shapes = {}
    if cross:
        shapes[f"{prefix}.lnq.g"] = (1, d)
        shapes[f"{prefix}.lnq.b"] = (1, d)
        shapes[f"{prefix}.lnkv.g"] = (1, d)
        shapes[f"{prefix}.lnkv.b"] = (1, d)
    else:
        shapes[f"{prefix}.ln1.g"] = (1, d)
        shapes[f"{prefix}.ln1.b"] = (1, d)
    for proj in ("q", "k", "v", "o"):
        shapes[f"{prefix}.{proj}.W"] = (d, d)
        shapes[f"{prefix}.{proj}.b"] = (1, d)
    shapes[f"{prefix}.ln2.g"] = (1, d)
    shapes[f"{prefix}.ln2.b"] = (1, d)
    shapes[f"{prefix}.ff1.W"] = (d, f)
    shapes[f"{prefix}.ff1.b"] = (1, f)
    shapes[f"{prefix}.ff2.W"] = (f, d)
    shapes[f"{prefix}.ff2.b"] = (1, d)
    return shapes


def param_shapes(dims: ModelDims) -> dict[str, tuple[int, int]]:
    d = dims.d_latent
    shapes: dict[str, tuple[int, int]] = {
        "video.proj.W": (dims.d_feat, d),
        "video.proj.b": (1, d),
        "steps.mlp.fc1.W": (dims.d_text, d),
        "steps.mlp.fc1.b": (1, d),
        "steps.mlp.fc2.W": (d, d),
        "steps.mlp.fc2.b": (1, d),
        "head.mu.W": (d, d),
        "head.mu.b": (1, d),
        "head.lv.W": (d, d),
        "head.lv.b": (1, d),
        "dag.mid.fc1.W": (d, d),
        "dag.mid.fc1.b": (1, d),
        "dag.mid.fc2.W": (d, d),
        "dag.mid.fc2.b": (1, d),
        "dag.root.fc1.W": (d, d),
        "dag.root.fc1.b": (1, d),
        "dag.root.fc2.W": (d, d),
        "dag.root.fc2.b": (1, d),
        "dec.fc1.W": (d, d),
        "dec.fc1.b": (1, d),
        "dec.fc2.W": (d, 1),
        "dec.fc2.b": (1, 1),
    }
    if dims.position_encoding:
        shapes["video.pos"] = (dims.t_max, d)
    shapes.update(_attention_param_shapes(dims, "video.sa", cross=False))
    shapes.update(_attention_param_shapes(dims, "cross0", cross=True))
    shapes.update(_attention_param_shapes(dims, "cross1", cross=True))
    return shapes


def init_params(dims: ModelDims, seed: int, dtype=np.float32) -> ModelParams:
    """Xavier-uniform weights, zero biases, unit LN gains, zero position table.

    Residual-branch outputs (attention out-projection, second feed-forward
    layer) start at zero so every block begins as the identity: video tokens
    initially expose the raw projected features to the cross-attention keys,
    and step queries keep their per-step identity instead of being swamped by
    shared residual context.
    """
    tensors = {}
    for name, shape in sorted(param_shapes(dims).items()):
        if name.endswith((".o.W", ".ff2.W")):
            data = np.zeros(shape)
        elif name.endswith(".W"):
            lim = math.sqrt(6.0 / (shape[0] + shape[1]))
            data = rng.stream(seed, "init", name).uniform(-lim, lim, size=shape)
        elif name.endswith(".g"):
            data = np.ones(shape)
        elif name == "video.pos":
            # random positions from the start: keys are positionally distinct,
            # so different step queries can commit to different clips early
            data = 0.5 * rng.stream(seed, "init", name).standard_normal(shape)
        else:  # biases start at zero
            data = np.zeros(shape)
        tensors[name] = T.parameter(data.astype(dtype), name=name)
    return ModelParams(dims, tensors)


# ---------------------------------------------------------------------------
# network blocks
# ---------------------------------------------------------------------------

def _linear(x: Tensor, p: ModelParams, prefix: str) -> Tensor:
    return T.linear(x, p[f"{prefix}.W"], p[f"{prefix}.b"])


def _ln(x: Tensor, p: ModelParams, prefix: str) -> Tensor:
    return T.layer_norm_affine(x, p[f"{prefix}.g"], p[f"{prefix}.b"])


def _ffn(x: Tensor, p: ModelParams, prefix: str) -> Tensor:
    return _linear(T.gelu(_linear(x, p, f"{prefix}.ff1")), p, f"{prefix}.ff2")


def _chain_mean(parts: list[Tensor]) -> Tensor:
    if len(parts) == 1:
        return parts[0]
    acc = parts[0]
    for t in parts[1:]:
        acc = T.add(acc, t)
    return T.scale(acc, 1.0 / len(parts))


def _mha(q_src: Tensor, kv_src: Tensor, p: ModelParams, prefix: str,
         want_probs: bool = False) -> tuple[Tensor, Tensor | None]:
    """Multi-head attention; optionally also the head-averaged attention map."""
    heads = p.dims.n_heads
    q = _linear(q_src, p, f"{prefix}.q")
    k = _linear(kv_src, p, f"{prefix}.k")
    v = _linear(kv_src, p, f"{prefix}.v")
    out = _linear(T.mha_core(q, k, v, heads), p, f"{prefix}.o")
    amap = T.attention_probs(q, k, heads) if want_probs else None
    return out, amap


def _self_block(x: Tensor, p: ModelParams, prefix: str) -> Tensor:
    h = _ln(x, p, f"{prefix}.ln1")
    att, _ = _mha(h, h, p, prefix)
    x = T.add(x, att)
    return T.add(x, _ffn(_ln(x, p, f"{prefix}.ln2"), p, prefix))


def _cross_block(queries: Tensor, tokens: Tensor, p: ModelParams, prefix: str,
                 want_probs: bool = False) -> tuple[Tensor, Tensor | None]:
    hq = _ln(queries, p, f"{prefix}.lnq")
    hkv = _ln(tokens, p, f"{prefix}.lnkv")
    att, amap = _mha(hq, hkv, p, prefix, want_probs=want_probs)
    x = T.add(queries, att)
    return T.add(x, _ffn(_ln(x, p, f"{prefix}.ln2"), p, prefix)), amap


# ---------------------------------------------------------------------------
# model operations
# ---------------------------------------------------------------------------

def encode_video(x: FeatureSequence, p: ModelParams) -> Tensor:
    """Clip features (T x d_feat) -> contextualized tokens (T x d_latent)."""
    t_clips, d_feat = x.values.shape
    if d_feat != p.dims.d_feat:
        raise DimensionError(f"features have d_feat={d_feat}, params expect {p.dims.d_feat}")
    tokens = _linear(Tensor(x.values.astype(p.dtype)), p, "video.proj")
    if p.dims.position_encoding:
        if t_clips > p.dims.t_max:
            raise DimensionError(f"T={t_clips} exceeds position table size {p.dims.t_max}")
        pos = p["video.pos"]
        tokens = T.add(tokens, T.slice2d(pos, 0, t_clips, 0, p.dims.d_latent)
                       if t_clips < p.dims.t_max else pos)
    return _self_block(tokens, p, "video.sa")


def encode_steps(steps: list[StepDescriptor], p: ModelParams) -> Tensor:
    """Step descriptors -> query matrix (K x d_latent); strictly row-wise."""
    if not steps:
        raise ContractError("at least one step required")
    mat = np.stack([s.vector for s in steps]).astype(p.dtype)
    if mat.shape[1] != p.dims.d_text:
        raise DimensionError(f"descriptors have d_text={mat.shape[1]}, params expect {p.dims.d_text}")
    h = T.gelu(_linear(Tensor(mat), p, "steps.mlp.fc1"))
    return _linear(h, p, "steps.mlp.fc2")


def cross_attend(queries: Tensor, tokens: Tensor, p: ModelParams) -> tuple[Tensor, Tensor]:
    """Two stacked cross-attention blocks; the returned map is from the last."""
    x, _ = _cross_block(queries, tokens, p, "cross0")
    x, amap = _cross_block(x, tokens, p, "cross1", want_probs=True)
    return x, amap


def gaussian_heads(states: Tensor, p: ModelParams) -> tuple[Tensor, Tensor, Tensor]:
    """Step states -> (mu, clamped logvar, sigma) tensors, each K x d_latent."""
    mu = _linear(states, p, "head.mu")
    logvar = st.clip_t(_linear(states, p, "head.lv"), st.LOGVAR_MIN, st.LOGVAR_MAX)
    sigma = T.exp(T.scale(logvar, 0.5))
    return mu, logvar, sigma


def predict_gaussians(states: Tensor, p: ModelParams) -> list[GaussianEmbedding]:
    mu, _, sigma = gaussian_heads(states, p)
    return [GaussianEmbedding(mu.data[i], sigma.data[i]) for i in range(mu.shape[0])]


def propagate_scores(dag: RubricDag, leaf_samples: Tensor, p: ModelParams,
                     node_fn=None) -> Tensor:
    """Leaf embeddings -> root embedding, in topological order.

    Every non-leaf node applies its kind's shared MLP to the unweighted mean
    of its predecessors' embeddings; given fixed leaf samples the result is
    deterministic. `node_fn(kind, z)` can replace the MLPs in tests.
    """
    leaf_ids = dag.leaf_ids()
    if leaf_samples.shape[0] != len(leaf_ids):
        raise DimensionError(
            f"{leaf_samples.shape[0]} leaf samples for {len(leaf_ids)} leaves")
    if node_fn is None:
        def node_fn(kind, z):
            prefix = "dag.root" if kind == ROOT else "dag.mid"
            return _linear(T.gelu(_linear(z, p, f"{prefix}.fc1")), p, f"{prefix}.fc2")

    d = leaf_samples.shape[1]
    by_id = {n.id: n for n in dag.nodes}
    preds: dict[int, list[int]] = {n.id: [] for n in dag.nodes}
    for a, b in dag.edges:
        preds[b].append(a)
    emb: dict[int, Tensor] = {}
    for i, node_id in enumerate(leaf_ids):
        emb[node_id] = T.slice2d(leaf_samples, i, i + 1, 0, d)
    root_id = dag.root_id()
    for node_id in dag.topo_order:
        node = by_id[node_id]
        if node.kind == LEAF:
            continue
        inputs = _chain_mean([emb[q] for q in sorted(preds[node_id])])
        emb[node_id] = node_fn(node.kind, inputs)
    return emb[root_id]


def decode_score(z_root: Tensor, p: ModelParams) -> Tensor:
    """Root embedding -> scalar score (1 x 1 tensor)."""
    return _linear(T.gelu(_linear(z_root, p, "dec.fc1")), p, "dec.fc2")


def _leaf_noise(rng_key, draw: int, k_steps: int, d: int, dtype) -> np.ndarray:
    rows = [rng.stream(rng_key, "noise", draw, s).standard_normal(d) for s in range(k_steps)]
    return np.stack(rows).astype(dtype)


def forward(x: FeatureSequence, steps: list[StepDescriptor], dag: RubricDag,
            p: ModelParams, mode: str = "stochastic", n_samples: int = 20,
            rng_key=0) -> ScorePrediction:
    """Full pass. Stochastic mode averages `n_samples` sampled scores and
    reports the harmonic-mean uncertainty; deterministic mode scores the
    Gaussian means directly and reports no uncertainty."""
    if mode not in ("stochastic", "deterministic"):
        raise ContractError(f"unknown mode '{mode}'")
    leaf_ids = dag.leaf_ids()
    leaf_types = [next(n.step_type for n in dag.nodes if n.id == i) for i in leaf_ids]
    if len(steps) != len(leaf_ids) or leaf_types != [s.type_id for s in steps]:
        raise ContractError("dag leaves do not match the provided steps")

    tokens = encode_video(x, p)
    queries = encode_steps(steps, p)
    states, attn = cross_attend(queries, tokens, p)
    mu, logvar, sigma = gaussian_heads(states, p)
    per_step = [GaussianEmbedding(mu.data[i], sigma.data[i]) for i in range(mu.shape[0])]

    if mode == "deterministic":
        score_t = decode_score(propagate_scores(dag, mu, p), p)
        unc = None
    else:
        if n_samples < 1:
            raise ContractError("n_samples must be >= 1 in stochastic mode")
        draws = []
        k = len(steps)
        for i in range(n_samples):
            noise = _leaf_noise(rng_key, i, k, p.dims.d_latent, p.dtype)
            z = st.sample_reparameterized_t(mu, sigma, noise)
            draws.append(decode_score(propagate_scores(dag, z, p), p))
        score_t = _chain_mean(draws)
        unc = st.uncertainty([g.sigma for g in per_step])

    return ScorePrediction(
        score=score_t.item(),
        uncertainty=unc,
        attention=AttentionMap(attn.data),
        per_step=per_step,
        tensors={"score": score_t, "mu": mu, "logvar": logvar,
                 "sigma": sigma, "attn": attn},
    )
