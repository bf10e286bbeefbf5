"""Synthetic assessment videos: a generator with a known rubric-governed
scoring process and planted step timing, plus bit-exact file I/O.

Each sample is an ordered draw of distinct step types, contiguous intervals
partitioning the clip axis, and latent per-step qualities in [0, 1]. Feature
rows inside step s's interval are

    signature(type_s) + q_s * quality_direction + eta * N(0, I)

so the label-generating qualities are planted in the features, the intervals
are recoverable by construction, and the per-sample noise level eta gives the
calibration metrics genuine signal. The raw label is
difficulty * sum_s(10 * q_s); stored labels are min-max normalized over the
generated dataset, with the raw range kept in the manifest.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import rng
from .errors import ConfigError, DataFormatError
from .model import FeatureSequence
from .rubric import RubricSpec, Stage, StepType, rubric_to_dict, save_rubric_spec

MAGIC = b"RAQA"
VERSION = 1

_DESCRIPTOR_MAX_COS = 0.9
_SUBSCORE_SCALE = 10.0  # per-step subscore = 10 * q, echoing a 0-10 judging scale
SIGNATURE_AMP = 2.0  # step-type signature magnitude in feature rows
QUALITY_AMP = 1.0  # quality-direction magnitude per unit of q


@dataclass
class GeneratorConfig:
    n_train: int = 500
    n_test: int = 150
    t_clips: int = 24
    d_feat: int = 32
    d_text: int = 16
    n_step_types: int = 9
    k_min: int = 2
    k_max: int = 5
    eta_min: float = 0.05
    eta_max: float = 0.5
    difficulty_min: float = 1.0
    difficulty_max: float = 2.0
    seed: int = 7

    def __post_init__(self):
        if self.n_train < 1 or self.n_test < 1:
            raise ConfigError("need at least one train and one test sample")
        if not 1 <= self.k_min <= self.k_max:
            raise ConfigError("need 1 <= k_min <= k_max")
        if self.k_max > self.n_step_types:
            raise ConfigError("k_max exceeds the step-type catalog size")
        if self.k_max > self.t_clips:
            raise ConfigError("k_max steps cannot fit in t_clips clips")
        if self.eta_min < 0 or self.eta_max < self.eta_min:
            raise ConfigError("need 0 <= eta_min <= eta_max")
        if self.difficulty_min <= 0 or self.difficulty_max < self.difficulty_min:
            raise ConfigError("need 0 < difficulty_min <= difficulty_max")


@dataclass(eq=False)
class SyntheticSample:
    features: FeatureSequence
    steps: list[int]
    intervals: list[tuple[int, int]]
    qualities: list[float]
    difficulty: float
    label: float  # normalized to [0, 1] over the dataset
    eta: float

    @property
    def sample_id(self) -> str:
        return self.features.sample_id

    def __eq__(self, other) -> bool:
        if not isinstance(other, SyntheticSample):
            return NotImplemented
        return (
            self.features.sample_id == other.features.sample_id
            and self.features.values.dtype == other.features.values.dtype
            and np.array_equal(self.features.values, other.features.values)
            and self.steps == other.steps
            and self.intervals == other.intervals
            and self.qualities == other.qualities
            and self.difficulty == other.difficulty
            and self.label == other.label
            and self.eta == other.eta
        )


@dataclass
class Manifest:
    rubric_spec: Path
    train: list[Path]
    test: list[Path]
    seed: int
    label_min: float
    label_max: float


# ---------------------------------------------------------------------------
# deterministic pseudo-random vectors
# ---------------------------------------------------------------------------

# Descriptors (text-embedding stand-ins) and feature signatures of a step type
# both derive from one pseudo-random per-type "semantic core" through fixed
# random projections, the way real text embeddings and visual features of the
# same step are correlated through semantics. A model therefore has to learn
# only one linear relation between the two spaces, not a separate arbitrary
# pairing per type.
_CORE_DIM = 32
_CORE_MAX_COS = 0.2


def _semantic_core(step_type_id: int, master_seed: int) -> np.ndarray:
    """Unit core per type; rejection keeps pairwise |cosine| below the bound."""
    cores: list[np.ndarray] = []
    for i in range(step_type_id + 1):
        for attempt in range(1000):
            v = rng.stream(master_seed, "semantic_core", i, attempt).standard_normal(_CORE_DIM)
            v /= np.linalg.norm(v)
            if all(abs(float(v @ u)) < _CORE_MAX_COS for u in cores):
                cores.append(v)
                break
        else:
            raise ConfigError(f"cannot place {step_type_id + 1} semantic cores")
    return cores[step_type_id]


def _projection(label: str, rows: int, master_seed: int) -> np.ndarray:
    return rng.stream(master_seed, label, rows).standard_normal((rows, _CORE_DIM)) \
        / np.sqrt(_CORE_DIM)


def step_descriptor(step_type_id: int, d_text: int, master_seed: int) -> np.ndarray:
    """Deterministic unit descriptor standing in for a text embedding."""
    if step_type_id < 0:
        raise ConfigError("step type ids are non-negative")
    proj = _projection("text_projection", d_text, master_seed)
    v = proj @ _semantic_core(step_type_id, master_seed)
    v /= np.linalg.norm(v)
    # the shared-core construction keeps pairwise cosines low by itself; the
    # rejection bound is still enforced explicitly
    for other in range(step_type_id):
        o = proj @ _semantic_core(other, master_seed)
        o /= np.linalg.norm(o)
        if abs(float(v @ o)) >= _DESCRIPTOR_MAX_COS:
            raise ConfigError(f"descriptor collision for step types {other}/{step_type_id}")
    return v


def _signatures(n_types: int, d_feat: int, seed: int) -> list[np.ndarray]:
    proj = _projection("feature_projection", d_feat, seed)
    sigs = []
    for t in range(n_types):
        v = proj @ _semantic_core(t, seed)
        sigs.append(v / np.linalg.norm(v))
    return sigs


def _quality_direction(d_feat: int, seed: int) -> np.ndarray:
    v = rng.stream(seed, "quality_direction").standard_normal(d_feat)
    return v / np.linalg.norm(v)


def _difficulty_weight(type_id: int, seed: int) -> float:
    return float(rng.stream(seed, "difficulty_weight", type_id).uniform())


def default_rubric(cfg: GeneratorConfig) -> RubricSpec:
    """Catalog of n_step_types types split into up to three contiguous stages."""
    types = tuple(StepType(i, f"step_{i:02d}") for i in range(cfg.n_step_types))
    n_stages = min(3, cfg.n_step_types)
    groups = np.array_split(np.arange(cfg.n_step_types), n_stages)
    names = ["stage_a", "stage_b", "stage_c"]
    stages = tuple(Stage(names[i], tuple(int(t) for t in g))
                   for i, g in enumerate(groups) if len(g))
    multiplier = not (cfg.difficulty_min == cfg.difficulty_max == 1.0)
    return RubricSpec(step_types=types, stages=stages,
                      difficulty_multiplier=multiplier, ordered=True)


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------

def _draw_sample(cfg: GeneratorConfig, split: str, index: int,
                 sigs: list[np.ndarray], qdir: np.ndarray, multiplier: bool):
    rs = rng.stream(cfg.seed, "sample", split, index)
    k = int(rs.integers(cfg.k_min, cfg.k_max + 1))
    steps = sorted(int(t) for t in rs.choice(cfg.n_step_types, size=k, replace=False))
    if k > 1:
        cuts = np.sort(rs.choice(np.arange(1, cfg.t_clips), size=k - 1, replace=False))
    else:
        cuts = np.array([], dtype=int)
    bounds = [0, *cuts.tolist(), cfg.t_clips]
    intervals = [(bounds[s] + 1, bounds[s + 1]) for s in range(k)]
    qualities = rs.uniform(0.0, 1.0, size=k)
    eta = float(rs.uniform(cfg.eta_min, cfg.eta_max))

    feats = np.zeros((cfg.t_clips, cfg.d_feat))
    for (start, end), t, q in zip(intervals, steps, qualities):
        feats[start - 1:end] = SIGNATURE_AMP * sigs[t] + QUALITY_AMP * q * qdir
    feats += eta * rs.standard_normal((cfg.t_clips, cfg.d_feat))

    if multiplier:
        w = float(np.mean([_difficulty_weight(t, cfg.seed) for t in steps]))
        difficulty = cfg.difficulty_min + (cfg.difficulty_max - cfg.difficulty_min) * w
    else:
        difficulty = 1.0
    raw_label = difficulty * float(np.sum(_SUBSCORE_SCALE * qualities))
    sample = SyntheticSample(
        features=FeatureSequence(feats.astype(np.float32), sample_id=f"{split}_{index:04d}"),
        steps=steps,
        intervals=intervals,
        qualities=[float(q) for q in qualities],
        difficulty=difficulty,
        label=raw_label,  # normalized later, once the dataset range is known
        eta=eta,
    )
    return sample


def generate_dataset(cfg: GeneratorConfig, out_dir: str | Path) -> Path:
    """Write rubric, sample files, and manifest; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rubric = default_rubric(cfg)
    sigs = _signatures(cfg.n_step_types, cfg.d_feat, cfg.seed)
    qdir = _quality_direction(cfg.d_feat, cfg.seed)

    samples = {"train": [], "test": []}
    for split, count in (("train", cfg.n_train), ("test", cfg.n_test)):
        for i in range(count):
            samples[split].append(
                _draw_sample(cfg, split, i, sigs, qdir, rubric.difficulty_multiplier))

    raw = [s.label for split in ("train", "test") for s in samples[split]]
    label_min, label_max = min(raw), max(raw)
    if label_max - label_min < 1e-9:
        raise ConfigError("degenerate raw label range; increase dataset size")
    for split in ("train", "test"):
        for s in samples[split]:
            s.label = (s.label - label_min) / (label_max - label_min)

    rubric_path = out / "rubric.json"
    save_rubric_spec(rubric, rubric_path)
    rel_paths = {"train": [], "test": []}
    for split in ("train", "test"):
        for s in samples[split]:
            name = f"{s.sample_id}.raqa"
            store_sample(s, out / name)
            rel_paths[split].append(name)

    manifest = {
        "rubric_spec": "rubric.json",
        "train": rel_paths["train"],
        "test": rel_paths["test"],
        "seed": cfg.seed,
        "label_min": label_min,
        "label_max": label_max,
    }
    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest_path


# ---------------------------------------------------------------------------
# sample file format (little-endian)
# ---------------------------------------------------------------------------
# magic "RAQA" | u32 version | u32 T | u32 d_feat | u32 K
# K x (u32 step type, u32 start, u32 end)
# f64 label | f64 difficulty | f64 eta | K x f64 quality
# T*d_feat f32 features, row-major

def store_sample(sample: SyntheticSample, path: str | Path) -> None:
    t_clips, d_feat = sample.features.values.shape
    k = len(sample.steps)
    parts = [struct.pack("<4sIIII", MAGIC, VERSION, t_clips, d_feat, k)]
    for (start, end), t in zip(sample.intervals, sample.steps):
        parts.append(struct.pack("<III", t, start, end))
    parts.append(struct.pack("<ddd", sample.label, sample.difficulty, sample.eta))
    parts.append(struct.pack(f"<{k}d", *sample.qualities))
    parts.append(np.ascontiguousarray(sample.features.values, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_sample(path: str | Path) -> SyntheticSample:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < 20:
        raise DataFormatError(f"truncated sample file {path}")
    magic, version, t_clips, d_feat, k = struct.unpack_from("<4sIIII", blob, 0)
    if magic != MAGIC:
        raise DataFormatError(f"bad magic in {path}")
    if version != VERSION:
        raise DataFormatError(f"unsupported sample version {version} (reader at {VERSION})")
    expected = 20 + 12 * k + 24 + 8 * k + 4 * t_clips * d_feat
    if len(blob) != expected:
        raise DataFormatError(f"truncated or oversized sample file {path}")
    off = 20
    steps, intervals = [], []
    for _ in range(k):
        t, start, end = struct.unpack_from("<III", blob, off)
        steps.append(t)
        intervals.append((start, end))
        off += 12
    label, difficulty, eta = struct.unpack_from("<ddd", blob, off)
    off += 24
    qualities = list(struct.unpack_from(f"<{k}d", blob, off))
    off += 8 * k
    feats = np.frombuffer(blob, dtype="<f4", offset=off).reshape(t_clips, d_feat).copy()
    return SyntheticSample(
        features=FeatureSequence(feats, sample_id=path.stem),
        steps=steps,
        intervals=intervals,
        qualities=qualities,
        difficulty=difficulty,
        label=label,
        eta=eta,
    )


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------

def load_generator_config(path: str | Path) -> tuple[GeneratorConfig, Path]:
    """Generator config file: every GeneratorConfig field plus `out_dir`."""
    try:
        obj = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read generator config {path}: {e}") from e
    if not isinstance(obj, dict):
        raise ConfigError("generator config must be a JSON object")
    from dataclasses import fields as dc_fields
    known = {f.name for f in dc_fields(GeneratorConfig)} | {"out_dir"}
    unknown = set(obj) - known
    if unknown:
        raise ConfigError(f"unknown generator-config keys: {sorted(unknown)}")
    if "out_dir" not in obj:
        raise ConfigError("generator config needs an out_dir")
    out_dir = Path(obj.pop("out_dir"))
    try:
        return GeneratorConfig(**obj), out_dir
    except TypeError as e:
        raise ConfigError(f"bad generator config: {e}") from e


_MANIFEST_KEYS = {"rubric_spec", "train", "test", "seed", "label_min", "label_max"}


def load_manifest(path: str | Path) -> Manifest:
    path = Path(path)
    try:
        obj = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise DataFormatError(f"cannot read manifest {path}: {e}") from e
    if not isinstance(obj, dict) or set(obj) != _MANIFEST_KEYS:
        raise DataFormatError(f"manifest {path} must have exactly keys {sorted(_MANIFEST_KEYS)}")
    base = path.parent
    return Manifest(
        rubric_spec=base / obj["rubric_spec"],
        train=[base / p for p in obj["train"]],
        test=[base / p for p in obj["test"]],
        seed=int(obj["seed"]),
        label_min=float(obj["label_min"]),
        label_max=float(obj["label_max"]),
    )
