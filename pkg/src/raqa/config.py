"""Run configuration: JSON in, dataclass out. Unknown keys are rejected and
every field has a documented default (README lists the schema)."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .errors import ConfigError


@dataclass
class RunConfig:
    manifest: str
    out_dir: str
    rubric_spec: str = ""  # empty -> use the manifest's rubric
    mode: str = "stochastic"  # or "deterministic"
    d_latent: int = 64
    n_heads: int = 4
    ffn_mult: int = 2
    d_text: int = 16
    position_encoding: bool = True
    n_inference_samples: int = 20
    train_samples: int = 1
    epochs: int = 200
    batch_size: int = 8
    lr_encoder: float = 1e-3
    lr_attention: float = 1e-3
    lr_head: float = 2e-3
    weight_decay: float = 0.01
    warmup_epochs: int = 5
    beta_start: float = 1e-5
    beta_max: float = 0.005
    gamma: float = 0.1
    margin: float = 1.0
    output_sigma: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("stochastic", "deterministic"):
            raise ConfigError(f"mode must be 'stochastic' or 'deterministic', got '{self.mode}'")
        for name in ("d_latent", "n_heads", "ffn_mult", "d_text", "n_inference_samples",
                     "train_samples", "epochs", "batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.warmup_epochs < 0:
            raise ConfigError("warmup_epochs must be >= 0")
        if self.d_latent % self.n_heads != 0:
            raise ConfigError("d_latent must be divisible by n_heads")
        if not self.manifest:
            raise ConfigError("manifest path required")
        if not self.out_dir:
            raise ConfigError("out_dir required")

    def to_dict(self) -> dict:
        return asdict(self)


def run_config_from_dict(obj: dict) -> RunConfig:
    if not isinstance(obj, dict):
        raise ConfigError("run config must be a JSON object")
    known = {f.name for f in fields(RunConfig)}
    unknown = set(obj) - known
    if unknown:
        raise ConfigError(f"unknown run-config keys: {sorted(unknown)}")
    missing = {"manifest", "out_dir"} - set(obj)
    if missing:
        raise ConfigError(f"missing required run-config keys: {sorted(missing)}")
    try:
        return RunConfig(**obj)
    except TypeError as e:
        raise ConfigError(f"bad run config: {e}") from e


def load_run_config(path: str | Path) -> RunConfig:
    try:
        obj = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read run config {path}: {e}") from e
    return run_config_from_dict(obj)


def save_run_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
