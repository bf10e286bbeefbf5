"""Checkpoint serialization.

Little-endian binary: magic "RACK", u32 version, a length-prefixed canonical
JSON blob (run config snapshot, model dims, rubric content, epoch/step
counters), then named f32 tensors as (u32 name length, name bytes, u32 rank,
u32 dims..., data). Tensor names are sorted and JSON keys canonicalized, so
save -> load -> save is byte-identical. Optimizer moments are stored as
tensors under "opt.m." / "opt.v." prefixes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import RunConfig, run_config_from_dict
from .errors import DataFormatError
from .model import ModelDims

MAGIC = b"RACK"
VERSION = 1


@dataclass
class Checkpoint:
    config: RunConfig
    dims: ModelDims
    rubric: dict  # canonical rubric-spec content the model was trained with
    epoch: int  # epochs completed
    global_step: int
    opt_step: int
    params: dict[str, np.ndarray]
    opt_m: dict[str, np.ndarray]
    opt_v: dict[str, np.ndarray]


def _dims_to_dict(d: ModelDims) -> dict:
    return {"d_feat": d.d_feat, "d_text": d.d_text, "t_max": d.t_max,
            "d_latent": d.d_latent, "n_heads": d.n_heads, "ffn_mult": d.ffn_mult,
            "position_encoding": d.position_encoding}


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    meta = {
        "config": ckpt.config.to_dict(),
        "dims": _dims_to_dict(ckpt.dims),
        "rubric": ckpt.rubric,
        "epoch": ckpt.epoch,
        "global_step": ckpt.global_step,
        "opt_step": ckpt.opt_step,
    }
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    tensors: dict[str, np.ndarray] = dict(ckpt.params)
    tensors.update({f"opt.m.{k}": v for k, v in ckpt.opt_m.items()})
    tensors.update({f"opt.v.{k}": v for k, v in ckpt.opt_v.items()})
    parts = [struct.pack("<4sII", MAGIC, VERSION, len(blob)), blob,
             struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        if arr.ndim != 2:
            raise DataFormatError(f"checkpoint tensor '{name}' must be 2-D")
        nb = name.encode("utf-8")
        parts.append(struct.pack("<I", len(nb)))
        parts.append(nb)
        parts.append(struct.pack("<III", 2, arr.shape[0], arr.shape[1]))
        parts.append(arr.tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < 12:
        raise DataFormatError(f"truncated checkpoint {path}")
    magic, version, json_len = struct.unpack_from("<4sII", blob, 0)
    if magic != MAGIC:
        raise DataFormatError(f"bad checkpoint magic in {path}")
    if version != VERSION:
        raise DataFormatError(f"unsupported checkpoint version {version} (reader at {VERSION})")
    off = 12
    if len(blob) < off + json_len + 4:
        raise DataFormatError(f"truncated checkpoint {path}")
    try:
        meta = json.loads(blob[off:off + json_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataFormatError(f"corrupt checkpoint metadata in {path}: {e}") from e
    off += json_len
    (n_tensors,) = struct.unpack_from("<I", blob, off)
    off += 4
    tensors: dict[str, np.ndarray] = {}
    for _ in range(n_tensors):
        if len(blob) < off + 4:
            raise DataFormatError(f"truncated checkpoint {path}")
        (name_len,) = struct.unpack_from("<I", blob, off)
        off += 4
        name = blob[off:off + name_len].decode("utf-8")
        off += name_len
        rank, rows, cols = struct.unpack_from("<III", blob, off)
        if rank != 2:
            raise DataFormatError(f"unsupported tensor rank {rank} in {path}")
        off += 12
        nbytes = 4 * rows * cols
        if len(blob) < off + nbytes:
            raise DataFormatError(f"truncated checkpoint {path}")
        tensors[name] = np.frombuffer(blob, dtype="<f4", count=rows * cols,
                                      offset=off).reshape(rows, cols).copy()
        off += nbytes
    if off != len(blob):
        raise DataFormatError(f"trailing bytes in checkpoint {path}")

    params, opt_m, opt_v = {}, {}, {}
    for name, arr in tensors.items():
        if name.startswith("opt.m."):
            opt_m[name[6:]] = arr
        elif name.startswith("opt.v."):
            opt_v[name[6:]] = arr
        else:
            params[name] = arr
    try:
        config = run_config_from_dict(meta["config"])
        dims = ModelDims(**meta["dims"])
        return Checkpoint(config=config, dims=dims, rubric=meta["rubric"],
                          epoch=int(meta["epoch"]), global_step=int(meta["global_step"]),
                          opt_step=int(meta["opt_step"]), params=params,
                          opt_m=opt_m, opt_v=opt_v)
    except (KeyError, TypeError) as e:
        raise DataFormatError(f"incomplete checkpoint metadata in {path}: {e}") from e
