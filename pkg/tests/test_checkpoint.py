import numpy as np
import pytest

from raqa.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from raqa.config import RunConfig
from raqa.errors import DataFormatError
from raqa.model import ModelDims


def _mk_checkpoint():
    rng = np.random.default_rng(0)
    cfg = RunConfig(manifest="m.json", out_dir="out", epochs=3, batch_size=2)
    dims = ModelDims(d_feat=4, d_text=3, t_max=5, d_latent=8, n_heads=2)
    params = {"a.W": rng.standard_normal((4, 8)).astype(np.float32),
              "b.b": rng.standard_normal((1, 8)).astype(np.float32)}
    return Checkpoint(config=cfg, dims=dims, rubric={"step_types": []},
                      epoch=2, global_step=17, opt_step=17,
                      params=params,
                      opt_m={k: np.zeros_like(v) for k, v in params.items()},
                      opt_v={k: np.ones_like(v) for k, v in params.items()})


def test_save_load_save_byte_identical(tmp_path):
    ckpt = _mk_checkpoint()
    p1, p2 = tmp_path / "a.rack", tmp_path / "b.rack"
    save_checkpoint(ckpt, p1)
    loaded = load_checkpoint(p1)
    save_checkpoint(loaded, p2)
    assert p1.read_bytes() == p2.read_bytes()
    assert loaded.epoch == 2 and loaded.global_step == 17 and loaded.opt_step == 17
    for k, v in ckpt.params.items():
        assert np.array_equal(loaded.params[k], v)
        assert loaded.params[k].dtype == np.float32
    assert loaded.config.to_dict() == ckpt.config.to_dict()
    assert loaded.dims == ckpt.dims


def test_bad_magic_and_version(tmp_path):
    path = tmp_path / "c.rack"
    save_checkpoint(_mk_checkpoint(), path)
    blob = bytearray(path.read_bytes())
    blob[:4] = b"XXXX"
    bad = tmp_path / "bad.rack"
    bad.write_bytes(bytes(blob))
    with pytest.raises(DataFormatError):
        load_checkpoint(bad)
    blob[:4] = b"RACK"
    blob[4:8] = (9).to_bytes(4, "little")
    bad.write_bytes(bytes(blob))
    with pytest.raises(DataFormatError, match="version"):
        load_checkpoint(bad)


def test_truncated_and_trailing_bytes(tmp_path):
    path = tmp_path / "c.rack"
    save_checkpoint(_mk_checkpoint(), path)
    blob = path.read_bytes()
    bad = tmp_path / "bad.rack"
    bad.write_bytes(blob[: len(blob) - 5])
    with pytest.raises(DataFormatError):
        load_checkpoint(bad)
    bad.write_bytes(blob + b"\x00")
    with pytest.raises(DataFormatError):
        load_checkpoint(bad)


def test_optimizer_moments_partitioned(tmp_path):
    path = tmp_path / "c.rack"
    save_checkpoint(_mk_checkpoint(), path)
    loaded = load_checkpoint(path)
    assert set(loaded.params) == {"a.W", "b.b"}
    assert set(loaded.opt_m) == {"a.W", "b.b"}
    assert np.all(loaded.opt_v["a.W"] == 1.0)
