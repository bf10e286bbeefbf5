"""Training loop, evaluation protocol, prediction, calibration export.

Batches are processed as per-sample graphs with gradient accumulation (DAG
topology varies per video), reduced in a fixed order for determinism. The KL
weight anneals linearly over total optimizer steps but is evaluated once per
epoch (at the epoch's first step) so the per-epoch loss log recomposes
exactly from its components. Learning rates warm up linearly per step from 0
over `warmup_epochs` epochs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import losses as L
from . import metrics as M
from . import rng
from . import stochastic as st
from . import tensor as T
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import RunConfig
from .data import Manifest, SyntheticSample, load_manifest, load_sample, step_descriptor
from .errors import ConfigError, NumericalFault
from .model import (ModelDims, ModelParams, StepDescriptor, forward, init_params)
from .optim import OptimizerState, adam_decoupled_step, init_optimizer
from .rubric import RubricDag, RubricSpec, build_dag, load_rubric_spec, rubric_to_dict
from .tensor import Tape, Tensor, backward


@dataclass
class RunData:
    manifest: Manifest
    rubric: RubricSpec
    samples: dict[str, list[SyntheticSample]]
    dags: dict[str, list[RubricDag]]
    descriptors: dict[int, np.ndarray]

    def steps_for(self, sample: SyntheticSample) -> list[StepDescriptor]:
        return [StepDescriptor(t, self.descriptors[t]) for t in sample.steps]


def load_run_data(cfg: RunConfig) -> RunData:
    manifest = load_manifest(cfg.manifest)
    rubric_path = Path(cfg.rubric_spec) if cfg.rubric_spec else manifest.rubric_spec
    rubric = load_rubric_spec(rubric_path)
    samples = {"train": [load_sample(p) for p in manifest.train],
               "test": [load_sample(p) for p in manifest.test]}
    dags = {split: [build_dag(rubric, s.steps) for s in split_samples]
            for split, split_samples in samples.items()}
    descriptors = {t.id: step_descriptor(t.id, cfg.d_text, manifest.seed)
                   for t in rubric.step_types}
    return RunData(manifest=manifest, rubric=rubric, samples=samples,
                   dags=dags, descriptors=descriptors)


def make_dims(cfg: RunConfig, data: RunData) -> ModelDims:
    all_samples = data.samples["train"] + data.samples["test"]
    d_feats = {s.features.values.shape[1] for s in all_samples}
    if len(d_feats) != 1:
        raise ConfigError("samples disagree on feature dimension")
    t_max = max(s.features.values.shape[0] for s in all_samples)
    return ModelDims(d_feat=d_feats.pop(), d_text=cfg.d_text, t_max=t_max,
                     d_latent=cfg.d_latent, n_heads=cfg.n_heads,
                     ffn_mult=cfg.ffn_mult, position_encoding=cfg.position_encoding)


def _param_group(name: str) -> str:
    if name.startswith("video.proj") or name == "video.pos":
        return "encoder"
    if name.startswith(("video.sa", "steps.", "cross")):
        return "attention"
    return "head"


def _resolve_rates(cfg: RunConfig, params: ModelParams):
    group_lr = {"encoder": cfg.lr_encoder, "attention": cfg.lr_attention,
                "head": cfg.lr_head}
    lr = {name: group_lr[_param_group(name)] for name in params.tensors}
    wd = {name: (cfg.weight_decay if name.endswith(".W") else 0.0)
          for name in params.tensors}
    return lr, wd


def params_from_checkpoint(ckpt: Checkpoint) -> ModelParams:
    tensors = {name: T.parameter(arr.copy(), name=name)
               for name, arr in ckpt.params.items()}
    return ModelParams(ckpt.dims, tensors)


def _sample_loss(pred, label: float, beta: float, cfg: RunConfig,
                 t_clips: int, ordered: bool, batch_n: int):
    """Per-sample loss tensor (pre-scaled by 1/batch) and component floats."""
    err = T.sub(pred.tensors["score"], label)
    sq = T.mul(err, err)
    inv_s2 = 1.0 / (cfg.output_sigma ** 2)
    terms = [T.scale(sq, inv_s2)]
    comps = {"mse": sq.item() * inv_s2, "kl": 0.0, "sparsity": 0.0, "ranking": 0.0}
    if cfg.mode == "stochastic":
        kl = st.kl_standard_normal_t(pred.tensors["mu"], pred.tensors["logvar"])
        comps["kl"] = kl.item()
        terms.append(T.scale(kl, beta))
    if ordered and cfg.gamma > 0:
        attn = pred.tensors["attn"]
        sp = L.sparsity_loss(attn)
        rk = L.ranking_loss(L.attention_centers(attn), t_clips, cfg.margin)
        comps["sparsity"] = sp.item()
        comps["ranking"] = rk.item()
        terms.append(T.scale(T.add(sp, rk), cfg.gamma))
    total = terms[0]
    for t in terms[1:]:
        total = T.add(total, t)
    return T.scale(total, 1.0 / batch_n), comps


def train(cfg: RunConfig, stop_after_epoch: int | None = None,
          resume_from: str | Path | None = None,
          log_fn=None) -> tuple[Path, list[dict]]:
    """Run (or resume) training; returns (checkpoint path, per-epoch log).

    `resume_from` continues an interrupted run; the checkpoint must carry an
    identical config, and the continued run reproduces the uninterrupted one
    exactly. `stop_after_epoch` ends the run early (checkpoint still saved),
    which is how an interruption is simulated.
    """
    data = load_run_data(cfg)
    dims = make_dims(cfg, data)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rubric_snapshot = rubric_to_dict(data.rubric)

    train_samples = data.samples["train"]
    train_dags = data.dags["train"]
    n_train = len(train_samples)
    steps_per_epoch = math.ceil(n_train / cfg.batch_size)
    loss_cfg = L.LossConfig(total_steps=cfg.epochs * steps_per_epoch,
                            beta_start=cfg.beta_start, beta_max=cfg.beta_max,
                            gamma=cfg.gamma, margin=cfg.margin,
                            output_sigma=cfg.output_sigma)
    warmup_steps = cfg.warmup_epochs * steps_per_epoch
    ordered = data.rubric.ordered

    if resume_from:
        ckpt = load_checkpoint(resume_from)
        if cfg.to_dict() != ckpt.config.to_dict():
            raise ConfigError("resume checkpoint was trained with a different config")
        if ckpt.rubric != rubric_snapshot:
            raise ConfigError("resume checkpoint was trained with a different rubric")
        params = params_from_checkpoint(ckpt)
        lr, wd = _resolve_rates(cfg, params)
        opt = init_optimizer(params.tensors, lr, wd)
        opt.m = {k: v.copy() for k, v in ckpt.opt_m.items()}
        opt.v = {k: v.copy() for k, v in ckpt.opt_v.items()}
        opt.step = ckpt.opt_step
        start_epoch = ckpt.epoch
        global_step = ckpt.global_step
        log = _read_log(out_dir)[:start_epoch]
    else:
        params = init_params(dims, cfg.seed, dtype=np.float32)
        lr, wd = _resolve_rates(cfg, params)
        opt = init_optimizer(params.tensors, lr, wd)
        start_epoch = 0
        global_step = 0
        log = []

    last_path = out_dir / "ckpt_last.rack"
    for epoch in range(start_epoch, cfg.epochs):
        order = rng.stream(cfg.seed, "shuffle", epoch).permutation(n_train)
        beta = L.beta_schedule(epoch * steps_per_epoch, loss_cfg) \
            if cfg.mode == "stochastic" else 0.0
        sums = {"mse": 0.0, "kl": 0.0, "sparsity": 0.0, "ranking": 0.0}
        for b in range(steps_per_epoch):
            batch = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            params.zero_grad()
            for idx in batch:
                sample = train_samples[idx]
                with Tape() as tape:
                    pred = forward(sample.features, data.steps_for(sample),
                                   train_dags[idx], params, mode=cfg.mode,
                                   n_samples=cfg.train_samples,
                                   rng_key=rng.stream_key(cfg.seed, "train", epoch,
                                                          sample.sample_id))
                    loss_t, comps = _sample_loss(pred, sample.label, beta, cfg,
                                                 sample.features.values.shape[0],
                                                 ordered, len(batch))
                    backward(tape, loss_t)
                for name, val in comps.items():
                    if not math.isfinite(val):
                        raise NumericalFault(
                            f"{name} loss non-finite at epoch {epoch}, "
                            f"sample {sample.sample_id}")
                    sums[name] += val
            grads = {name: t.grad for name, t in params.tensors.items()
                     if t.grad is not None}
            lr_scale = min(1.0, global_step / warmup_steps) if warmup_steps > 0 else 1.0
            adam_decoupled_step(params.tensors, grads, opt, lr_scale=lr_scale)
            global_step += 1

        entry = {"epoch": epoch, "beta": beta}
        for name in sums:
            entry[name] = sums[name] / n_train
        if cfg.mode == "deterministic":
            entry["kl"] = None
            entry["total"] = entry["mse"] + cfg.gamma * (entry["sparsity"] + entry["ranking"])
        else:
            entry["total"] = (entry["mse"] + beta * entry["kl"]
                              + cfg.gamma * (entry["sparsity"] + entry["ranking"]))
        log.append(entry)
        if log_fn:
            log_fn(f"epoch {epoch:4d}  total {entry['total']:.6f}  mse {entry['mse']:.6f}")

        ckpt = Checkpoint(config=cfg, dims=dims, rubric=rubric_snapshot,
                          epoch=epoch + 1, global_step=global_step,
                          opt_step=opt.step,
                          params={k: t.data for k, t in params.tensors.items()},
                          opt_m=opt.m, opt_v=opt.v)
        save_checkpoint(ckpt, last_path)
        _write_log(out_dir, log)
        if stop_after_epoch is not None and epoch + 1 >= stop_after_epoch:
            return last_path, log

    final_path = out_dir / "ckpt_final.rack"
    final_path.write_bytes(last_path.read_bytes())
    return final_path, log


def _write_log(out_dir: Path, log: list[dict]) -> None:
    (out_dir / "train_log.json").write_text(json.dumps(log, indent=2) + "\n")


def _read_log(out_dir: Path) -> list[dict]:
    path = out_dir / "train_log.json"
    if not path.exists():
        return []
    return json.loads(path.read_text())


def _resolve_ckpt(ckpt) -> Checkpoint:
    return ckpt if isinstance(ckpt, Checkpoint) else load_checkpoint(ckpt)


def evaluate(ckpt, split: str, csv_path: str | Path | None = None
             ) -> tuple[M.MetricsReport, list[M.EvalRecord]]:
    """Forward every split sample in the checkpoint's mode and compute the
    full metrics protocol; writes the per-sample CSV next to the checkpoint's
    out_dir unless an explicit path is given."""
    ckpt = _resolve_ckpt(ckpt)
    cfg = ckpt.config
    if split not in ("train", "test"):
        raise ConfigError(f"split must be 'train' or 'test', got '{split}'")
    data = load_run_data(cfg)
    if rubric_to_dict(data.rubric) != ckpt.rubric:
        raise ConfigError("rubric spec mismatch between checkpoint and manifest")
    params = params_from_checkpoint(ckpt)

    records = []
    for sample, dag in zip(data.samples[split], data.dags[split]):
        pred = forward(sample.features, data.steps_for(sample), dag, params,
                       mode=cfg.mode, n_samples=cfg.n_inference_samples,
                       rng_key=rng.stream_key(cfg.seed, "eval", split, sample.sample_id))
        peaks = [int(i) + 1 for i in pred.attention.values.argmax(axis=1)]
        records.append(M.EvalRecord(
            sample_id=sample.sample_id, pred=pred.score, truth=sample.label,
            uncertainty=pred.uncertainty, peaks=peaks, intervals=sample.intervals,
            n_clips=sample.features.values.shape[0]))

    preds = [r.pred for r in records]
    truths = [r.truth for r in records]
    # labels are min-max normalized over the dataset, so the score range is [0, 1]
    report = M.MetricsReport(
        srcc=M.spearman_srcc(preds, truths),
        r_l2=M.relative_l2(preds, truths, 0.0, 1.0),
        n=len(records),
    )
    if cfg.mode == "stochastic" and len(records) >= 10:
        report.bin_mae = M.calibration_curve(records)
        report.kendall_tau = M.kendall_tau(report.bin_mae)
    report.pointing_accuracy = M.pointing_game_accuracy(records)

    if csv_path is None:
        csv_path = Path(cfg.out_dir) / f"eval_{split}.csv"
    Path(csv_path).parent.mkdir(parents=True, exist_ok=True)
    M.write_eval_csv(records, csv_path)
    return report, records


def predict(ckpt, sample_path: str | Path) -> dict:
    """Score one sample file; returns normalized and de-normalized scores,
    the uncertainty (stochastic mode), and the per-step attention centers."""
    ckpt = _resolve_ckpt(ckpt)
    cfg = ckpt.config
    manifest = load_manifest(cfg.manifest)
    rubric = load_rubric_spec(Path(cfg.rubric_spec) if cfg.rubric_spec
                              else manifest.rubric_spec)
    if rubric_to_dict(rubric) != ckpt.rubric:
        raise ConfigError("rubric spec mismatch between checkpoint and manifest")
    sample = load_sample(sample_path)
    known = rubric.type_ids()
    for t in sample.steps:
        if t not in known:
            raise ConfigError(f"sample step type {t} absent from rubric spec")
    dag = build_dag(rubric, sample.steps)
    steps = [StepDescriptor(t, step_descriptor(t, cfg.d_text, manifest.seed))
             for t in sample.steps]
    params = params_from_checkpoint(ckpt)
    pred = forward(sample.features, steps, dag, params, mode=cfg.mode,
                   n_samples=cfg.n_inference_samples,
                   rng_key=rng.stream_key(cfg.seed, "predict", sample.sample_id))
    denorm = pred.score * (manifest.label_max - manifest.label_min) + manifest.label_min
    centers = L.attention_centers(pred.attention.values)
    return {
        "sample_id": sample.sample_id,
        "score_normalized": pred.score,
        "score": denorm,
        "uncertainty": pred.uncertainty,
        "step_centers": [float(c) for c in centers],
    }


def export_calibration(ckpt, split: str, out_path: str | Path) -> float:
    """Write the 10-bin calibration CSV (tau in a header comment); returns tau."""
    ckpt = _resolve_ckpt(ckpt)
    if ckpt.config.mode != "stochastic":
        raise ConfigError("calibration export needs a stochastic checkpoint")
    _, records = evaluate(ckpt, split)
    bins = M.calibration_curve(records)
    tau = M.kendall_tau(bins)
    ordered = sorted(records, key=lambda r: (r.uncertainty, r.sample_id))
    q, r = divmod(len(ordered), 10)
    sizes = [q + 1] * r + [q] * (10 - r)
    lines = [f"# kendall_tau = {tau!r}", "bin_index,mean_uncertainty,mae"]
    start = 0
    for i, size in enumerate(sizes):
        chunk = ordered[start:start + size]
        start += size
        mean_unc = float(np.mean([c.uncertainty for c in chunk]))
        lines.append(f"{i + 1},{mean_unc!r},{bins[i]!r}")
    Path(out_path).write_text("\n".join(lines) + "\n")
    return tau


def read_calibration_csv(path: str | Path) -> tuple[float, list[float]]:
    """Parse the calibration CSV back into (header tau, bin MAEs)."""
    lines = Path(path).read_text().strip().split("\n")
    if len(lines) < 3 or not lines[0].startswith("# kendall_tau = "):
        raise ConfigError(f"malformed calibration CSV {path}")
    tau = float(lines[0].split("=", 1)[1])
    maes = [float(line.split(",")[2]) for line in lines[2:]]
    return tau, maes
