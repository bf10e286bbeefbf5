"""Evaluation protocol: rank correlation, relative L2, the 10-bin
uncertainty-vs-error calibration curve with its Kendall tau, and the
attention Pointing-game localization accuracy.

Also owns the per-sample evaluation CSV (comma separated, header row, "."
decimals, LF endings) that the CLI writes and re-reads.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError, DataFormatError, UndefinedCorrelationError


@dataclass
class EvalRecord:
    sample_id: str
    pred: float
    truth: float
    uncertainty: float | None = None
    peaks: list[int] | None = None  # 1-indexed clip of each step's attention peak
    intervals: list[tuple[int, int]] | None = None  # 1-indexed inclusive bounds
    n_clips: int | None = None


@dataclass
class MetricsReport:
    srcc: float
    r_l2: float
    n: int
    bin_mae: list[float] | None = None
    kendall_tau: float | None = None
    pointing_accuracy: float | None = None

    def to_dict(self) -> dict:
        return {
            "srcc": self.srcc,
            "r_l2": self.r_l2,
            "n": self.n,
            "bin_mae": self.bin_mae,
            "kendall_tau": self.kendall_tau,
            "pointing_accuracy": self.pointing_accuracy,
        }


def _average_ranks(x: np.ndarray) -> np.ndarray:
    """Ranks 1..n with ties receiving the average of their positions."""
    order = np.argsort(x, kind="stable")
    ranks = np.empty(x.size, dtype=np.float64)
    i = 0
    xs = x[order]
    while i < x.size:
        j = i
        while j + 1 < x.size and xs[j + 1] == xs[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman_srcc(pred, truth) -> float:
    """Pearson correlation of average ranks."""
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    truth = np.asarray(truth, dtype=np.float64).reshape(-1)
    if pred.size != truth.size:
        raise ContractError("pred and truth lengths differ")
    if pred.size < 2:
        raise ContractError("need at least two samples")
    if np.all(pred == pred[0]) or np.all(truth == truth[0]):
        raise UndefinedCorrelationError("rank correlation undefined for a constant vector")
    rp = _average_ranks(pred)
    rt = _average_ranks(truth)
    rp -= rp.mean()
    rt -= rt.mean()
    return float((rp @ rt) / np.sqrt((rp @ rp) * (rt @ rt)))


def relative_l2(pred, truth, y_min: float, y_max: float) -> float:
    """(100/N) sum((|pred - truth| / (y_max - y_min))^2)."""
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    truth = np.asarray(truth, dtype=np.float64).reshape(-1)
    if pred.size != truth.size or pred.size == 0:
        raise ContractError("pred and truth must be equal-length and non-empty")
    if not y_max > y_min:
        raise ContractError("degenerate score range")
    return float(100.0 * np.mean(((pred - truth) / (y_max - y_min)) ** 2))


def calibration_curve(records: list[EvalRecord], n_bins: int = 10) -> list[float]:
    """MAE per ascending-uncertainty bin.

    Samples are sorted by (uncertainty, sample id), split into `n_bins`
    contiguous near-equal bins with any remainder spread over the first bins.
    """
    if len(records) < n_bins:
        raise ContractError(f"need at least {n_bins} records")
    if any(r.uncertainty is None for r in records):
        raise ContractError("all records need an uncertainty")
    ordered = sorted(records, key=lambda r: (r.uncertainty, r.sample_id))
    q, r = divmod(len(ordered), n_bins)
    sizes = [q + 1] * r + [q] * (n_bins - r)
    maes = []
    start = 0
    for size in sizes:
        chunk = ordered[start:start + size]
        start += size
        maes.append(float(np.mean([abs(c.pred - c.truth) for c in chunk])))
    return maes


def kendall_tau(bin_mae) -> float:
    """Tau-a between bin index and bin MAE: (concordant - discordant) pairs
    over all pairs; with 10 bins every value is a multiple of 1/45."""
    mae = np.asarray(bin_mae, dtype=np.float64).reshape(-1)
    m = mae.size
    if m < 2:
        raise ContractError("need at least two bins")
    net = 0
    for i in range(m - 1):
        for j in range(i + 1, m):
            if mae[j] > mae[i]:
                net += 1
            elif mae[j] < mae[i]:
                net -= 1
    return float(net / (m * (m - 1) / 2))


def pointing_game_accuracy(records: list[EvalRecord]) -> float:
    """Fraction of (sample, step) pairs whose attention peak lies inside the
    annotated interval, bounds inclusive."""
    hits = 0
    total = 0
    for rec in records:
        if rec.peaks is None or rec.intervals is None:
            raise ContractError(f"record '{rec.sample_id}' lacks peaks or intervals")
        if len(rec.peaks) != len(rec.intervals):
            raise ContractError(f"record '{rec.sample_id}' peaks/intervals length mismatch")
        for peak, (start, end) in zip(rec.peaks, rec.intervals):
            if start < 1 or (rec.n_clips is not None and end > rec.n_clips) or start > end:
                raise DataFormatError(
                    f"interval ({start}, {end}) outside [1, {rec.n_clips}] "
                    f"in record '{rec.sample_id}'")
            total += 1
            if start <= peak <= end:
                hits += 1
    if total == 0:
        raise ContractError("no (sample, step) pairs")
    return hits / total


def pointing_chance_level(records: list[EvalRecord]) -> float:
    """Expected accuracy of a uniform random peak guess for this layout:
    the mean of interval-length / n_clips over all (sample, step) pairs."""
    lens = []
    for rec in records:
        if rec.intervals is None or rec.n_clips is None:
            raise ContractError(f"record '{rec.sample_id}' lacks intervals or n_clips")
        for start, end in rec.intervals:
            lens.append((end - start + 1) / rec.n_clips)
    if not lens:
        raise ContractError("no intervals")
    return float(np.mean(lens))


# ---------------------------------------------------------------------------
# evaluation CSV
# ---------------------------------------------------------------------------

_CSV_FIELDS = ["sample_id", "pred", "truth", "uncertainty", "n_clips", "peaks", "intervals"]


def write_eval_csv(records: list[EvalRecord], path: str | Path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(_CSV_FIELDS)
        for r in records:
            writer.writerow([
                r.sample_id,
                repr(r.pred),
                repr(r.truth),
                "" if r.uncertainty is None else repr(r.uncertainty),
                "" if r.n_clips is None else r.n_clips,
                "" if r.peaks is None else " ".join(str(p) for p in r.peaks),
                "" if r.intervals is None else " ".join(f"{a}:{b}" for a, b in r.intervals),
            ])


def read_eval_csv(path: str | Path) -> list[EvalRecord]:
    records = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != _CSV_FIELDS:
            raise DataFormatError(f"unexpected eval CSV header in {path}")
        for row in reader:
            if len(row) != len(_CSV_FIELDS):
                raise DataFormatError(f"malformed eval CSV row in {path}")
            sid, pred, truth, unc, n_clips, peaks, intervals = row
            records.append(EvalRecord(
                sample_id=sid,
                pred=float(pred),
                truth=float(truth),
                uncertainty=float(unc) if unc else None,
                n_clips=int(n_clips) if n_clips else None,
                peaks=[int(p) for p in peaks.split()] if peaks else None,
                intervals=[(int(a), int(b)) for a, b in
                           (pair.split(":") for pair in intervals.split())] if intervals else None,
            ))
    return records
