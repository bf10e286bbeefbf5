import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as hst

from raqa.errors import ContractError, DataFormatError, UndefinedCorrelationError
from raqa.metrics import (EvalRecord, calibration_curve, kendall_tau,
                          pointing_chance_level, pointing_game_accuracy,
                          read_eval_csv, relative_l2, spearman_srcc,
                          write_eval_csv)


def _brute_force_spearman(pred, truth):
    """Independent oracle: explicit average ranks then textbook Pearson."""
    def ranks(x):
        x = list(x)
        out = [0.0] * len(x)
        for i, v in enumerate(x):
            less = sum(1 for u in x if u < v)
            equal = sum(1 for u in x if u == v)
            out[i] = less + (equal + 1) / 2.0
        return out

    rp, rt = ranks(pred), ranks(truth)
    n = len(rp)
    mp, mt = sum(rp) / n, sum(rt) / n
    num = sum((a - mp) * (b - mt) for a, b in zip(rp, rt))
    den = (sum((a - mp) ** 2 for a in rp) * sum((b - mt) ** 2 for b in rt)) ** 0.5
    return num / den


def _brute_force_tau(xs, ys):
    net, total = 0, 0
    n = len(xs)
    for i in range(n - 1):
        for j in range(i + 1, n):
            total += 1
            a = (xs[i] - xs[j]) * (ys[i] - ys[j])
            if a > 0:
                net += 1
            elif a < 0:
                net -= 1
    return net / total


def test_spearman_examples():
    assert spearman_srcc([1, 2, 3, 4], [10, 20, 30, 40]) == pytest.approx(1.0)
    assert spearman_srcc([1, 2, 3, 4], [4, 3, 2, 1]) == pytest.approx(-1.0)
    assert spearman_srcc([1, 2, 3], [3, 1, 2]) == pytest.approx(-0.5)


def test_spearman_ties_get_average_ranks():
    # ties in pred: ranks (1.5, 1.5, 3); textbook value computed by the oracle
    pred = [1.0, 1.0, 2.0]
    truth = [1.0, 2.0, 3.0]
    assert spearman_srcc(pred, truth) == pytest.approx(_brute_force_spearman(pred, truth))


def test_spearman_errors():
    with pytest.raises(UndefinedCorrelationError):
        spearman_srcc([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])
    with pytest.raises(ContractError):
        spearman_srcc([1.0], [1.0])
    with pytest.raises(ContractError):
        spearman_srcc([1.0, 2.0], [1.0])


def test_spearman_and_tau_match_brute_force_oracles():
    rng = np.random.default_rng(99)
    for trial in range(200):
        n = int(rng.integers(2, 101))
        pred = rng.standard_normal(n)
        truth = rng.standard_normal(n)
        if rng.random() < 0.3:  # inject ties
            pred = np.round(pred, 1)
            truth = np.round(truth, 1)
        if np.all(pred == pred[0]) or np.all(truth == truth[0]):
            continue
        assert spearman_srcc(pred, truth) == pytest.approx(
            _brute_force_spearman(pred, truth), abs=1e-12)
    for trial in range(200):
        m = int(rng.integers(2, 12))
        mae = rng.standard_normal(m)
        assert kendall_tau(mae) == pytest.approx(
            _brute_force_tau(list(range(m)), list(mae)), abs=1e-12)


def test_spearman_matches_scipy():
    scipy_stats = pytest.importorskip("scipy.stats")
    rng = np.random.default_rng(5)
    for _ in range(50):
        n = int(rng.integers(3, 60))
        pred = np.round(rng.standard_normal(n), 1)
        truth = np.round(rng.standard_normal(n), 1)
        if np.all(pred == pred[0]) or np.all(truth == truth[0]):
            continue
        ref = scipy_stats.spearmanr(pred, truth).statistic
        assert spearman_srcc(pred, truth) == pytest.approx(ref, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(hst.lists(hst.integers(-1000, 1000), min_size=3, max_size=30, unique=True),
       hst.sampled_from(["exp", "cube", "affine"]))
def test_spearman_invariant_under_monotone_transforms(values, kind):
    # integer inputs keep the transforms injective at float precision
    rng = np.random.default_rng(42)
    truth = rng.standard_normal(len(values))
    x = np.asarray(values, dtype=np.float64)
    fx = {"exp": np.exp(x / 50.0), "cube": x ** 3, "affine": 3.0 * x + 7.0}[kind]
    assert spearman_srcc(fx, truth) == pytest.approx(spearman_srcc(x, truth), abs=1e-12)


def test_relative_l2_examples():
    assert relative_l2([1.0, 2.0], [1.0, 2.0], 0.0, 10.0) == 0.0
    assert relative_l2([1.0, 2.0, 3.0], [2.0, 3.0, 4.0], 0.0, 10.0) == pytest.approx(1.0)
    base = relative_l2([1.0, 4.0], [2.0, 3.0], 0.0, 10.0)
    scaled = relative_l2([12.0, 18.0], [14.0, 16.0], 10.0, 30.0)  # affine x -> 2x + 10
    assert scaled == pytest.approx(base)
    with pytest.raises(ContractError):
        relative_l2([1.0], [1.0], 5.0, 5.0)


def _records(errors, uncertainties=None):
    recs = []
    for i, e in enumerate(errors):
        unc = None if uncertainties is None else uncertainties[i]
        recs.append(EvalRecord(sample_id=f"s{i:03d}", pred=float(e), truth=0.0,
                               uncertainty=unc))
    return recs


def test_calibration_constant_error():
    recs = _records([0.25] * 20, uncertainties=list(range(20)))
    assert calibration_curve(recs) == pytest.approx([0.25] * 10)


def test_calibration_ten_samples_identity():
    # errors equal their rank once sorted by uncertainty
    errors = [3, 1, 4, 10, 2, 5, 9, 6, 8, 7]
    unc = [e / 100.0 for e in errors]
    recs = _records(errors, unc)
    assert calibration_curve(recs) == pytest.approx(list(range(1, 11)))


def test_calibration_ties_broken_by_sample_id():
    errors = list(range(1, 11))
    recs = _records(errors, uncertainties=[0.5] * 10)
    # all uncertainties tie: order falls back to sample id, which follows index
    assert calibration_curve(recs) == pytest.approx(list(range(1, 11)))


def test_calibration_remainder_spread_over_first_bins():
    recs = _records(list(range(23)), uncertainties=list(range(23)))
    q, r = divmod(23, 10)
    # first 3 bins get 3 samples, the rest 2
    assert calibration_curve(recs)[0] == pytest.approx(np.mean([0, 1, 2]))
    assert calibration_curve(recs)[-1] == pytest.approx(np.mean([21, 22]))


def test_calibration_contract_errors():
    with pytest.raises(ContractError):
        calibration_curve(_records(range(5), uncertainties=range(5)))
    recs = _records(range(12), uncertainties=range(12))
    recs[3].uncertainty = None
    with pytest.raises(ContractError):
        calibration_curve(recs)


def test_kendall_tau_examples():
    assert kendall_tau(list(range(1, 11))) == pytest.approx(1.0)
    assert kendall_tau(list(range(10, 0, -1))) == pytest.approx(-1.0)
    assert kendall_tau([1.0, 1.0]) == 0.0
    with pytest.raises(ContractError):
        kendall_tau([1.0])


def test_paper_granularity_29_45():
    # 7 of 9 adjacent-monotone bins: constructed so C - D = 29
    mae = [1, 2, 3, 4, 5, 6, 7, 8, 0, 9]
    net = 0
    for i in range(9):
        for j in range(i + 1, 10):
            net += 1 if mae[j] > mae[i] else -1 if mae[j] < mae[i] else 0
    assert net == 29
    assert kendall_tau(mae) == pytest.approx(29.0 / 45.0)
    assert kendall_tau(mae) == pytest.approx(0.6444, abs=5e-5)


@settings(max_examples=100, deadline=None)
@given(hst.lists(hst.floats(0, 10), min_size=10, max_size=10))
def test_tau_is_multiple_of_one_45th(mae):
    tau = kendall_tau(mae)
    assert abs(tau * 45.0 - round(tau * 45.0)) < 1e-9


@settings(max_examples=40, deadline=None)
@given(hst.integers(10, 60), hst.integers(0, 9999))
def test_calibration_tau_one_when_error_tracks_uncertainty(n, seed):
    rng = np.random.default_rng(seed)
    unc = np.sort(rng.uniform(0, 1, n))
    unc += np.arange(n) * 1e-6  # make the order strict
    errors = unc * 3.0 + 0.1  # strictly increasing in uncertainty
    recs = [EvalRecord(f"s{i:04d}", float(errors[i]), 0.0, float(unc[i]))
            for i in range(n)]
    assert kendall_tau(calibration_curve(recs)) == pytest.approx(1.0)


def test_pointing_game_hits_and_misses():
    rec_hit = EvalRecord("a", 0, 0, peaks=[3], intervals=[(2, 5)], n_clips=10)
    rec_edge = EvalRecord("b", 0, 0, peaks=[5], intervals=[(2, 5)], n_clips=10)
    rec_miss = EvalRecord("c", 0, 0, peaks=[6], intervals=[(2, 5)], n_clips=10)
    assert pointing_game_accuracy([rec_hit]) == 1.0
    assert pointing_game_accuracy([rec_edge]) == 1.0  # inclusive bounds
    assert pointing_game_accuracy([rec_miss]) == 0.0
    assert pointing_game_accuracy([rec_hit, rec_edge, rec_miss]) == pytest.approx(2 / 3)


def test_pointing_game_errors():
    with pytest.raises(ContractError):
        pointing_game_accuracy([EvalRecord("a", 0, 0, peaks=[1], intervals=None)])
    bad = EvalRecord("a", 0, 0, peaks=[3], intervals=[(0, 5)], n_clips=10)
    with pytest.raises(DataFormatError):
        pointing_game_accuracy([bad])
    bad2 = EvalRecord("a", 0, 0, peaks=[3], intervals=[(2, 11)], n_clips=10)
    with pytest.raises(DataFormatError):
        pointing_game_accuracy([bad2])


def test_pointing_chance_level():
    recs = [EvalRecord("a", 0, 0, intervals=[(1, 5), (6, 10)], n_clips=10),
            EvalRecord("b", 0, 0, intervals=[(1, 2), (3, 10)], n_clips=10)]
    assert pointing_chance_level(recs) == pytest.approx(np.mean([0.5, 0.5, 0.2, 0.8]))


def test_eval_csv_round_trip(tmp_path):
    recs = [
        EvalRecord("s1", 0.25, 0.5, uncertainty=1.5, peaks=[1, 7],
                   intervals=[(1, 3), (4, 9)], n_clips=9),
        EvalRecord("s2", 0.125, 0.625, uncertainty=None, peaks=None,
                   intervals=None, n_clips=None),
    ]
    path = tmp_path / "eval.csv"
    write_eval_csv(recs, path)
    text = path.read_text()
    assert "\r" not in text  # LF endings
    back = read_eval_csv(path)
    assert back == recs
    with pytest.raises(DataFormatError):
        bad = tmp_path / "bad.csv"
        bad.write_text("nope\n1,2\n")
        read_eval_csv(bad)
