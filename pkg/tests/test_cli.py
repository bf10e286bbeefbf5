import json
from pathlib import Path

import pytest

from raqa.cli import main
from raqa.data import GeneratorConfig, generate_dataset

GEN = dict(n_train=8, n_test=10, t_clips=10, d_feat=8, d_text=6, n_step_types=5,
           k_min=1, k_max=3, eta_min=0.05, eta_max=0.3, seed=3)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    gen_cfg = root / "gen.json"
    gen_cfg.write_text(json.dumps({**GEN, "out_dir": str(root / "ds")}))
    assert main(["gen-data", "--config", str(gen_cfg)]) == 0
    run_cfg = root / "run.json"
    run_cfg.write_text(json.dumps({
        "manifest": str(root / "ds" / "manifest.json"),
        "out_dir": str(root / "run"),
        "d_latent": 16, "n_heads": 2, "d_text": 6, "epochs": 2,
        "batch_size": 4, "warmup_epochs": 1, "n_inference_samples": 5,
    }))
    assert main(["train", "--config", str(run_cfg)]) == 0
    return root


def test_gen_data_created_files(workspace):
    assert (workspace / "ds" / "manifest.json").exists()
    assert (workspace / "ds" / "rubric.json").exists()
    assert len(list((workspace / "ds").glob("*.raqa"))) == 18


def test_train_wrote_checkpoint(workspace):
    assert (workspace / "run" / "ckpt_final.rack").exists()
    assert (workspace / "run" / "train_log.json").exists()


def test_eval_prints_report(workspace, capsys):
    code = main(["eval", "--ckpt", str(workspace / "run" / "ckpt_final.rack"),
                 "--split", "test"])
    assert code == 0
    report = json.loads(capsys.readouterr().out)
    assert {"srcc", "r_l2", "n", "kendall_tau", "pointing_accuracy"} <= set(report)
    assert (workspace / "run" / "eval_test.csv").exists()


def test_predict_prints_scores(workspace, capsys):
    sample = sorted((workspace / "ds").glob("test_*.raqa"))[0]
    code = main(["predict", "--ckpt", str(workspace / "run" / "ckpt_final.rack"),
                 "--sample", str(sample)])
    assert code == 0
    out = capsys.readouterr().out
    assert "score (normalized)" in out
    assert "uncertainty" in out
    assert "step centers" in out


def test_calibration_writes_csv(workspace, capsys):
    out_csv = workspace / "cal.csv"
    code = main(["calibration", "--ckpt", str(workspace / "run" / "ckpt_final.rack"),
                 "--split", "test", "--out", str(out_csv)])
    assert code == 0
    lines = out_csv.read_text().strip().split("\n")
    assert lines[0].startswith("# kendall_tau = ")
    assert lines[1] == "bin_index,mean_uncertainty,mae"
    assert len(lines) == 12


def test_config_error_exit_code(workspace, tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"manifest": "x", "out_dir": "y", "bogus": 1}))
    assert main(["train", "--config", str(bad)]) == 2
    assert "config error" in capsys.readouterr().err


def test_data_error_exit_code(workspace, tmp_path, capsys):
    corrupt = tmp_path / "corrupt.raqa"
    corrupt.write_bytes(b"NOPE" + b"\x00" * 40)
    code = main(["predict", "--ckpt", str(workspace / "run" / "ckpt_final.rack"),
                 "--sample", str(corrupt)])
    assert code == 3
    assert "data error" in capsys.readouterr().err


def test_unsupported_calibration_mode_exit_code(workspace, tmp_path, capsys):
    run_cfg = tmp_path / "det.json"
    run_cfg.write_text(json.dumps({
        "manifest": str(workspace / "ds" / "manifest.json"),
        "out_dir": str(tmp_path / "det_run"),
        "mode": "deterministic",
        "d_latent": 16, "n_heads": 2, "d_text": 6, "epochs": 1,
        "batch_size": 4, "warmup_epochs": 0,
    }))
    assert main(["train", "--config", str(run_cfg)]) == 0
    code = main(["calibration", "--ckpt", str(tmp_path / "det_run" / "ckpt_final.rack"),
                 "--split", "test", "--out", str(tmp_path / "cal.csv")])
    assert code == 2


def test_train_resume_flag(workspace, tmp_path):
    run_cfg = tmp_path / "resume.json"
    out_dir = tmp_path / "resume_run"
    run_cfg.write_text(json.dumps({
        "manifest": str(workspace / "ds" / "manifest.json"),
        "out_dir": str(out_dir),
        "d_latent": 16, "n_heads": 2, "d_text": 6, "epochs": 2,
        "batch_size": 4, "warmup_epochs": 1,
    }))
    assert main(["train", "--config", str(run_cfg), "--stop-after-epoch", "1"]) == 0
    ckpt = out_dir / "ckpt_last.rack"
    assert main(["train", "--config", str(run_cfg), "--resume", str(ckpt)]) == 0
    assert (out_dir / "ckpt_final.rack").exists()
