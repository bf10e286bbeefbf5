"""Command-line entry points.

Exit codes: 0 success, 2 config error (also argparse usage errors),
3 data/format error, 4 numerical fault.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import engine
from .config import load_run_config
from .data import generate_dataset, load_generator_config
from .errors import ConfigError, DataFormatError, NumericalFault


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="raqa",
        description="Rubric-graph action quality scoring with calibrated uncertainty.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p.add_argument("--config", required=True, help="generator config JSON")

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", required=True, help="run config JSON")
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.add_argument("--stop-after-epoch", type=int, default=None,
                   help="stop early after this many epochs (checkpoint kept)")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--split", required=True, choices=["train", "test"])

    p = sub.add_parser("predict", help="score one sample file")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--sample", required=True)

    p = sub.add_parser("calibration", help="export the 10-bin calibration CSV")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--split", default="test", choices=["train", "test"])
    p.add_argument("--out", required=True)

    p = sub.add_parser("accept", help="run the acceptance suite")
    p.add_argument("--suite", default="fast", choices=["fast", "full"])
    p.add_argument("--out", default=None, help="write the JSON report here")
    p.add_argument("--workdir", default=None,
                   help="scratch/cache directory for the training criteria")
    return parser


def _run(args) -> int:
    if args.command == "gen-data":
        cfg, out_dir = load_generator_config(args.config)
        manifest = generate_dataset(cfg, out_dir)
        print(manifest)
    elif args.command == "train":
        cfg = load_run_config(args.config)
        path, _ = engine.train(cfg, stop_after_epoch=args.stop_after_epoch,
                               resume_from=args.resume, log_fn=print)
        print(path)
    elif args.command == "eval":
        report, _ = engine.evaluate(args.ckpt, args.split)
        print(json.dumps(report.to_dict(), indent=2))
    elif args.command == "predict":
        result = engine.predict(args.ckpt, args.sample)
        print(f"sample:            {result['sample_id']}")
        print(f"score (normalized): {result['score_normalized']:.6f}")
        print(f"score:              {result['score']:.6f}")
        if result["uncertainty"] is not None:
            print(f"uncertainty:        {result['uncertainty']:.6f}")
        centers = " ".join(f"{c:.2f}" for c in result["step_centers"])
        print(f"step centers:       {centers}")
    elif args.command == "calibration":
        tau = engine.export_calibration(args.ckpt, args.split, args.out)
        print(f"kendall_tau = {tau:.4f} -> {args.out}")
    elif args.command == "accept":
        from .acceptance import run_acceptance
        report = run_acceptance(args.suite, out_path=args.out, workdir=args.workdir)
        return 0 if all(c["passed"] for c in report["criteria"]) else 1
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _run(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except DataFormatError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except NumericalFault as e:
        print(f"numerical fault: {e}", file=sys.stderr)
        return 4


def accept_main(argv=None) -> int:
    """`raqa-accept` console script: the accept subcommand as its own tool."""
    return main(["accept", *(sys.argv[1:] if argv is None else argv)])


if __name__ == "__main__":
    sys.exit(main())
