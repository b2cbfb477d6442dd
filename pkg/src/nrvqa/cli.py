"""Command-line entry points: gen-synthetic, train, eval, predict.

Exit codes: 0 success, 1 internal error, 2 user/input error.  Training
options come from an optional JSON config file (every field optional,
defaulting to the full-scale protocol) with CLI flags taking precedence.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from nrvqa.evaluate import (
    evaluate,
    predict,
    sweep,
    write_report_csv,
    write_sweep_csv,
)
from nrvqa.features import FormatError, ManifestError, load_manifest
from nrvqa.synthetic import SyntheticSpec, generate
from nrvqa.trainer import (
    CheckpointError,
    TrainConfig,
    load_checkpoint,
    save_checkpoint,
    train,
)

ABLATIONS = {
    "concat": "concat_no_attention",
    "no_distribution": "no_distribution",
    "no_pyramid": "no_pyramid",
}


class UserError(Exception):
    """Bad input from the operator; reported with exit code 2."""


def _load_config(args) -> TrainConfig:
    values = {}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise UserError(f"config file not found: {path}")
        values.update(json.loads(path.read_text(encoding="utf-8")))
    for key in ("lambda1", "lambda2", "learning_rate", "batch_size", "epochs",
                "refresh_period", "seed", "fusion_lambda"):
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    for name in args.ablation or []:
        if name not in ABLATIONS:
            raise UserError(
                f"unknown ablation {name!r}; choose from {sorted(ABLATIONS)}"
            )
        values[ABLATIONS[name]] = True
    try:
        return TrainConfig.from_dict(values)
    except (TypeError, ValueError) as err:
        raise UserError(f"bad configuration: {err}") from err


def cmd_gen_synthetic(args) -> int:
    spec = SyntheticSpec(
        count=args.count, t_min=args.t_min, t_max=args.t_max,
        signal_channels=args.signal_channels, noise_scale=args.noise_scale,
        seed=args.seed if args.seed is not None else 0,
    )
    train_path, holdout_path = generate(spec, args.out, holdout=args.holdout)
    print(f"wrote {train_path}")
    if holdout_path:
        print(f"wrote {holdout_path}")
    return 0


def cmd_train(args) -> int:
    config = _load_config(args)
    records = load_manifest(args.manifest)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / "train_log.csv"
    result = train(records, config, log_path=log_path)
    ckpt_path = out_dir / "checkpoint.gstc"
    save_checkpoint(ckpt_path, result.checkpoint)
    last = result.history[-1]
    print(f"wrote {ckpt_path}")
    print(f"wrote {log_path}")
    print(f"final epoch {last.epoch}: l_vid={last.l_vid:.6f} l_reg={last.l_reg:.6f}")
    return 0


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    records = load_manifest(args.manifest)
    lam = args.fusion_lambda if args.fusion_lambda is not None \
        else ckpt.config.fusion_lambda
    report = evaluate(ckpt, records, fusion_lambda=lam)
    for name, value in report.rows():
        print(f"{name},{value}")
    out_dir = Path(args.out) if args.out else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
        write_report_csv(out_dir / "report.csv", report)
        print(f"wrote {out_dir / 'report.csv'}")
    if args.sweep:
        reports = sweep(ckpt, records)
        for r in reports:
            print(f"lambda={r.fusion_lambda:.1f} srocc={r.srocc:.4f} "
                  f"krocc={r.krocc:.4f} plcc={r.plcc:.4f} rmse={r.rmse:.4f}")
        if out_dir:
            write_sweep_csv(out_dir / "sweep.csv", reports)
            print(f"wrote {out_dir / 'sweep.csv'}")
    return 0


def cmd_predict(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    score = predict(ckpt, args.features, fusion_lambda=args.fusion_lambda)
    print(f"{score:.6f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nrvqa",
        description="train and evaluate the feature-based video quality model",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-synthetic", help="make a synthetic dataset")
    gen.add_argument("--out", required=True)
    gen.add_argument("--count", type=int, default=250)
    gen.add_argument("--holdout", type=int, default=0)
    gen.add_argument("--t-min", type=int, default=8)
    gen.add_argument("--t-max", type=int, default=64)
    gen.add_argument("--signal-channels", type=int, default=64)
    gen.add_argument("--noise-scale", type=float, default=1.0)
    gen.add_argument("--seed", type=int, default=None)
    gen.set_defaults(func=cmd_gen_synthetic)

    tr = sub.add_parser("train", help="train from a manifest")
    tr.add_argument("--manifest", required=True)
    tr.add_argument("--out", required=True)
    tr.add_argument("--config", help="JSON file of training options")
    tr.add_argument("--seed", type=int, default=None)
    tr.add_argument("--epochs", type=int, default=None)
    tr.add_argument("--batch-size", type=int, dest="batch_size", default=None)
    tr.add_argument("--learning-rate", type=float, dest="learning_rate", default=None)
    tr.add_argument("--refresh-period", type=int, dest="refresh_period", default=None)
    tr.add_argument("--lambda1", type=float, default=None)
    tr.add_argument("--lambda2", type=float, default=None)
    tr.add_argument("--fusion-lambda", type=float, dest="fusion_lambda", default=None)
    tr.add_argument("--ablation", action="append",
                    help=f"one of {sorted(ABLATIONS)}; repeatable")
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--manifest", required=True)
    ev.add_argument("--fusion-lambda", type=float, dest="fusion_lambda", default=None)
    ev.add_argument("--sweep", action="store_true",
                    help="also report the 0.0-1.8 fusion weight grid")
    ev.add_argument("--out", help="directory for report.csv (and sweep.csv)")
    ev.set_defaults(func=cmd_eval)

    pr = sub.add_parser("predict", help="score one feature file")
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("features", help="path to a feature file")
    pr.add_argument("--fusion-lambda", type=float, dest="fusion_lambda", default=None)
    pr.set_defaults(func=cmd_predict)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UserError, ManifestError, FormatError, CheckpointError,
            FileNotFoundError, json.JSONDecodeError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except Exception as err:  # noqa: BLE001 - last-resort diagnostics
        print(f"internal error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
