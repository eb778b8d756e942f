"""``lungmap`` command line.

Exit codes: 0 success, 1 validation error (bad config, tensor header or
checkpoint), 2 runtime failure (including records that failed to generate).
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

from ..errors import BadTensorHeader, CheckpointIncompatible, ConfigError, LungmapError
from . import commands
from .config import PipelineConfig, preset

VALIDATION = (ConfigError, BadTensorHeader, CheckpointIncompatible)


def parse_range(text: str) -> range:
    """``"k0..k1"`` (inclusive) or a single index."""
    try:
        if ".." in text:
            a, b = text.split("..", 1)
            r = range(int(a), int(b) + 1)
        else:
            r = range(int(text), int(text) + 1)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected k0..k1, got {text!r}") from None
    if r.start < 0 or len(r) == 0:
        raise argparse.ArgumentTypeError(f"empty or negative range {text!r}")
    return r


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="pipeline config JSON")
    common.add_argument("--preset", default=None, choices=["paper", "desk", "tiny"],
                        help="built-in config when --config is absent (default desk)")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--workers", type=int, default=None, help="worker processes (fallback: PWT_WORKERS)")
    common.add_argument("--scale", type=float, default=None, help="override the desk scale factor")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="lungmap", description="Lung aeration simulation and reconstruction pipeline")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", parents=[common], help="simulate phantom/RF records and write a manifest")
    g.add_argument("--split", default="train", choices=["train", "val", "eval", "finetune"])
    g.add_argument("-n", type=int, default=None, help="number of records (default: config split size)")
    g.add_argument("--records", type=parse_range, default=None, help="record index range k0..k1")
    g.add_argument("--events", type=parse_range, default=None, help="transmit event range k0..k1")
    g.add_argument("--phantom-only", action="store_true", help="skip the acoustic simulation")

    b = sub.add_parser("beamform", parents=[common], help="B-mode image from an RF tensor file")
    b.add_argument("rf")
    b.add_argument("--factor", type=int, default=4)

    t = sub.add_parser("train", parents=[common], help="pretrain the reconstruction network")
    t.add_argument("manifest")
    t.add_argument("--val", default=None)
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("--seg-steps", type=int, default=0, help="also train the segmentation network")

    f = sub.add_parser("finetune", parents=[common], help="fine-tune with the aeration loss only")
    f.add_argument("manifest")
    f.add_argument("--checkpoint", required=True)
    f.add_argument("--epochs", type=int, default=None)

    i = sub.add_parser("infer", parents=[common], help="predict aeration maps for a manifest")
    i.add_argument("manifest")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--calibration", default=None)

    e = sub.add_parser("evaluate", parents=[common], help="metrics report from predictions.json")
    e.add_argument("predictions")

    c = sub.add_parser("calibrate", parents=[common], help="fit Platt scaling on a validation manifest")
    c.add_argument("manifest")
    c.add_argument("--checkpoint", required=True)

    sub.add_parser("selftest", parents=[common], help="quick consistency checks")
    return p


def load_config(args) -> PipelineConfig:
    if args.config:
        cfg = PipelineConfig.from_json(args.config)
        if args.scale is not None:
            cfg.scale = args.scale
    else:
        cfg = preset(args.preset or "desk", args.scale)
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg.validate()


def workers(args) -> int:
    if args.workers is not None:
        return max(1, args.workers)
    try:
        return max(1, int(os.environ.get("PWT_WORKERS", "1")))
    except ValueError:
        raise ConfigError("config-invalid: PWT_WORKERS must be an integer") from None


def run(args) -> int:
    cmd = args.command
    if cmd == "selftest":
        results = commands.cmd_selftest()
        for name, ok, detail in results:
            print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        return 0 if all(ok for _, ok, _ in results) else 2
    if cmd == "beamform":
        commands.cmd_beamform(args.rf, args.out, args.factor)
        return 0
    if cmd == "evaluate":
        rep = commands.cmd_evaluate(args.predictions, args.out)
        agg = rep.aggregates()
        print(f"n={agg['n']} aeration_error={agg['aeration_error_mean']:.4f} nmse={agg['nmse_mean']:.4f}")
        return 0
    cfg = load_config(args)
    if cmd == "generate":
        n = cfg.splits.get(args.split, 0) if args.n is None else args.n
        man = commands.cmd_generate(cfg, args.split, n, args.out, args.records, args.events,
                                    workers(args), args.phantom_only)
        return 2 if man.failed else 0
    if cmd == "train":
        commands.cmd_train(cfg, args.manifest, args.out, args.val, args.epochs, args.seg_steps, args.seed)
    elif cmd == "finetune":
        commands.cmd_finetune(cfg, args.checkpoint, args.manifest, args.out, args.epochs, args.seed)
    elif cmd == "infer":
        commands.cmd_infer(args.checkpoint, args.manifest, args.out, args.calibration)
    elif cmd == "calibrate":
        res = commands.cmd_calibrate(args.checkpoint, args.manifest, args.out)
        print(f"a={res['a']:.4f} b={res['b']:.4f} ece {res['ece_before']:.4f} -> {res['ece_after']:.4f}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except VALIDATION as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (LungmapError, OSError, RuntimeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
