"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 divergence.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import errors

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4

SYNTH_KINDS = ("splice", "copymove", "inpaint", "selfblend", "authentic")


def _split(values: list[str]) -> list[str]:
    return [v for item in values for v in item.split(",") if v]


def cmd_synth(args) -> int:
    from .datakit import generate, save_samples

    kinds = _split(args.kind)
    for k in kinds:
        if k not in SYNTH_KINDS:
            raise errors.ConfigurationError(f"unknown kind {k!r}; choose from {SYNTH_KINDS}")
    samples = [generate(kinds[i % len(kinds)], args.seed + i, args.size) for i in range(args.n)]
    rows = save_samples(samples, args.out)
    print(json.dumps({"manifest": str(Path(args.out) / "manifest.jsonl"), "samples": len(rows)}))
    return EXIT_OK


def cmd_train(args) -> int:
    from .harness.config import RunConfig
    from .harness.train import train

    cfg = RunConfig.from_file(args.config)
    if args.out:
        cfg.data.out_dir = args.out
    result = train(cfg, save=True)
    out = Path(cfg.data.out_dir)
    (out / "history.json").write_text(json.dumps({"steps": result.history, "validations": result.validations}, indent=1))
    print(json.dumps({"best": str(out / "best.ckpt"), "last": str(out / "last.ckpt"), "steps": result.last.step,
                      "best_metrics": result.checkpoint.metrics}))
    return EXIT_OK


def cmd_eval(args) -> int:
    from .harness.evaluate import evaluate

    report = evaluate(args.ckpt, args.manifest, args.include_authentic_pixels)
    text = report.to_json()
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    print(json.dumps(report.avg, sort_keys=True))
    return EXIT_OK


def cmd_infer(args) -> int:
    from .harness.infer import infer

    print(json.dumps(infer(args.ckpt, args.image, args.out), sort_keys=True))
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .datakit import load_samples
    from .harness.checkpoint import load_checkpoint
    from .harness.evaluate import model_detector
    from .harness.sweep import robustness_sweep

    kinds = _split(args.kinds)
    try:
        severities = [int(s) for s in _split(args.severities)]
    except ValueError as exc:
        raise errors.ConfigurationError(f"severities must be integers: {exc}") from exc
    model = load_checkpoint(args.ckpt).build()
    rows = robustness_sweep(model_detector(model), load_samples(args.manifest), kinds, severities, args.out, args.seed)
    for r in rows:
        print(f"{r['kind']},{r['severity']},{r['auc']}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tamperloc", description="Manipulation detection and localization toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic manipulation dataset")
    s.add_argument("--kind", action="append", required=True, help=f"one or more of {', '.join(SYNTH_KINDS)}")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train from a JSON run config")
    t.add_argument("--config", required=True)
    t.add_argument("--out", help="override data.out_dir")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--manifest", required=True)
    e.add_argument("--include-authentic-pixels", action="store_true")
    e.add_argument("--out", help="write the full metrics report JSON here")
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("infer", help="detect and localize on one image")
    i.add_argument("--ckpt", required=True)
    i.add_argument("--image", required=True)
    i.add_argument("--out", required=True)
    i.set_defaults(func=cmd_infer)

    w = sub.add_parser("perturb-sweep", help="pixel-AUC robustness curves")
    w.add_argument("--ckpt", required=True)
    w.add_argument("--manifest", required=True)
    w.add_argument("--kinds", action="append", required=True)
    w.add_argument("--severities", action="append", default=None)
    w.add_argument("--seed", type=int, default=0)
    w.add_argument("--out")
    w.set_defaults(func=cmd_sweep)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "severities", "unset") is None:
        args.severities = ["0,1,2,3,4,5"]
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (errors.ConfigurationError, errors.UnsupportedPerturbation, errors.IncompatibleCheckpoint) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except errors.DivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (errors.TamperlocError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
