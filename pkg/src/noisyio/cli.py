"""Command line: train-operator, run, report, selftest."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .errors import NoisyIOError


def _split(text: str | None) -> list | None:
    if text is None:
        return None
    if text.strip().lower() in ("", "none"):
        return []
    return [t.strip() for t in text.split(",") if t.strip()]


def _load(args):
    from .experiments import ExperimentConfig

    cfg = ExperimentConfig.from_yaml(args.config)
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    modes = _split(getattr(args, "mode", None))
    if modes is not None:
        over["modes"] = modes
    baselines = _split(getattr(args, "baselines", None))
    if baselines is not None:
        over["baselines"] = baselines
    return cfg.with_overrides(**over) if over else cfg


def cmd_train_operator(args) -> int:
    from .experiments import train_operator_from_config

    cfg = _load(args)
    if not cfg.experiment.startswith(("E4", "E5")):
        raise NoisyIOError(f"{cfg.experiment} uses no pretrained operator")
    if args.seed is not None:
        cfg = cfg.with_overrides(operator={"training": {"seed": args.seed}})
    model, path = train_operator_from_config(cfg, args.out)
    print(f"checkpoint {path}  test relative L2 {model.metadata.get('test_rel_l2', float('nan')):.4f}")
    return 0


def cmd_run(args) -> int:
    from .experiments import render_table, run_experiment

    cfg = _load(args)
    report = run_experiment(cfg, args.out)
    print(render_table(report), end="")
    print(f"wall time {report.wall_time:.1f} s")
    return 0


def cmd_report(args) -> int:
    from .experiments import emit_report, load_reports, render_table

    reports = []
    for d in args.dirs:
        p = Path(d)
        p = p / "report.json" if p.is_dir() else p
        reports += load_reports(p)
    if not reports:
        raise NoisyIOError("no reports found")
    if args.out:
        emit_report(reports, args.out)
    print(render_table(reports), end="")
    return 0


def cmd_selftest(args) -> int:
    from .selftest import run_selftest

    checks = run_selftest()
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name}  ({c.detail})")
    return 0 if all(c.passed for c in checks) else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="noisyio", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-operator", help="build the corpus and train the operator of an E4/E5 config")
    p.add_argument("config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="checkpoint path (default: the config's operator.checkpoint)")
    p.set_defaults(func=cmd_train_operator)

    p = sub.add_parser("run", help="run one experiment")
    p.add_argument("config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="run directory (default: the config's output)")
    p.add_argument("--mode", help="comma-separated subset of ignore,model,recast")
    p.add_argument("--baselines", help="comma-separated baselines, or 'none'")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="aggregate report.json files into one table")
    p.add_argument("dirs", nargs="+")
    p.add_argument("--out", help="write the combined table (and its JSON twin) here")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("selftest", help="run the fast oracle checks")
    p.set_defaults(func=cmd_selftest)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except NoisyIOError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
