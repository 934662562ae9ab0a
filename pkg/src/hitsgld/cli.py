"""Command line entry point: ``run``, ``validate`` and ``list-experiments``.

Exit codes: 0 when every check passes, 1 when a check fails or a run aborts,
2 for configuration errors. The worker count for per-seed parallelism comes
from the ``HITSGLD_WORKERS`` environment variable (default 1).
"""
from __future__ import annotations

import argparse
import sys

from . import experiments

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _cmd_run(args) -> int:
    try:
        cfg = experiments.load_config(args.config)
        if args.output_dir:
            cfg.output_dir = args.output_dir
        experiments.worker_count()
    except experiments.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    man = experiments.run_experiment(cfg)
    for c in man.checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name}: value={c.value:.6g} "
              f"threshold={c.threshold:.6g}")
    if man.error:
        print(f"ERROR {man.error}", file=sys.stderr)
    print(f"{cfg.experiment}: {'pass' if man.passed else 'fail'} "
          f"({man.timings['total']:.1f}s) -> {cfg.output_dir}")
    return EXIT_OK if man.passed else EXIT_FAIL


def _cmd_validate(args) -> int:
    try:
        cfg = experiments.load_config(args.config)
    except experiments.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"ok: {cfg.experiment} ({len(cfg.seeds)} seeds, hash {cfg.hash()[:12]})")
    return EXIT_OK


def _cmd_list(args) -> int:
    for name in sorted(experiments.SCHEMAS):
        keys = ", ".join(sorted(experiments.SCHEMAS[name]))
        print(f"{name}: {keys}")
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(prog="hitsgld", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config")
    r.add_argument("--output-dir", help="override the config's output_dir")
    r.set_defaults(func=_cmd_run)
    v = sub.add_parser("validate", help="check a config without running it")
    v.add_argument("config")
    v.set_defaults(func=_cmd_validate)
    ls = sub.add_parser("list-experiments", help="list experiment names and parameters")
    ls.set_defaults(func=_cmd_list)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
