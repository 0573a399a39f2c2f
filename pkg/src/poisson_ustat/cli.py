"""Command-line entry point: ``poisson-ustat run | validate | list-experiments``.

Exit codes: 0 success, 1 a tolerance band failed, 2 invalid configuration.
"""

from __future__ import annotations

import argparse
import json
import sys

from .experiments import KINDS, OUT_ENV, WORKERS_ENV, ConfigError, load_config, run, validate


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="poisson-ustat", description="Poisson U-statistic experiment runner.")
    sub = ap.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run an experiment sweep")
    p_run.add_argument("--config", required=True, help="YAML or JSON experiment config")
    p_run.add_argument("--seed", type=int, help="override the config seed")
    p_run.add_argument("--workers", type=int, help=f"worker processes (env {WORKERS_ENV})")
    p_run.add_argument("--out", help=f"output directory (env {OUT_ENV})")
    p_run.add_argument("--keep-partial", action="store_true", help="keep the staging directory on failure")
    p_val = sub.add_parser("validate", help="check a config against the limit-theorem hypotheses")
    p_val.add_argument("--config", required=True)
    sub.add_parser("list-experiments", help="list experiment kinds and their default parameters")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "list-experiments":
        for name, spec in KINDS.items():
            print(f"{name}  [{spec.scale_name}]  {spec.description}")
            print(f"    defaults: {json.dumps(spec.params, sort_keys=True)}")
        return 0
    try:
        cfg = load_config(args.config)
        if args.command == "validate":
            findings = validate(cfg)
            for f in findings:
                print(f"finding: {f}")
            print("ok" if not findings else f"{len(findings)} finding(s)")
            return 0
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("seed", "must be a non-negative integer")
            cfg.seed = args.seed
        report = run(cfg, workers=args.workers, out=args.out, keep_partial=args.keep_partial)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    for f in report.findings:
        print(f"warning: {f}", file=sys.stderr)
    for b in report.bands:
        print(f"{'PASS' if b['passed'] else 'FAIL'}  {b['name']}")
    print(f"wrote {report.out_dir}")
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
