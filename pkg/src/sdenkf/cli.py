"""Command-line entry point: ``sdenkf {run,verify-theory,selftest,presets}``."""
from __future__ import annotations

import argparse
import csv
import logging
import sys
import traceback
from pathlib import Path

import numpy as np
import yaml

from .config import PRESETS, ConfigError, config_from_dict, preset_dict
from .harness import emit_results, run_twin_experiment
from .selftest import run_selftest
from .theory import verify_theory

log = logging.getLogger("sdenkf")


def _resolve_config(args):
    if args.config is None and args.preset is None:
        raise ConfigError("give a configuration file or --preset")
    data = {}
    if args.config is not None:
        with open(args.config) as fh:
            data = yaml.safe_load(fh) or {}
        if not isinstance(data, dict):
            raise ConfigError(f"{args.config}: expected a mapping at the top level")
    if args.preset is not None:
        data = {"preset": args.preset, **data}
    for key in ("realizations", "cycles", "ensemble_size"):
        value = getattr(args, key)
        if value is not None:
            data[key] = value
    if args.filters:
        data["filters"] = args.filters
    return config_from_dict(data)


def cmd_run(args) -> int:
    cfg = _resolve_config(args)
    log.info("running %s: %s, N=%d, %d cycles x %d realizations", cfg.name,
             ", ".join(cfg.filters) or "free run only", cfg.ensemble_size, cfg.cycles,
             cfg.realizations)
    rec = run_twin_experiment(
        cfg, progress=lambda r, R: log.info("realization %d/%d done", r, R))
    paths = emit_results(rec, args.output, stem=cfg.name)
    free = rec.mean_free()[-1]
    print(f"cycle {rec.cycles} mean RMSE ({', '.join(rec.variables)})")
    print(f"  {'free':8s} " + " ".join(f"{x:12.5g}" for x in free))
    for f, label in enumerate(rec.filters):
        an = rec.mean_analysis()[f, -1]
        div = int(np.sum(rec.diverged_at[:, f] >= 0))
        note = f"  diverged in {div}/{len(rec.diverged_at)}" if div else ""
        print(f"  {label:8s} " + " ".join(f"{x:12.5g}" for x in an) + note)
    print(f"wrote {paths['table']} and {paths['metadata']}")
    return 0


def cmd_verify_theory(args) -> int:
    rows = verify_theory(N=args.members, replications=args.replications, seed=args.seed)
    print(f"{'check':40s} {'theory':>12s} {'empirical':>12s} {'std.err':>10s} {'dev/se':>7s}  result")
    for r in rows:
        dev = (r.empirical - r.theory) / r.se if r.se > 0 else 0.0
        print(f"{r.name:40s} {r.theory:12.6g} {r.empirical:12.6g} {r.se:10.3g} {dev:7.2f}  "
              f"{'pass' if r.passed else 'FAIL'}")
    if args.output:
        path = Path(args.output)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["check", "theory", "empirical", "std_err", "tolerance_se", "passed"])
            for r in rows:
                w.writerow([r.name, f"{r.theory:.12e}", f"{r.empirical:.12e}", f"{r.se:.6e}",
                            r.tolerance_se, int(r.passed)])
    failed = sum(not r.passed for r in rows)
    print(f"{len(rows) - failed}/{len(rows)} checks passed")
    return 1 if failed else 0


def cmd_selftest(args) -> int:
    checks = run_selftest(instances=args.instances, seed=args.seed)
    failed = [c for c in checks if not c.passed]
    for c in checks if args.list_all else failed:
        print(f"{'pass' if c.passed else 'FAIL'}  {c.name}: {c.error:.3e} (tol {c.tolerance:g})")
    print(f"{len(checks) - len(failed)}/{len(checks)} checks passed, "
          f"max error {max(c.error for c in checks):.3e}")
    return 1 if failed else 0


def cmd_presets(args) -> int:
    if args.name:
        yaml.safe_dump(preset_dict(args.name), sys.stdout, sort_keys=False)
        return 0
    for name, p in PRESETS.items():
        print(f"{name:14s} {p['model']['kind']:14s} N={p['ensemble_size']:<3d} "
              f"cycles={p['cycles']:<3d} realizations={p['realizations']:<3d} "
              f"obs={p['observation']['kind']:9s} filters={','.join(p['filters'])}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sdenkf", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a twin experiment")
    p.add_argument("config", nargs="?", help="YAML configuration file")
    p.add_argument("--preset", choices=sorted(PRESETS), help="start from a built-in preset")
    p.add_argument("-o", "--output", default="results", help="output directory (default: results)")
    p.add_argument("--realizations", type=int)
    p.add_argument("--cycles", type=int)
    p.add_argument("--ensemble-size", dest="ensemble_size", type=int)
    p.add_argument("--filters", nargs="*", help="override the filter roster")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("verify-theory", help="Monte Carlo check of the error formulas")
    p.add_argument("-N", "--members", type=int, default=10)
    p.add_argument("--replications", type=int, default=20000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", help="also write the table as CSV")
    p.set_defaults(func=cmd_verify_theory)

    p = sub.add_parser("selftest", help="transform and kernel property checks")
    p.add_argument("--instances", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--all", dest="list_all", action="store_true", help="list every check")
    p.set_defaults(func=cmd_selftest)

    p = sub.add_parser("presets", help="list presets, or print one as YAML")
    p.add_argument("name", nargs="?", choices=sorted(PRESETS))
    p.set_defaults(func=cmd_presets)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, OSError, yaml.YAMLError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception:  # a filter or model crash, as opposed to a reported divergence
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
