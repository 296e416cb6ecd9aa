"""Command line entry point.

Exit codes: 0 all checks passed, 1 some check failed, 2 configuration or
I/O error, 3 numeric error inside a pipeline.
"""
from __future__ import annotations

import argparse
import glob
import json
import logging
import os
import sys

from .experiments import KINDS, ConfigError, RunConfig, run_experiment

EXIT_OK, EXIT_CHECKS, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

# experiments run by --check, in order, with the overrides they need
CHECK_SUITE = (
    ("profile", {}),
    ("spectral", {}),
    ("energy", {}),
    ("evolve", {}),
    ("trap", {}),
    ("trap", {"epsilon_star": 1e-3}),
)


def _load_config(path):
    if path is None:
        return {}
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    return raw


def _status_code(report):
    if report.status == "numeric_error":
        return EXIT_NUMERIC
    return EXIT_OK if report.all_passed else EXIT_CHECKS


def _print_checks(report, stream=sys.stdout):
    for c in report.checks:
        mark = "PASS" if c["passed"] else "FAIL"
        print(f"{mark}  {c['name']}: value={c['value']} tol={c['tolerance']}", file=stream)
    if report.error:
        print(f"ERROR {report.error}", file=stream)


def run_suite(base: dict, out: str, seed):
    """Every experiment with defaults, plus the cross-run trap constant."""
    worst = EXIT_OK
    d_consts = []
    for i, (kind, extra) in enumerate(CHECK_SUITE):
        raw = {**base, **extra, "kind": kind}
        if seed is not None:
            raw["seed"] = seed
        cfg = RunConfig.from_dict(raw)
        sub = os.path.join(out, f"{i:02d}_{kind}")
        rep = run_experiment(cfg, sub)
        print(f"== {kind} {extra or ''} ({rep.wall_clock_s:.1f} s) -> {sub}")
        _print_checks(rep)
        worst = max(worst, _status_code(rep))
        if kind == "trap" and "decay" in rep.metrics:
            d_consts.append(rep.metrics["decay"]["d_shift_constant"])
    if len(d_consts) == 2:
        ratio = max(d_consts) / min(d_consts) if min(d_consts) > 0 else float("inf")
        ok = ratio < 2.0
        print(f"{'PASS' if ok else 'FAIL'}  d_shift_constant_stability: ratio={ratio:.4g} tol=2")
        if not ok:
            worst = max(worst, EXIT_CHECKS)
    return worst


def summarize(out: str):
    """Collect report.json files below `out` into summary.json."""
    rows = []
    for path in sorted(glob.glob(os.path.join(out, "**", "report.json"), recursive=True)):
        with open(path) as fh:
            r = json.load(fh)
        n_fail = sum(not c["passed"] for c in r["checks"])
        rows.append({"path": os.path.relpath(path, out), "kind": r["config"]["kind"],
                     "status": r["status"], "checks": len(r["checks"]), "failed": n_fail})
        print(f"{r['config']['kind']:9s} {r['status']:15s} {len(r['checks']) - n_fail}/{len(r['checks'])}"
              f"  {os.path.relpath(path, out)}")
    with open(os.path.join(out, "summary.json"), "w") as fh:
        json.dump({"runs": rows}, fh, indent=2)
        fh.write("\n")
    if not rows:
        return EXIT_CONFIG
    if any(r["status"] == "numeric_error" for r in rows):
        return EXIT_NUMERIC
    return EXIT_CHECKS if any(r["failed"] for r in rows) else EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(prog="blowup-lab", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in KINDS + ("report",):
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON run configuration")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--seed", type=int, help="u64 seed for the perturbations")
        sp.add_argument("--check", action="store_true", help="run the full acceptance suite")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        raw = _load_config(args.config)
        out = args.out or raw.get("out") or "runs"
        if args.check:
            return run_suite({k: v for k, v in raw.items() if k not in ("kind", "out")}, out, args.seed)
        if args.command == "report":
            return summarize(out)
        raw = {**raw, "kind": args.command, "out": out}
        if args.seed is not None:
            raw["seed"] = args.seed
        cfg = RunConfig.from_dict(raw)
        rep = run_experiment(cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    _print_checks(rep)
    return _status_code(rep)


if __name__ == "__main__":
    sys.exit(main())
