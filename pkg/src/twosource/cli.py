"""Command-line entry point: ``twosource <subcommand> [flags]``.

Exit status 0 when every evaluated criterion passes, 1 when one fails and
2 for configuration errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import harness as hs
from . import helmholtz as hz
from . import liouville as lv
from . import wigner as wg
from .model import field_from_list

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _common(p):
    p.add_argument("--config", help="JSON config (default: built-in reference scenario)")
    p.add_argument("--seed", type=int, default=None, help="override the quadrature seed")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for sweep cells")
    p.add_argument("--tol", type=float, default=None, help="residual threshold for the identity suites")
    p.add_argument("--out", default=None, help="output directory (results.csv, report.json, cache/)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="twosource", description="High-frequency two-source Helmholtz experiments.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="evaluate the rescaled solution w^eps at points")
    _common(p)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--center", type=int, default=0, choices=(0, 1))
    p.add_argument("--point", type=float, nargs="+", action="append", required=True, help="x coordinates (repeatable)")

    p = sub.add_parser("pair", help="<a^eps, v> for a configured test field")
    _common(p)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--field", required=True)

    p = sub.add_parser("wigner", help="<W^eps, a> for a configured observable")
    _common(p)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--observable", required=True)
    p.add_argument("--cross", action="store_true", help="cross term between the two sources")

    p = sub.add_parser("mu", help="<mu, a> for a configured observable")
    _common(p)
    p.add_argument("--observable", required=True)

    p = sub.add_parser("sweep", help="run the configured sweep and every acceptance criterion")
    _common(p)
    p.add_argument("--criteria", type=int, nargs="*", default=None, help="restrict to these criterion ids")

    p = sub.add_parser("verify", help="run an invariant suite without sweeps")
    _common(p)
    p.add_argument("--suite", default="fast", choices=sorted(hs.SUITES))

    p = sub.add_parser("export", help="write stored results in a documented format")
    _common(p)
    p.add_argument("--format", choices=("csv", "json-report"), default="csv")
    p.add_argument("--path", required=True)
    return ap


def _emit(obj, out=None, name=None):
    text = json.dumps(hs._jsonable(obj), indent=2, sort_keys=True)
    print(text)
    if out is not None and name is not None:
        Path(out).mkdir(parents=True, exist_ok=True)
        (Path(out) / name).write_text(text + "\n")


def _print_criteria(report):
    for c in report["criteria"]:
        print(f"criterion {c['id']:>2} {c['status'].upper():7} {c['name']}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = hs.load_config(args.config, args.seed)
    except hs.ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    s = cfg.scenario
    quad = cfg.quadrature
    try:
        if args.command == "solve":
            sol = hz.solve_rescaled(s, args.eps, args.center)
            pts = np.array(args.point, dtype=float)
            if pts.shape[1] != s.d:
                raise hs.ConfigError(f"points must have {s.d} coordinates")
            r = sol.evaluate(pts)
            _emit({"epsilon": args.eps, "points": pts.tolist(), "values": [complex(v) for v in r.values], "error": r.error.tolist()})
            return EXIT_OK
        if args.command == "pair":
            if args.field not in cfg.test_fields:
                raise hs.ConfigError(f"unknown test field {args.field!r}")
            r = hz.solve_shifted(s, args.eps).pairing(field_from_list(cfg.test_fields[args.field], s.d))
            _emit({"epsilon": args.eps, "field": args.field, "value": r.value, "error": r.error})
            return EXIT_OK
        if args.command in ("wigner", "mu"):
            if args.observable not in cfg.observables:
                raise hs.ConfigError(f"unknown observable {args.observable!r}")
            a = cfg.observable(args.observable)
            if args.command == "mu":
                v = lv.mu_pairing(lv.RayMeasure.from_scenario(s), a)
                _emit({"observable": a.name, "value": v})
                return EXIT_OK
            n, seed, gh = int(quad.get("n_samples", 8000)), int(quad.get("seed", 0)), int(quad.get("gh", 6))
            f = wg.cross_term if args.cross else wg.scenario_pairing
            r = f(s, args.eps, a, n, seed, gh)
            _emit({"epsilon": args.eps, "observable": a.name, "value": r.value, "error": r.error, "method": r.method})
            return EXIT_OK
        if args.command == "sweep":
            rows, report = hs.run(cfg, args.out, args.jobs, args.criteria, args.tol)
            if args.out is None:
                sys.stdout.write(hs.rows_to_csv(rows))
            _print_criteria(report)
            return EXIT_OK if report["all_pass"] else EXIT_FAIL
        if args.command == "verify":
            runner = hs.Runner(cfg, args.out, args.jobs)
            results = hs.evaluate_criteria(hs.Context(cfg, runner), hs.SUITES[args.suite], args.tol)
            report = hs.build_report(cfg, results, runner)
            if args.out is not None:
                hs.write_outputs(args.out, runner.all_rows(), report)
            _print_criteria(report)
            return EXIT_OK if report["all_pass"] else EXIT_FAIL
        if args.command == "export":
            if args.out is None:
                raise hs.ConfigError("export needs --out pointing at a previous run")
            src = Path(args.out) / ("results.csv" if args.format == "csv" else "report.json")
            if not src.exists():
                raise hs.ConfigError(f"no stored results at {src}")
            text = src.read_text()
            if args.format == "csv":
                text = hs.rows_to_csv(hs.rows_from_csv(text))
            else:
                text = json.dumps(json.loads(text), indent=2, sort_keys=True) + "\n"
            Path(args.path).write_text(text)
            return EXIT_OK
    except hs.ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
