"""Shared argument handling for the sweep scripts."""
import argparse
import sys

from cctk.cli import emit, parse_spec, run_sweep


def sweep_main(name: str, spec: dict, argv=None) -> None:
    ap = argparse.ArgumentParser(prog=name)
    ap.add_argument("--output", "-o", default=f"{name}.csv")
    ap.add_argument("--duration", type=float, default=spec.get("duration", 3.0))
    ap.add_argument("--repeats", type=int, default=spec.get("repeats", 5))
    ap.add_argument("--format", choices=["csv", "json"], default="csv")
    a = ap.parse_args(argv)
    spec = dict(spec, duration=a.duration, repeats=a.repeats)
    rows = run_sweep(parse_spec(spec), log=sys.stderr)
    emit(rows, a.format, a.output)
    print(f"{len(rows)} rows -> {a.output}", file=sys.stderr)
