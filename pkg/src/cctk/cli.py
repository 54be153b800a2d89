"""Command-line entry point: run, sweep, oracle-check, bench-fetch-add,
list-protocols."""
from __future__ import annotations

import argparse
import csv
import difflib
import io
import itertools
import json
import os
import sys
from dataclasses import dataclass, field, fields
from typing import Optional

from . import oracle
from .harness import LongTxn, RunPlan, fetch_add_bench, plan_validate, run_experiment
from .protocols import COMMON_OPTIONS, ENGINES, SUPPORTED_OPTIONS, ProtocolOptions
from .storage import ConfigError
from .workload import WorkloadConfig

COLUMNS = ("protocol", "toggles", "threads", "skew", "cardinality", "payload",
           "txn_size", "read_ratio", "rmw", "duration_s", "repeat", "commits",
           "aborts", "throughput_tps", "abort_ratio", "phase_read_ns",
           "phase_validation_ns", "phase_write_ns", "phase_gc_ns", "phase_abort_ns",
           "extra_reads", "live_versions_max", "status")

WORKLOAD_KEYS = [f.name for f in fields(WorkloadConfig)]
PLAN_KEYS = [f.name for f in fields(RunPlan) if f.name not in ("workload", "options")]
OPTION_KEYS = [f.name for f in fields(ProtocolOptions)]
ALIASES = {"payload": "payload_size", "ycsb": "ycsb_preset"}
SPEC_KEYS = set(WORKLOAD_KEYS) | set(PLAN_KEYS) | set(ALIASES) | {"options", "sweep", "output"}
SWEEPABLE = set(WORKLOAD_KEYS) | set(PLAN_KEYS) | set(OPTION_KEYS) | set(ALIASES)
MAX_AXES = 2


@dataclass
class ExperimentSpec:
    plan: RunPlan = field(default_factory=RunPlan)
    sweep: list = field(default_factory=list)     # [(name, [values])]
    format: str = "csv"
    path: Optional[str] = None

    def cells(self) -> list:
        if not self.sweep:
            return [{}]
        names = [n for n, _ in self.sweep]
        return [dict(zip(names, combo)) for combo in itertools.product(*(v for _, v in self.sweep))]


def _unknown(key: str, known) -> ConfigError:
    hint = difflib.get_close_matches(key, sorted(known), n=1)
    msg = f"unknown key {key!r}"
    if hint:
        msg += f"; did you mean {hint[0]!r}?"
    return ConfigError(msg)


def _canon(key: str) -> str:
    return ALIASES.get(key, key)


def _apply(plan: RunPlan, key: str, value) -> None:
    key = _canon(key)
    if key in WORKLOAD_KEYS:
        setattr(plan.workload, key, value)
        if key in ("ycsb_preset", "read_ratio"):
            plan.workload.__post_init__()
    elif key == "long_txn":
        plan.long_txn = None if value is None else (
            value if isinstance(value, LongTxn) else LongTxn(**value))
    elif key in PLAN_KEYS:
        setattr(plan, key, value)
    elif key in OPTION_KEYS:
        setattr(plan.options, key, value)
    else:
        raise _unknown(key, SWEEPABLE)


def parse_spec(source) -> ExperimentSpec:
    """Build a fully defaulted spec from a dict, a JSON file path or JSON text."""
    if isinstance(source, (str, os.PathLike)):
        text = str(source)
        if not text.lstrip().startswith("{"):
            with open(source, encoding="utf-8") as f:
                text = f.read()
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"spec parse error at line {e.lineno} column {e.colno}: {e.msg}") from None
    else:
        data = dict(source)
    if not isinstance(data, dict):
        raise ConfigError("spec must be a JSON object")
    spec = ExperimentSpec(plan=RunPlan(workload=WorkloadConfig(), options=ProtocolOptions()))
    for key in data:
        if key not in SPEC_KEYS:
            raise _unknown(key, SPEC_KEYS)
    for key, value in data.items():
        if key in ("options", "sweep", "output"):
            continue
        _apply(spec.plan, key, value)
    for key, value in (data.get("options") or {}).items():
        if key not in OPTION_KEYS:
            raise _unknown(key, OPTION_KEYS)
        setattr(spec.plan.options, key, value)
    sweep = data.get("sweep") or []
    if isinstance(sweep, dict):
        sweep = list(sweep.items())
    if len(sweep) > MAX_AXES:
        raise ConfigError(f"at most {MAX_AXES} sweep axes, got {len(sweep)}")
    for entry in sweep:
        if not (isinstance(entry, (list, tuple)) and len(entry) == 2 and isinstance(entry[1], list)):
            raise ConfigError(f"sweep axis must be [name, [values...]], got {entry!r}")
        name, values = entry
        if name not in SWEEPABLE:
            raise _unknown(name, SWEEPABLE)
        if not values:
            raise ConfigError(f"sweep axis {name!r} has no values")
        spec.sweep.append((_canon(name), list(values)))
    out = data.get("output") or {}
    for key in out:
        if key not in ("format", "path"):
            raise _unknown(key, ("format", "path"))
    spec.format = out.get("format", "csv")
    spec.path = out.get("path")
    if spec.format not in ("csv", "json"):
        raise ConfigError(f"output format must be csv or json, got {spec.format!r}")
    _check_names(spec)
    return spec


def _check_names(spec: ExperimentSpec) -> None:
    protos = [spec.plan.protocol] + [v for n, vals in spec.sweep if n == "protocol" for v in vals]
    for p in protos:
        if str(p) not in ENGINES:
            raise ConfigError(f"unknown protocol {p!r}; supported: {', '.join(ENGINES)}")


def spec_to_dict(spec: ExperimentSpec) -> dict:
    p = spec.plan
    d = {k: getattr(p.workload, k) for k in WORKLOAD_KEYS}
    for k in PLAN_KEYS:
        v = getattr(p, k)
        d[k] = {"worker": v.worker, "delay": v.delay} if isinstance(v, LongTxn) else v
    d["options"] = {k: getattr(p.options, k) for k in OPTION_KEYS}
    d["sweep"] = [[n, list(v)] for n, v in spec.sweep]
    d["output"] = {"format": spec.format, "path": spec.path}
    return d


def _clone(plan: RunPlan) -> RunPlan:
    return parse_spec(spec_to_dict(ExperimentSpec(plan=plan))).plan


def _row(plan: RunPlan, repeat, m: Optional[dict]) -> dict:
    w = plan.workload
    row = {"protocol": str(plan.protocol), "toggles": plan.options.toggles(),
           "threads": w.threads, "skew": w.skew, "cardinality": w.cardinality,
           "payload": w.payload_size, "txn_size": w.txn_size, "read_ratio": w.read_ratio,
           "rmw": w.rmw, "repeat": repeat}
    if m is None:
        m = {}
    commits = m.get("commits", 0)
    aborts = m.get("aborts", 0)
    row.update({
        "duration_s": m.get("duration", 0.0), "commits": commits, "aborts": aborts,
        "throughput_tps": m.get("throughput", 0.0),
        "abort_ratio": aborts / (commits + aborts) if commits + aborts else 0.0,
        "phase_read_ns": m.get("phase_read", 0), "phase_validation_ns": m.get("phase_validation", 0),
        "phase_write_ns": m.get("phase_write", 0), "phase_gc_ns": m.get("phase_gc", 0),
        "phase_abort_ns": m.get("phase_abort_retry", 0), "extra_reads": m.get("extra_reads", 0),
        "live_versions_max": m.get("live_versions_max", 0), "status": m.get("status", "failed"),
    })
    return {c: row[c] for c in COLUMNS}


def _flat(metrics) -> dict:
    d = metrics.to_dict()
    for p, v in d.pop("phase_ns").items():
        d["phase_" + p] = v
    return d


def cell_plans(spec: ExperimentSpec) -> list:
    plans = []
    for cell in spec.cells():
        plan = _clone(spec.plan)
        for k, v in cell.items():
            _apply(plan, k, v)
        plans.append((cell, plan))
    return plans


def validate_spec(spec: ExperimentSpec) -> None:
    """Rejects the whole sweep if any cell is invalid, before anything runs."""
    for cell, plan in cell_plans(spec):
        v = plan_validate(plan)
        if v.errors:
            where = f" in cell {cell}" if cell else ""
            raise ConfigError("; ".join(f"{k}: {m}" for k, m in v.errors) + where)


def run_sweep(spec: ExperimentSpec, runner=run_experiment, log=None) -> list:
    """Runs every cell sequentially; one row per repeat plus a mean row."""
    rows = []
    for cell, plan in cell_plans(spec):
        try:
            result = runner(plan)
        except Exception as exc:  # a failed cell never stops the sweep
            if log:
                print(f"cell {cell} failed: {exc}", file=log)
            rows.append(_row(plan, "mean", None))
            continue
        for i, m in enumerate(result.samples):
            rows.append(_row(plan, i, _flat(m)))
        agg = result.aggregate()
        mean = {k: v["mean"] for k, v in agg.items() if isinstance(v, dict)}
        mean["status"] = agg["status"]
        rows.append(_row(plan, "mean", mean))
    return rows


def emit(rows: list, fmt: str = "csv", path: Optional[str] = None) -> str:
    if fmt == "csv":
        buf = io.StringIO()
        wr = csv.DictWriter(buf, fieldnames=COLUMNS, lineterminator="\n")
        wr.writeheader()
        wr.writerows(rows)
        text = buf.getvalue()
    elif fmt == "json":
        text = json.dumps(rows, indent=1) + "\n"
    else:
        raise ConfigError(f"unknown output format {fmt!r}")
    if path:
        try:
            with open(path, "w", encoding="utf-8", newline="") as f:
                f.write(text)
        except OSError as e:
            raise ConfigError(f"cannot write {path}: {e}") from None
    return text


# ---------------------------------------------------------------------- argv

def _value(s: str):
    try:
        return json.loads(s)
    except json.JSONDecodeError:
        return s


def _spec_from_args(a) -> ExperimentSpec:
    data = {}
    if a.spec:
        with open(a.spec, encoding="utf-8") as f:
            try:
                data = json.load(f)
            except json.JSONDecodeError as e:
                raise ConfigError(f"{a.spec}: line {e.lineno} column {e.colno}: {e.msg}") from None
    flags = {"protocol": a.protocol, "ycsb_preset": a.ycsb, "threads": a.threads,
             "skew": a.skew, "cardinality": a.cardinality, "payload_size": a.payload,
             "txn_size": a.txn_size, "read_ratio": a.read_ratio, "duration": a.duration,
             "repeats": a.repeats, "warmup": a.warmup, "seed": a.seed,
             "txns_per_worker": a.txns_per_worker, "gc_interval": a.gc_interval}
    for k, v in flags.items():
        if v is not None:
            data[k] = v
    if a.rmw:
        data["rmw"] = True
    if a.ycsb is not None and a.read_ratio is None:
        data.pop("read_ratio", None)
    opts = dict(data.get("options") or {})
    for item in a.opt or []:
        if "=" in item:
            k, v = item.split("=", 1)
            opts[k] = _value(v)
        else:
            opts[item] = True
    if opts:
        data["options"] = opts
    for item in getattr(a, "axis", None) or []:
        if "=" not in item:
            raise ConfigError(f"sweep axis must look like name=[v1,v2], got {item!r}")
        k, v = item.split("=", 1)
        vals = _value(v)
        if not isinstance(vals, list):
            vals = [vals]
        data.setdefault("sweep", []).append([k, vals])
    if a.format or a.output:
        data["output"] = {"format": a.format or "csv", "path": a.output}
    seed = os.environ.get("CCTK_SEED")
    if seed is not None:
        try:
            data["seed"] = int(seed)
        except ValueError:
            raise ConfigError(f"CCTK_SEED must be an integer, got {seed!r}") from None
    return parse_spec(data)


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--spec", help="JSON experiment spec; flags override it")
    p.add_argument("--protocol", choices=sorted(ENGINES))
    p.add_argument("--ycsb", type=str.upper, choices=["A", "B", "C"])
    p.add_argument("--threads", type=int)
    p.add_argument("--skew", type=float)
    p.add_argument("--cardinality", type=int)
    p.add_argument("--payload", type=int)
    p.add_argument("--txn-size", type=int)
    p.add_argument("--read-ratio", type=float)
    p.add_argument("--rmw", action="store_true")
    p.add_argument("--duration", type=float)
    p.add_argument("--repeats", type=int)
    p.add_argument("--warmup", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--txns-per-worker", type=int)
    p.add_argument("--gc-interval", type=float)
    p.add_argument("--opt", action="append", metavar="NAME[=VALUE]",
                   help="protocol option, e.g. --opt no_wait --opt gc=aggressive")
    p.add_argument("--format", choices=["csv", "json"])
    p.add_argument("--output", "-o")
    p.add_argument("--history", help="run one repeat with history capture and write it here")


class _Parser(argparse.ArgumentParser):
    # usage errors are config errors; exit 2 is reserved for oracle violations
    def error(self, message):
        if message.startswith("unrecognized arguments"):
            flags = [t for t in message.split(":", 1)[1].split() if t.startswith("--")]
            hints = [difflib.get_close_matches(f, self._all_flags(), n=1) for f in flags]
            message += "".join(f"; did you mean {h[0]!r}?" for h in hints if h)
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")

    def _all_flags(self) -> list:
        out = []
        for act in self._actions:
            out.extend(act.option_strings)
            if isinstance(act, argparse._SubParsersAction):
                for sp in act.choices.values():
                    out.extend(sp._all_flags())
        return sorted(set(out))


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="cctk", description=__doc__)
    sub = ap.add_subparsers(dest="cmd", required=True)
    p = sub.add_parser("run", help="run one experiment cell")
    _add_run_flags(p)
    p = sub.add_parser("sweep", help="run the cross product of up to two axes")
    _add_run_flags(p)
    p.add_argument("--axis", action="append", metavar="NAME=[V,...]")
    p = sub.add_parser("oracle-check", help="check a captured history file")
    p.add_argument("history")
    p.add_argument("--snapshot", action="store_true", help="also check snapshot reads")
    p = sub.add_parser("bench-fetch-add", help="shared vs per-thread counter increments")
    p.add_argument("--threads", type=int, nargs="+", default=[1, 2, 4])
    p.add_argument("--duration", type=float, default=1.0)
    p.add_argument("--decentralized", action="store_true")
    sub.add_parser("list-protocols", help="list protocols and their options")
    return ap


def main(argv=None) -> int:
    try:
        a = build_parser().parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 1
    try:
        if a.cmd in ("run", "sweep"):
            return _cmd_run(a)
        if a.cmd == "oracle-check":
            try:
                return oracle.check_file(a.history, a.snapshot)
            except (OSError, oracle.MalformedHistory) as e:
                print(f"error: {e}", file=sys.stderr)
                return 1
        if a.cmd == "bench-fetch-add":
            print("threads,mode,total,duration_s,throughput")
            for n in a.threads:
                r = fetch_add_bench(n, a.duration, a.decentralized)
                mode = "decentralized" if a.decentralized else "shared"
                print(f"{n},{mode},{r.total},{r.duration},{r.throughput}")
            return 0
        if a.cmd == "list-protocols":
            for name in ENGINES:
                opts = ", ".join(sorted(SUPPORTED_OPTIONS[name])) or "-"
                print(f"{name:7s} {opts}")
            print(f"all: {', '.join(sorted(COMMON_OPTIONS))}")
            return 0
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    return 1


def _cmd_run(a) -> int:
    spec = _spec_from_args(a)
    if a.cmd == "run" and spec.sweep:
        raise ConfigError("'run' takes no sweep axes; use 'sweep'")
    validate_spec(spec)
    if a.history:
        spec.plan.capture = True
        spec.plan.repeats = 1
        if spec.plan.txns_per_worker is None:
            spec.plan.txns_per_worker = 1000
        result = run_experiment(spec.plan)
        with open(a.history, "w", encoding="utf-8") as f:
            f.write(oracle.format_history(result.history))
        rows = run_sweep(spec, runner=lambda plan: result)
    else:
        rows = run_sweep(spec, log=sys.stderr)
    text = emit(rows, spec.format, spec.path)
    if not spec.path:
        sys.stdout.write(text)
    return 0 if all(r["status"] == "ok" for r in rows) else 3


if __name__ == "__main__":
    sys.exit(main())
