"""Timed multi-threaded experiment runner and the fetch_add microbenchmark."""
from __future__ import annotations

import logging
import os
import random
import statistics
import sys
import threading
import time
import traceback
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

from .oracle import CommittedTxn, History
from .protocols import (COMMON_OPTIONS, PHASES, SUPPORTED_OPTIONS, Abort,
                        AdaptiveBackoff, ProtocolOptions, ReadPhaseExtension,
                        make_engine)
from .protocols.base import GC_MODES
from .protocols.mv import MVEngine
from .storage import (AtomicInt, ConfigError, EpochManager, Protocol, RunStopped, cpu_relax,
                      shared_stores, table_build)
from .workload import READ, RMW, WRITE, Validation, WorkloadConfig, WorkloadGenerator, config_validate

log = logging.getLogger(__name__)

CAPTURE_MAX_CELLS = 10_000
CAPTURE_MAX_TXNS = 100_000


@dataclass
class LongTxn:
    worker: int = 0
    delay: float = 0.1


@dataclass
class RunPlan:
    workload: WorkloadConfig = field(default_factory=WorkloadConfig)
    protocol: str = "silo"
    options: ProtocolOptions = field(default_factory=ProtocolOptions)
    duration: float = 3.0
    repeats: int = 5
    warmup: float = 0.5
    epoch_interval: float = 0.040
    gc_interval: Optional[float] = None     # None: options.gc_interval
    long_txn: Optional[LongTxn] = None
    txns_per_worker: Optional[int] = None   # stop after this many commits per worker
    capture: bool = False
    switch_interval: Optional[float] = 1e-5
    # chance of yielding the interpreter lock after each operation, so that
    # concurrent transactions overlap as they would on parallel cores; below 1
    # so lockstep round-robin cannot livelock no-wait schemes
    interleave: float = 0.5
    pin: bool = True

    @property
    def effective_gc_interval(self) -> float:
        return self.options.gc_interval if self.gc_interval is None else self.gc_interval


def plan_validate(plan: RunPlan) -> Validation:
    out = config_validate(plan.workload)
    try:
        proto = Protocol(str(plan.protocol))
    except ValueError:
        out.errors.append(("protocol", f"unknown protocol {plan.protocol!r}; supported: "
                           + ", ".join(p.value for p in Protocol)))
        return out
    if plan.repeats < 1:
        out.errors.append(("repeats", "must be >= 1"))
    if plan.txns_per_worker is None and plan.duration <= 0:
        out.errors.append(("duration", "must be > 0"))
    if plan.txns_per_worker is not None and plan.txns_per_worker < 1:
        out.errors.append(("txns_per_worker", "must be >= 1"))
    if plan.warmup < 0:
        out.errors.append(("warmup", "must be >= 0"))
    if not 0 <= plan.interleave <= 1:
        out.errors.append(("interleave", "must be a probability in [0, 1]"))
    if plan.long_txn is not None and not 0 <= plan.long_txn.worker < plan.workload.threads:
        out.errors.append(("long_txn", "worker index must be < threads"))
    opts = plan.options
    default = ProtocolOptions()
    allowed = SUPPORTED_OPTIONS[proto.value] | COMMON_OPTIONS
    for f in fields(opts):
        if getattr(opts, f.name) != getattr(default, f.name) and f.name not in allowed:
            out.errors.append((f.name, f"not supported by {proto.value}"))
    if opts.gc not in GC_MODES:
        out.errors.append(("gc", f"must be one of {', '.join(GC_MODES)}"))
    if opts.gc_budget < 1:
        out.errors.append(("gc_budget", "must be >= 1"))
    if opts.overwrite_inline and not plan.workload.partitioned:
        out.errors.append(("overwrite_inline", "requires a partitioned workload"))
    if proto is Protocol.MVTO and plan.workload.threads > 255:
        out.errors.append(("threads", "MVTO supports at most 255 workers"))
    if plan.capture:
        cells = plan.workload.threads * plan.workload.cardinality
        if cells > CAPTURE_MAX_CELLS:
            out.errors.append(("capture", f"threads x cardinality = {cells} exceeds {CAPTURE_MAX_CELLS}"))
        if plan.txns_per_worker and plan.txns_per_worker * plan.workload.threads > CAPTURE_MAX_TXNS:
            out.errors.append(("capture", f"more than {CAPTURE_MAX_TXNS} committed txns"))
    return out


# ------------------------------------------------------------------ metrics

@dataclass
class Metrics:
    commits: int = 0
    aborts: int = 0
    aborts_by_reason: dict = field(default_factory=dict)
    phase_ns: dict = field(default_factory=lambda: dict.fromkeys(PHASES, 0))
    extra_reads: int = 0
    shared_store_in_read: int = 0
    live_versions_max: int = 0
    live_versions_final: int = 0
    duration: float = 0.0
    attempts: int = 0
    fallback_alloc: int = 0
    max_chain: int = 0
    deadlock_cycles: int = 0
    per_worker_commits: list = field(default_factory=list)
    per_worker_latency_ns: list = field(default_factory=list)
    oversubscribed: bool = False
    pinned: bool = False
    status: str = "ok"
    error: str = ""

    @property
    def throughput(self) -> float:
        return self.commits / self.duration if self.duration > 0 else 0.0

    @property
    def abort_ratio(self) -> float:
        n = self.commits + self.aborts
        return self.aborts / n if n else 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["throughput"] = self.throughput
        d["abort_ratio"] = self.abort_ratio
        return d


class _WorkerStats:
    __slots__ = ("commits", "aborts", "reasons", "phase", "extra_reads",
                 "read_stores", "attempts", "latency_ns", "done")

    def __init__(self):
        self.commits = 0
        self.aborts = 0
        self.reasons: dict = {}
        self.phase = dict.fromkeys(PHASES, 0)
        self.extra_reads = 0
        self.read_stores = 0
        self.attempts = 0
        self.latency_ns = 0
        self.done = 0  # commits regardless of measurement window


@dataclass
class RunResult:
    plan: RunPlan
    samples: list
    histories: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(s.status == "ok" for s in self.samples)

    def aggregate(self) -> dict:
        return aggregate(self.samples)

    @property
    def history(self) -> Optional[History]:
        return self.histories[-1] if self.histories else None


AGG_FIELDS = ("commits", "aborts", "throughput", "abort_ratio", "extra_reads",
              "shared_store_in_read", "live_versions_max", "duration",
              "fallback_alloc", "max_chain", "deadlock_cycles")


def aggregate(samples: list) -> dict:
    """Mean plus min/max across repeats for every numeric field and phase."""
    good = [s for s in samples if s.status == "ok"] or samples
    out = {}
    for name in AGG_FIELDS:
        vals = [getattr(s, name) for s in good]
        out[name] = {"mean": statistics.fmean(vals), "min": min(vals), "max": max(vals)}
    for p in PHASES:
        vals = [s.phase_ns[p] for s in good]
        out["phase_" + p] = {"mean": statistics.fmean(vals), "min": min(vals), "max": max(vals)}
    out["status"] = "ok" if all(s.status == "ok" for s in samples) else "failed"
    return out


@dataclass
class Breakdown:
    shares: dict
    no_data: bool = False


def latency_breakdown(phase_ns: dict) -> Breakdown:
    total = sum(phase_ns.values())
    if total <= 0:
        return Breakdown(dict.fromkeys(phase_ns, 0.0), True)
    return Breakdown({k: v / total for k, v in phase_ns.items()})


# ------------------------------------------------------------------ capture

class CaptureRefused(ConfigError):
    pass


class HistoryCapture:
    def __init__(self, threads: int, cardinality: int, limit: int = CAPTURE_MAX_TXNS):
        if threads * cardinality > CAPTURE_MAX_CELLS:
            raise CaptureRefused(f"history capture needs threads x cardinality <= {CAPTURE_MAX_CELLS}")
        self.limit = limit
        self.per_worker = [[] for _ in range(threads)]
        self.count = 0
        self.full = False

    def record(self, engine, ctx, multi_version: bool) -> bool:
        """Append one committed txn; returns False once the cap is reached."""
        reads = engine.capture_reads(ctx)
        writes = [(k, ctx.txn_id) for k in ctx.write_set]
        begin = ctx.begin_ts if multi_version else None
        self.per_worker[ctx.worker].append(
            CommittedTxn(ctx.txn_id, ctx.worker, ctx.pos, reads, writes, begin))
        self.count += 1
        if self.count >= self.limit:
            self.full = True
        return not self.full

    def history(self) -> History:
        entries = [t for lst in self.per_worker for t in lst]
        entries.sort(key=lambda t: (t.pos, t.id))
        return History(entries)


# ------------------------------------------------------------------ workers

def pin_thread(core: int) -> bool:
    try:
        cpus = sorted(os.sched_getaffinity(0))
        if core >= len(cpus):
            return False
        os.sched_setaffinity(0, {cpus[core]})
        return True
    except (AttributeError, OSError):
        return False


def _payload(value: int, size: int) -> bytes:
    n = 8 if size >= 8 else 4
    return (value & ((1 << (8 * n)) - 1)).to_bytes(n, "little") + bytes(size - n)


def _rmw_value(data: bytes, size: int) -> bytes:
    n = 8 if size >= 8 else 4
    return _payload(int.from_bytes(data[:n], "little") + 1, size)


def run_once(plan: RunPlan, repeat: int = 0) -> tuple:
    """One timed run; returns (Metrics, History or None, engine)."""
    cfg = plan.workload
    opts = plan.options
    threads = cfg.threads
    proto = Protocol(str(plan.protocol))
    table = table_build(cfg.cardinality, cfg.payload_size, proto, inline=opts.inlining)
    stop = threading.Event()
    measuring = threading.Event()
    epochs = EpochManager(threads, plan.epoch_interval)
    engine = make_engine(proto, table, opts, workers=threads, epochs=epochs,
                         capture=plan.capture, stop=stop)
    mv = isinstance(engine, MVEngine)
    capture = HistoryCapture(threads, cfg.cardinality) if plan.capture else None
    stats = [_WorkerStats() for _ in range(threads)]
    errors: list = []
    ncpu = len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)
    oversubscribed = threads > ncpu
    pinned_flags = [False] * threads
    sort_ops = proto is Protocol.TWO_PL and not opts.no_wait
    gc_interval = plan.effective_gc_interval
    size = cfg.payload_size
    per_worker_target = plan.txns_per_worker
    start_barrier = threading.Barrier(threads + 1)
    relax_p = plan.interleave if threads > 1 else 0.0

    def worker(w: int) -> None:
        st = stats[w]
        try:
            if plan.pin and not oversubscribed:
                pinned_flags[w] = pin_thread(w)
            gen = WorkloadGenerator(cfg, w, sort_ops=sort_ops)
            coin = random.Random(cfg.seed * 7919 + w).random
            backoff = (AdaptiveBackoff(opts.backoff_min, opts.backoff_max, opts.backoff_factor)
                       if opts.backoff else None)
            read_delay = opts.read_phase_extension
            if plan.long_txn is not None and plan.long_txn.worker == w:
                read_delay += plan.long_txn.delay
            read_ext = ReadPhaseExtension(read_delay) if read_delay > 0 else None
            next_gc = time.perf_counter() + gc_interval
            perf = time.perf_counter_ns
            start_barrier.wait()
            while not stop.is_set():
                if per_worker_target is not None and st.done >= per_worker_target:
                    break
                tmpl = gen.generate()
                t_txn = perf()
                committed = False
                while not stop.is_set():
                    ctx = engine.begin(w)
                    t_attempt = perf()
                    s0 = shared_stores()
                    try:
                        for kind, key in tmpl:
                            if kind == READ:
                                engine.read(ctx, key)
                            elif kind == WRITE:
                                engine.write(ctx, key, _payload(ctx.txn_id, size))
                            else:
                                data = engine.read(ctx, key, for_update=True)
                                engine.write(ctx, key, _rmw_value(data, size))
                            if relax_p and coin() < relax_p:
                                cpu_relax()
                        if read_ext is not None:
                            time.sleep(read_ext.delay_next("read_phase_end"))
                        read_phase_stores = shared_stores() - s0
                        engine.commit(ctx)
                    except RunStopped:
                        engine.abort(ctx)  # never leave locks or pending versions behind
                        raise
                    except Abort as a:
                        engine.abort(ctx, a.reason)
                        now = perf()
                        if measuring.is_set() and not stop.is_set():
                            st.aborts += 1
                            st.attempts += 1
                            st.reasons[a.reason.value] = st.reasons.get(a.reason.value, 0) + 1
                            st.phase["abort_retry"] += now - t_attempt
                            st.extra_reads += ctx.extra_reads
                        if relax_p:
                            cpu_relax()  # lock holders finish while we restart
                        if backoff is not None:
                            backoff.observe(False)
                            d = backoff.delay_next("abort_retry")
                            time.sleep(d)
                            if measuring.is_set():
                                st.phase["backoff"] += perf() - now
                        continue
                    ctx.close_phase()
                    committed = True
                    st.done += 1
                    if backoff is not None:
                        backoff.observe(True)
                    if measuring.is_set() and not stop.is_set():
                        st.commits += 1
                        st.attempts += 1
                        for p in ("read", "validation", "write"):
                            st.phase[p] += ctx.phase_ns[p]
                        st.extra_reads += ctx.extra_reads
                        st.read_stores += read_phase_stores + ctx.read_stores
                        st.latency_ns += perf() - t_txn
                    if capture is not None and not capture.record(engine, ctx, mv):
                        stop.set()
                    break
                if mv and time.perf_counter() >= next_gc:
                    t0 = perf()
                    engine.sample_live()
                    engine.gc_tick(w)
                    if measuring.is_set():
                        st.phase["gc"] += perf() - t0
                    next_gc = time.perf_counter() + gc_interval
                if not committed:
                    break
        except RunStopped:
            pass
        except BaseException as exc:  # worker panic marks the run failed
            errors.append(f"worker {w}: {exc!r}\n{traceback.format_exc()}")
            stop.set()
        finally:
            engine.finish_worker(w)

    old_switch = sys.getswitchinterval()
    if plan.switch_interval:
        sys.setswitchinterval(plan.switch_interval)
    epoch_stop = threading.Event()
    epoch_thread = threading.Thread(target=epochs.run, args=(epoch_stop,), daemon=True)
    watchdog = None
    cycles = [0]
    if proto is Protocol.TWO_PL and opts.watchdog:
        watchdog = threading.Thread(target=_watchdog, args=(engine, epoch_stop, cycles), daemon=True)
    workers = [threading.Thread(target=worker, args=(w,), daemon=True, name=f"worker-{w}")
               for w in range(threads)]
    try:
        epoch_thread.start()
        if watchdog is not None:
            watchdog.start()
        for t in workers:
            t.start()
        if per_worker_target is not None:
            measuring.set()  # before release so every commit is counted
        start_barrier.wait()
        if per_worker_target is None:
            time.sleep(plan.warmup)
            t0 = time.perf_counter()
            measuring.set()
            stop.wait(plan.duration)
            stop.set()
            t1 = time.perf_counter()
        else:
            t0 = time.perf_counter()
        for t in workers:
            t.join()
        if per_worker_target is not None:
            t1 = time.perf_counter()
    finally:
        stop.set()
        epoch_stop.set()
        sys.setswitchinterval(old_switch)
    epoch_thread.join()
    if watchdog is not None:
        watchdog.join()

    m = Metrics(duration=t1 - t0, oversubscribed=oversubscribed, pinned=all(pinned_flags))
    for st in stats:
        m.commits += st.commits
        m.aborts += st.aborts
        m.attempts += st.attempts
        m.extra_reads += st.extra_reads
        m.shared_store_in_read += st.read_stores
        for r, n in st.reasons.items():
            m.aborts_by_reason[r] = m.aborts_by_reason.get(r, 0) + n
        for p in PHASES:
            m.phase_ns[p] += st.phase[p]
        m.per_worker_commits.append(st.commits)
        m.per_worker_latency_ns.append(st.latency_ns / st.commits if st.commits else 0.0)
    if mv:
        m.live_versions_final = engine.sample_live()
        m.live_versions_max = max(engine.live_samples)
        m.fallback_alloc = engine.fallback_allocs()
        m.max_chain = engine.gc_stats["max_chain"]
    m.deadlock_cycles = cycles[0]
    if errors:
        m.status = "failed"
        m.error = errors[0]
    hist = capture.history() if capture is not None else None
    return m, hist, engine


def _watchdog(engine, stop: threading.Event, cycles: list, period: float = 0.01) -> None:
    """Counts waits-for cycles that persist across two consecutive checks."""
    import networkx as nx
    prev: set = set()
    while not stop.wait(period):
        g = nx.DiGraph()
        for w, holders in engine.waits_for().items():
            g.add_edges_from((w, h) for h in holders)
        found = {tuple(sorted(c)) for c in nx.simple_cycles(g)}
        cycles[0] += len(found & prev)
        prev = found


def run_experiment(plan: RunPlan) -> RunResult:
    v = plan_validate(plan)
    if not v.ok:
        raise ConfigError("; ".join(f"{f}: {msg}" for f, msg in v.errors))
    for f, msg in v.warnings:
        log.warning("%s: %s", f, msg)
    samples, histories = [], []
    for r in range(plan.repeats):
        m, h, _ = run_once(plan, r)
        samples.append(m)
        if h is not None:
            histories.append(h)
    return RunResult(plan, samples, histories)


# ---------------------------------------------------------------- fetch_add

@dataclass
class FetchAddResult:
    threads: int
    duration: float
    total: int
    per_thread: list
    decentralized: bool

    @property
    def throughput(self) -> float:
        return self.total / self.duration if self.duration > 0 else 0.0


def fetch_add_bench(threads: int, duration: float = 1.0, decentralized: bool = False,
                    switch_interval: Optional[float] = None) -> FetchAddResult:
    """All threads increment one shared counter (or one counter each)."""
    if threads < 1:
        raise ValueError("threads must be >= 1")
    shared = AtomicInt(0)
    counters = [AtomicInt(0) for _ in range(threads)] if decentralized else [shared] * threads
    counts = [0] * threads
    stop = threading.Event()
    barrier = threading.Barrier(threads + 1)

    def run(i: int) -> None:
        c = counters[i]
        add = c.fetch_add
        n = 0
        barrier.wait()
        while not stop.is_set():
            for _ in range(64):
                add(1)
            n += 64
        counts[i] = n

    old = sys.getswitchinterval()
    if switch_interval:
        sys.setswitchinterval(switch_interval)
    try:
        ts = [threading.Thread(target=run, args=(i,), daemon=True) for i in range(threads)]
        for t in ts:
            t.start()
        barrier.wait()
        t0 = time.perf_counter()
        time.sleep(duration)
        stop.set()
        for t in ts:
            t.join()
        elapsed = time.perf_counter() - t0
    finally:
        sys.setswitchinterval(old)
    total = sum(counts)
    return FetchAddResult(threads, elapsed, total, counts, decentralized)
