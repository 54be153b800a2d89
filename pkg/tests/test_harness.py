import os

import pytest

from cctk.harness import (CaptureRefused, HistoryCapture, LongTxn, Metrics, RunPlan,
                          aggregate, fetch_add_bench, latency_breakdown, pin_thread,
                          plan_validate, run_experiment)
from cctk.protocols import PHASES, ProtocolOptions
from cctk.storage import ConfigError
from cctk.workload import WorkloadConfig


def plan(proto="silo", opts=None, **kw):
    wl = {k: kw.pop(k) for k in list(kw) if k in WorkloadConfig.__dataclass_fields__}
    kw.setdefault("repeats", 1)
    kw.setdefault("warmup", 0.0)
    kw.setdefault("duration", 0.2)
    return RunPlan(WorkloadConfig(**wl), proto, ProtocolOptions(**(opts or {})), **kw)


def test_measurement_defaults():
    p = RunPlan()
    assert (p.duration, p.repeats, p.epoch_interval) == (3.0, 5, 0.040)
    assert p.options.gc_interval <= 1e-4


def test_single_thread_read_only():
    m = run_experiment(plan(ycsb_preset="C", cardinality=1000)).samples[0]
    assert m.commits > 0 and m.aborts == 0


def test_throughput_arithmetic():
    m = Metrics(commits=300, aborts=100, duration=3.0)
    assert m.throughput == 100
    assert m.abort_ratio == 0.25


def test_repeats_give_samples_and_aggregate():
    r = run_experiment(plan(repeats=5, duration=0.05, cardinality=100))
    assert len(r.samples) == 5
    agg = r.aggregate()
    commits = [s.commits for s in r.samples]
    assert agg["commits"] == {"mean": sum(commits) / 5, "min": min(commits), "max": max(commits)}
    assert agg["status"] == "ok"


def test_aggregate_skips_failed_samples():
    good, bad = Metrics(commits=10, duration=1), Metrics(commits=0, duration=1, status="failed")
    agg = aggregate([good, bad])
    assert agg["commits"]["mean"] == 10 and agg["status"] == "failed"


@pytest.mark.parametrize("phases,shares", [
    ({"read": 60, "validation": 40}, {"read": 0.6, "validation": 0.4}),
    ({"read": 1, "validation": 1, "write": 2}, {"read": 0.25, "validation": 0.25, "write": 0.5}),
])
def test_latency_breakdown(phases, shares):
    b = latency_breakdown(phases)
    assert b.shares == pytest.approx(shares)
    assert sum(b.shares.values()) == pytest.approx(1, abs=1e-9)
    assert not b.no_data


def test_latency_breakdown_without_data():
    b = latency_breakdown(dict.fromkeys(PHASES, 0))
    assert b.no_data and set(b.shares.values()) == {0.0}


def test_read_only_silo_has_no_write_phase():
    m = run_experiment(plan(ycsb_preset="C", cardinality=1000, threads=2)).samples[0]
    b = latency_breakdown(m.phase_ns)
    assert b.shares["write"] == 0
    assert 0 < b.shares["validation"] < b.shares["read"]


@pytest.mark.parametrize("proto", ["silo", "tictoc", "mocc", "2pl", "si", "ermia", "mvto"])
def test_metric_invariants(proto):
    m = run_experiment(plan(proto, threads=3, cardinality=20, skew=0.5, duration=0.25)).samples[0]
    assert m.status == "ok"
    assert m.commits + m.aborts == m.attempts
    assert sum(m.aborts_by_reason.values()) == m.aborts
    assert sum(m.per_worker_commits) == m.commits
    assert sum(m.phase_ns.values()) <= m.duration * 3 * 1e9 * 1.05
    assert m.throughput == m.commits / m.duration


def test_read_phase_extension_is_honored():
    delay = 2e-3
    m = run_experiment(plan(opts={"read_phase_extension": delay}, cardinality=100,
                            threads=2)).samples[0]
    assert m.phase_ns["read"] / m.commits >= delay * 1e9


def test_long_transaction_injection():
    base = run_experiment(plan(threads=3, cardinality=10**4, duration=0.4)).samples[0]
    m = run_experiment(plan(threads=3, cardinality=10**4, duration=0.4,
                            long_txn=LongTxn(worker=1, delay=0.03))).samples[0]
    lat = m.per_worker_latency_ns
    assert lat[1] >= 0.03e9
    assert sum(x >= 0.03e9 for x in lat) == 1
    ref = max(base.per_worker_latency_ns)
    assert all(lat[w] <= 2 * ref for w in (0, 2))


def test_sorted_2pl_wait_never_deadlocks():
    m = run_experiment(plan("2pl", {"watchdog": True}, threads=4, cardinality=16,
                            skew=0.8, rmw=True, duration=0.5)).samples[0]
    assert m.status == "ok" and m.commits > 0
    assert m.deadlock_cycles == 0


def test_fixed_txn_count_mode():
    m = run_experiment(plan("tictoc", threads=3, cardinality=50, txns_per_worker=120)).samples[0]
    assert m.per_worker_commits == [120, 120, 120]


# ---------------------------------------------------------------- capture

def test_capture_counts_commits_only():
    r = run_experiment(plan("silo", threads=2, cardinality=16, skew=0.7,
                            txns_per_worker=500, capture=True))
    m, h = r.samples[0], r.history
    assert len(h) == m.commits == 1000
    tags = [(t.id, k) for t in h for k, _ in t.writes]
    assert len(tags) == len(set(tags))
    assert all(tag == t.id for t in h for _, tag in t.writes)
    assert len({t.id for t in h}) == len(h)


def test_capture_guard():
    with pytest.raises(CaptureRefused):
        HistoryCapture(threads=4, cardinality=5000)
    v = plan_validate(plan(threads=2, cardinality=10**4, capture=True))
    assert "capture" in [f for f, _ in v.errors]


@pytest.mark.parametrize("kw,field", [
    (dict(repeats=0), "repeats"),
    (dict(long_txn=LongTxn(worker=3)), "long_txn"),
    (dict(opts={"thomas_write": True}), "thomas_write"),
    (dict(proto="mvto", opts={"overwrite_inline": True}), "overwrite_inline"),
    (dict(proto="mvto", opts={"gc": "sometimes"}), "gc"),
    (dict(proto="nope"), "protocol"),
    (dict(skew=2.0), "skew"),
    (dict(interleave=1.5), "interleave"),
])
def test_plan_validation(kw, field):
    p = plan(**kw)
    assert field in [f for f, _ in plan_validate(p).errors]
    with pytest.raises(ConfigError):
        run_experiment(p)


def test_overwrite_inline_on_partitioned_workload():
    r = run_experiment(plan("mvto", {"overwrite_inline": True, "inlining": True}, threads=2,
                            cardinality=64, partitioned=True, txns_per_worker=300, capture=True))
    assert r.ok
    assert r.samples[0].max_chain <= 1 or r.samples[0].live_versions_max == 64


def test_pinning_is_best_effort():
    assert isinstance(pin_thread(10**6), bool)
    m = run_experiment(plan(threads=len(os.sched_getaffinity(0)) + 1, cardinality=100,
                            duration=0.1)).samples[0]
    assert m.oversubscribed and m.status == "ok"


# -------------------------------------------------------------- fetch_add

def test_fetch_add_count_matches_throughput():
    r = fetch_add_bench(1, 0.3)
    assert r.total == sum(r.per_thread)
    assert r.throughput * r.duration == pytest.approx(r.total)


def test_fetch_add_rejects_zero_threads():
    with pytest.raises(ValueError):
        fetch_add_bench(0)


def _mean_tp(threads, decentralized, runs=3):
    return sum(fetch_add_bench(threads, 0.3, decentralized).throughput for _ in range(runs)) / runs


@pytest.mark.slow
def test_fetch_add_single_thread_is_fastest():
    one = _mean_tp(1, False)
    assert one >= _mean_tp(8, False)


@pytest.mark.slow
def test_fetch_add_two_counters_beat_one():
    assert _mean_tp(2, True) >= 1.5 * _mean_tp(2, False)
