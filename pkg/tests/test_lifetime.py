import random

import pytest
from hypothesis import given, settings, strategies as st

import oracles
from conftest import engine, set_chain
from cctk import lifetime
from cctk.harness import RunPlan, run_experiment, run_once
from cctk.lifetime import (VersionCache, WatermarkTracker, WriteDecision,
                           aggressive_gc_sweep, rapid_gc_sweep, thomas_write_filter,
                           watermark_compute)
from cctk.oracle import check_snapshot_reads
from cctk.protocols import Abort, AbortReason, ProtocolOptions
from cctk.storage import INF, Status, table_build
from cctk.workload import WorkloadConfig

P = b"\x05" * 8


@pytest.mark.parametrize("active,newest,expected", [
    ([10, 15], 0, 10),
    ([], 42, 42),
    ([None, 12, 3, 40], 50, 3),
])
def test_watermark_compute(active, newest, expected):
    assert watermark_compute(active, newest).value == expected


@given(st.lists(st.tuples(st.lists(st.integers(0, 100), max_size=4), st.integers(0, 100))))
def test_watermark_tracker_is_monotone(updates):
    tr = WatermarkTracker()
    last = 0
    for active, newest in updates:
        v = tr.update(active, newest).value
        assert v >= last
        last = v


def _wts(table, key=0):
    return [v.wts for v in table.chain(key)]


@pytest.mark.parametrize("wm,reclaimed,left", [
    (10, 2, [9]),
    (4, 0, [9, 5, 2]),
    (5, 1, [9, 5]),
])
def test_rapid_gc_examples(wm, reclaimed, left):
    t = table_build(1, 4, "mvto")
    set_chain(t, 0, [(9, "C"), (5, "C"), (2, "C")])
    assert rapid_gc_sweep(t, wm) == reclaimed
    assert _wts(t) == left


def test_rapid_gc_single_version():
    t = table_build(3, 4, "si")
    assert rapid_gc_sweep(t, 100) == 0


def _committed_chain(rng, n):
    ws = sorted(rng.sample(range(1, 60), n), reverse=True)
    return [(w, "C") for w in ws]


@settings(max_examples=300)
@given(st.integers(0, 2**32), st.integers(1, 8), st.integers(0, 65))
def test_rapid_gc_matches_brute_force_visibility(seed, n, wm):
    chain = _committed_chain(random.Random(seed), n)
    t = table_build(1, 4, "mvto")
    set_chain(t, 0, chain)
    expect_gone = {chain[i][0] for i in oracles.reclaimable(chain, wm)}
    rapid_gc_sweep(t, wm)
    assert set(w for w, _ in chain) - set(_wts(t)) == expect_gone


def test_aggressive_truncates_to_budget():
    t = table_build(1, 4, "mvto")
    nodes = set_chain(t, 0, [(w, "C") for w in range(10, 0, -1)])
    assert aggressive_gc_sweep(t, 2) == 8
    assert _wts(t) == [10, 9]
    assert all(v.status is Status.NON_VISIBLE for v in nodes[2:])


@settings(max_examples=200)
@given(st.integers(0, 2**32), st.integers(1, 8), st.integers(1, 5))
def test_aggressive_keeps_k_newest(seed, n, k):
    chain = _committed_chain(random.Random(seed), n)
    t = table_build(1, 4, "mvto")
    set_chain(t, 0, chain)
    aggressive_gc_sweep(t, k)
    assert set(_wts(t)) == {chain[i][0] for i in oracles.truncate_keep(chain, k)}


@settings(max_examples=200)
@given(st.integers(0, 2**32), st.integers(1, 8), st.integers(0, 65))
def test_aggressive_with_infinite_budget_is_rapid(seed, n, wm):
    chain = _committed_chain(random.Random(seed), n)
    a, b = table_build(1, 4, "mvto"), table_build(1, 4, "mvto")
    set_chain(a, 0, chain)
    set_chain(b, 0, chain)
    assert aggressive_gc_sweep(a, INF, watermark=wm) == rapid_gc_sweep(b, wm)
    assert _wts(a) == _wts(b)


@given(st.integers(0, 2**32), st.integers(1, 8), st.integers(0, 3), st.integers(1, 4))
def test_aggressive_bound_counts_inflight_writers(seed, n, pending, k):
    rng = random.Random(seed)
    chain = _committed_chain(rng, n)
    top = chain[0][0]
    chain = [(top + i + 1, "P") for i in range(pending)][::-1] + chain
    t = table_build(1, 4, "mvto")
    set_chain(t, 0, chain)
    stats = {}
    aggressive_gc_sweep(t, k, stats=stats)
    assert len(t.chain(0)) <= k + pending
    assert stats["max_chain"] == len(t.chain(0))


def test_aggressive_spares_pinned_reader():
    t = table_build(1, 4, "mvto")
    set_chain(t, 0, [(w, "C") for w in (50, 40, 30, 20, 10)])
    aggressive_gc_sweep(t, 1, pinned=[25])
    assert _wts(t) == [50, 20]


def test_long_reader_misses_then_retries():
    e = engine("mvto", cardinality=2, gc="aggressive", gc_budget=2)
    old = e.begin(0)
    for _ in range(10):
        w = e.begin(1)
        e.write(w, 0, P)
        e.commit(w)
    e.gc_tick(1)
    assert len(e.table.chain(0)) == 2
    with pytest.raises(Abort) as exc:
        e.read(old, 0)
    assert exc.value.reason is AbortReason.GC_READ_FAIL
    e.abort(old, exc.value.reason)
    retry = e.begin(0)
    assert e.read(retry, 0) == P
    e.commit(retry)


def test_starvation_guard_pins_begin_ts():
    e = engine("mvto", gc="aggressive", gc_budget=1, starvation_retries=2)
    for _ in range(3):
        ctx = e.begin(0)
        e.abort(ctx, AbortReason.GC_READ_FAIL)
    ctx = e.begin(0)
    assert e.pinned[0] == ctx.begin_ts
    e.commit(ctx)
    assert e.pinned[0] is None


# -------------------------------------------------------------- the cache

def test_cache_empty_falls_back():
    c = VersionCache(0, quarantine=0)
    assert c.acquire() is not None
    assert c.fallback_alloc == 1


def test_cache_is_lifo():
    c = VersionCache(0, quarantine=0)
    c.prewarm(3)
    slot = c.acquire()
    c.release(slot)
    assert c.acquire() is slot
    assert c.fallback_alloc == 0


def test_cache_quarantines_for_epochs():
    c = VersionCache(0, quarantine=2)
    slot = c.acquire(epoch=5)
    c.release(slot, epoch=5)
    assert c.acquire(epoch=6) is not slot
    c.release(c.acquire(epoch=6), epoch=6)
    assert c.acquire(epoch=7) is slot


def test_prewarmed_cache_reaches_steady_state():
    e = engine("mvto", cardinality=8, workers=1, prewarm=64)
    rng = random.Random(1)
    marks = []
    for i in range(1500):
        e.epochs.publish(0)
        e.epochs.advance()
        ctx = e.begin(0)
        e.write(ctx, rng.randrange(8), P)
        e.commit(ctx)
        e.gc_tick(0)
        if i in (200, 1499):
            marks.append(e.fallback_allocs())
    assert marks[0] == marks[1]


# ------------------------------------------------------------ thomas rule

@pytest.mark.parametrize("chain,cts,decision", [
    ([(9, "C"), (2, "C")], 7, WriteDecision.SKIP_AS_NON_VISIBLE),
    ([(5, "C"), (2, "C")], 7, WriteDecision.INSTALL),
    ([(9, "A"), (5, "C")], 7, WriteDecision.INSTALL),
])
def test_thomas_filter_examples(chain, cts, decision):
    t = table_build(1, 4, "mvto")
    set_chain(t, 0, chain)
    assert thomas_write_filter(t, 0, cts) is decision


@given(st.lists(st.tuples(st.integers(0, 30), st.sampled_from("CCA")), min_size=1, max_size=6),
       st.integers(0, 35))
def test_thomas_filter_matches_brute_force(entries, cts):
    seen, chain = set(), []
    for w, s in sorted(entries, key=lambda e: -e[0]):
        if w not in seen and w != cts:
            seen.add(w)
            chain.append((w, s))
    if not chain:
        return
    t = table_build(1, 4, "mvto")
    set_chain(t, 0, chain)
    skip = thomas_write_filter(t, 0, cts) is WriteDecision.SKIP_AS_NON_VISIBLE
    assert skip == (not oracles.write_ever_newest(chain, cts))


def test_thomas_filter_not_consulted_for_read_writes(monkeypatch):
    import cctk.protocols.mvto as mvto
    calls = []
    monkeypatch.setattr(mvto, "thomas_write_filter",
                        lambda *a: calls.append(a) or WriteDecision.INSTALL)
    e = engine("mvto", thomas_write=True)
    ctx = e.begin(0)
    e.read(ctx, 1)
    e.write(ctx, 1, P)
    e.write(ctx, 2, P)
    e.commit(ctx)
    assert [c[1] for c in calls] == [2]


# ---------------------------------------------------------- whole runs

@pytest.mark.parametrize("opts", [
    {}, {"gc": "aggressive", "gc_budget": 2}, {"thomas_write": True},
    {"version_reuse": False}, {"inlining": True},
])
def test_version_accounting_balances(opts):
    plan = RunPlan(WorkloadConfig(cardinality=16, threads=3, skew=0.6, txn_size=4, seed=2),
                   "mvto", ProtocolOptions(**opts), repeats=1, txns_per_worker=200)
    m, _, eng = run_once(plan)
    assert m.status == "ok"
    walked = eng.table.live_versions()
    assert sum(eng.births) == sum(eng.reclaimed) + (walked - eng.table.cardinality) + sum(eng.aborted)
    assert eng.live_versions() == walked


@pytest.mark.parametrize("proto", ["mvto", "si", "ermia"])
def test_reads_never_see_reclaimed_versions(proto):
    plan = RunPlan(WorkloadConfig(cardinality=10, threads=3, skew=0.7, txn_size=5, seed=4),
                   proto, ProtocolOptions(gc_interval=1e-5), repeats=1,
                   txns_per_worker=300, capture=True)
    r = run_experiment(plan)
    assert r.ok
    assert check_snapshot_reads(r.history) == []


def test_max_chain_length_helper():
    t = table_build(2, 4, "mvto")
    set_chain(t, 1, [(3, "C"), (2, "C"), (1, "C")])
    assert lifetime.max_chain_length(t) == 3
    assert lifetime.is_unbounded(INF) and not lifetime.is_unbounded(4)
