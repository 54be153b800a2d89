import threading
import time

import pytest
from hypothesis import given, settings, strategies as st

import oracles
from conftest import set_chain
from cctk.storage import (DELTA_MAX, EPOCH_MASK, LOCK_BIT, SEQ_MASK, WTS_MASK,
                          ConfigError, EpochManager, Status, TidWord, TsWord,
                          Version, install_pending, read_consistent, shared_stores,
                          table_build, tid_pack, try_lock, ts_make, ts_rts, ts_wts,
                          unlock, visible_version)

EPOCH_EDGES = [0, 1, EPOCH_MASK - 1, EPOCH_MASK]
SEQ_EDGES = [0, 1, SEQ_MASK - 1, SEQ_MASK]


@pytest.mark.parametrize("lock", [False, True])
@pytest.mark.parametrize("epoch", EPOCH_EDGES)
@pytest.mark.parametrize("seq", SEQ_EDGES)
def test_tid_word_roundtrip_boundaries(lock, epoch, seq):
    w = TidWord(lock, epoch, seq)
    packed = w.pack()
    assert 0 <= packed < 1 << 64
    assert TidWord.unpack(packed) == w
    assert packed & 0b11 == 0  # reserved bits stay clear


@given(st.booleans(), st.integers(0, EPOCH_MASK), st.integers(0, SEQ_MASK))
def test_tid_word_roundtrip(lock, epoch, seq):
    assert TidWord.unpack(tid_pack(lock, epoch, seq)) == (lock, epoch, seq)


@given(st.integers(0, EPOCH_MASK), st.integers(0, SEQ_MASK),
       st.integers(0, EPOCH_MASK), st.integers(0, SEQ_MASK))
def test_tid_order_is_lexicographic(e1, s1, e2, s2):
    assert (tid_pack(False, e1, s1) < tid_pack(False, e2, s2)) == ((e1, s1) < (e2, s2))


@pytest.mark.parametrize("epoch,seq", [(-1, 0), (EPOCH_MASK + 1, 0), (0, SEQ_MASK + 1)])
def test_tid_pack_rejects_out_of_range(epoch, seq):
    with pytest.raises(ValueError):
        tid_pack(False, epoch, seq)


@given(st.booleans(), st.integers(0, WTS_MASK), st.integers(0, DELTA_MAX))
def test_ts_word_roundtrip(lock, wts, delta):
    w = TsWord(lock, wts, delta)
    assert TsWord.unpack(w.pack()) == w
    assert w.rts >= w.wts


@given(st.integers(0, 1 << 40), st.integers(0, 1 << 20))
def test_ts_make_never_loses_rts(wts, extra):
    rts = wts + extra
    word = ts_make(wts, rts)
    assert ts_rts(word) == rts
    assert ts_wts(word) >= wts
    assert ts_wts(word) <= ts_rts(word)


def test_ts_make_overflow_advances_wts():
    word = ts_make(10, 10 + DELTA_MAX + 5)
    assert ts_wts(word) == 15
    assert ts_rts(word) == 10 + DELTA_MAX + 5


def test_table_build_silo_initial_state():
    t = table_build(1000, 4, "silo")
    assert len(t) == 1000
    assert all(TidWord.unpack(w) == (False, 0, 0) for w in t.tid.snapshot())
    assert t.read_payload(999) == bytes(4)


def test_table_build_si_single_version():
    t = table_build(1, 8, "si")
    (v,) = t.chain(0)
    assert (v.wts, v.rts, v.status) == (0, 0, Status.COMMITTED)
    assert v.payload == bytes(8)


def test_table_rows_do_not_share_cache_lines():
    t = table_build(3, 4, "tictoc")
    assert t.payload.strides[0] % 64 == 0
    assert t.payload.ctypes.data % 64 == 0


@pytest.mark.slow
def test_table_build_large_footprint():
    t = table_build(10**6, 1000, "tictoc")
    assert t.payload_bytes >= 10**9


@pytest.mark.parametrize("card,payload", [(0, 4), (10, 3)])
def test_table_build_rejects_bad_parameters(card, payload):
    with pytest.raises((ValueError, ConfigError)):
        table_build(card, payload, "silo")


def test_read_consistent_quiescent_is_store_free():
    t = table_build(4, 8, "silo")
    before = shared_stores()
    results = [read_consistent(t, 2) for _ in range(10)]
    assert shared_stores() == before
    assert all(r == results[0] for r in results)
    assert results[0][3] == 0


def test_read_consistent_waits_out_a_lock_holder():
    t = table_build(4, 8, "silo")
    words = t.tid
    assert try_lock(words, 1)
    out = []
    started = threading.Event()

    def reader():
        started.set()
        out.append(read_consistent(t, 1))

    th = threading.Thread(target=reader)
    th.start()
    started.wait()
    time.sleep(0.02)
    t.write_payload(1, b"\x07" * 8, tag=42)
    unlock(words, 1, tid_pack(False, 0, 1))
    th.join(5)
    data, tag, word, retries = out[0]
    assert data == b"\x07" * 8 and tag == 42
    assert TidWord.unpack(word).seq == 1
    assert retries >= 1


def test_try_lock_and_unlock():
    t = table_build(2, 4, "silo")
    w = t.tid
    assert try_lock(w, 0)
    assert w.load(0) & LOCK_BIT
    snapshot = w.load(0)
    assert not try_lock(w, 0)
    assert w.load(0) == snapshot
    unlock(w, 0)
    assert w.load(0) == 0


def test_unlock_of_unlocked_word_is_an_error():
    t = table_build(1, 4, "silo")
    with pytest.raises(AssertionError):
        unlock(t.tid, 0)


def test_lock_write_unlock_sequencing():
    t = table_build(1, 4, "silo")
    assert try_lock(t.tid, 0)
    t.write_payload(0, b"abcd", tag=1)
    unlock(t.tid, 0, tid_pack(False, 0, 1))
    data, tag, word, _ = read_consistent(t, 0)
    assert data == b"abcd" and TidWord.unpack(word) == (False, 0, 1)


@given(st.lists(st.integers(1, 5), min_size=1, max_size=30))
def test_tid_monotone_under_increasing_writes(steps):
    t = table_build(1, 4, "silo")
    seq = 0
    last = (0, 0)
    for s in steps:
        seq += s
        assert try_lock(t.tid, 0)
        unlock(t.tid, 0, tid_pack(False, 0, seq))
        w = TidWord.unpack(read_consistent(t, 0)[2])
        assert (w.epoch, w.seq) > last
        last = (w.epoch, w.seq)


def test_epoch_advance_unanimity():
    m = EpochManager(2)
    m.global_epoch.store(5)
    m.per_worker.store(0, 5)
    m.per_worker.store(1, 5)
    assert m.advance() == 6


def test_epoch_laggard_blocks():
    m = EpochManager(2)
    m.global_epoch.store(5)
    m.per_worker.store(0, 5)
    m.per_worker.store(1, 4)
    assert m.advance() == 5


def test_epoch_three_compliant_advances():
    m = EpochManager(3)
    for _ in range(3):
        for w in range(3):
            m.publish(w)
        m.advance()
    assert m.epoch == 3


@given(st.lists(st.one_of(st.just("adv"), st.integers(0, 2)), max_size=60))
def test_epoch_never_runs_ahead_of_workers(ops):
    m = EpochManager(3)
    for op in ops:
        if op == "adv":
            m.advance()
        else:
            m.publish(op)
        assert m.epoch - min(m.per_worker.snapshot()) <= 1


# ------------------------------------------------------------------ chains

@pytest.mark.parametrize("ts,expected", [(6, 5), (1, None), (9, 9), (100, 9)])
def test_visible_version_examples(ts, expected):
    t = table_build(1, 4, "mvto")
    set_chain(t, 0, [(9, "C"), (5, "C"), (2, "C")])
    v = visible_version(t, 0, ts)
    assert (v.wts if v else None) == expected


def test_visible_version_skips_pending_and_aborted():
    t = table_build(1, 4, "mvto")
    set_chain(t, 0, [(12, "P"), (9, "A"), (5, "C")])
    assert visible_version(t, 0, 20).wts == 5


def test_visible_version_never_returns_non_visible():
    t = table_build(1, 4, "mvto")
    set_chain(t, 0, [(9, "C"), (5, "N"), (2, "C")])
    assert visible_version(t, 0, 6) is None
    assert visible_version(t, 0, 9).wts == 9


chains = st.lists(st.tuples(st.integers(0, 40), st.sampled_from("CCCA")), min_size=1, max_size=8)


@given(chains, st.integers(0, 45))
def test_visible_version_matches_brute_force(entries, ts):
    # distinct wts, newest first, as installers produce them
    seen, chain = set(), []
    for w, s in sorted(entries, key=lambda e: -e[0]):
        if w not in seen:
            seen.add(w)
            chain.append((w, s))
    t = table_build(1, 4, "mvto")
    set_chain(t, 0, chain)
    i = oracles.visible(chain, ts)
    v = visible_version(t, 0, ts)
    assert (v.wts if v else None) == (chain[i][0] if i is not None else None)


@pytest.mark.parametrize("chain,new,ok", [
    ([(5, "C", 5)], 8, True),
    ([(5, "C", 9)], 8, False),
    ([(8, "P"), (5, "C", 5)], 7, False),
])
def test_install_pending_examples(chain, new, ok):
    t = table_build(1, 4, "mvto")
    set_chain(t, 0, chain)
    head = t.heads[0]
    v = Version(new, b"\0" * 4, Status.PENDING)
    assert install_pending(t, 0, v) is ok
    assert (t.heads[0] is v) is ok
    if not ok:
        assert t.heads[0] is head


@settings(max_examples=200)
@given(st.lists(st.tuples(st.integers(1, 50), st.sampled_from(["commit", "abort", "leave"])),
                max_size=25))
def test_chain_order_after_any_install_sequence(ops):
    t = table_build(1, 4, "mvto")
    for ts, fate in ops:
        v = Version(ts, b"\0" * 4, Status.PENDING)
        if install_pending(t, 0, v):
            if fate == "commit":
                v.status = Status.COMMITTED
            elif fate == "abort":
                v.status = Status.ABORTED
    committed = [v.wts for v in t.chain(0) if v.status == Status.COMMITTED]
    assert committed == sorted(committed, reverse=True)
    assert len(set(committed)) == len(committed)
    assert all(v.rts >= v.wts for v in t.chain(0) if v.status == Status.COMMITTED)
