"""Barrier-controlled schedules shared by unit and acceptance tests."""
from __future__ import annotations

import threading

from conftest import engine
from cctk.oracle import CommittedTxn, History
from cctk.protocols import Abort


def write_skew(protocol: str, timeout: float = 10.0):
    """T0: r(x) w(y); T1: r(y) w(x), both reads done before either commits.

    Returns ([outcome per txn], History of the committed ones) where an
    outcome is "commit" or the AbortReason.
    """
    e = engine(protocol, cardinality=2, workers=2)
    barrier = threading.Barrier(2, timeout=timeout)
    outcome = [None, None]
    entries = [None, None]

    def txn(w: int) -> None:
        ctx = e.begin(w)
        src, dst = (0, 1) if w == 0 else (1, 0)
        try:
            e.read(ctx, src)
            barrier.wait()
            e.write(ctx, dst, bytes([w + 1]) * 8)
            e.commit(ctx)
        except Abort as a:
            e.abort(ctx, a.reason)
            outcome[w] = a.reason
            return
        outcome[w] = "commit"
        entries[w] = CommittedTxn(ctx.txn_id, w, ctx.pos or 0, e.capture_reads(ctx),
                                  [(dst, ctx.txn_id)], ctx.begin_ts)

    threads = [threading.Thread(target=txn, args=(w,)) for w in range(2)]
    for t in threads:
        t.start()
    for t in threads:
        t.join(timeout)
        assert not t.is_alive(), "write-skew schedule hung"
    committed = sorted((x for x in entries if x is not None), key=lambda t: (t.pos, t.id))
    return outcome, History(committed)
