"""Snapshot isolation with first-updater-wins, and ERMIA (SI certified by
the serial safety net)."""
from __future__ import annotations


from ..storage import (INF, AtomicInt, RunStopped, Status, cpu_relax, note_store,
                       visible_version)
from .base import Abort, AbortReason, TxnCtx, TxnStatus
from .mv import MVEngine, SsnState

_RETRY = object()


class SnapshotIsolation(MVEngine):
    name = "si"
    ssn = False

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.counter = AtomicInt(0)
        self.active = [None] * self.workers

    def begin(self, worker: int) -> TxnCtx:
        ctx = super().begin(worker)
        # publish a lower bound first so a concurrent watermark never skips us
        self.active[worker] = self.counter.value
        with self.counter.latch:
            b = self.counter.value
        self.active[worker] = b
        ctx.begin_ts = b
        if self.ssn:
            ctx.ssn = SsnState()
        return ctx

    def active_timestamps(self) -> list:
        return list(self.active)

    def newest_timestamp(self):
        return self.counter.value

    def read(self, ctx: TxnCtx, key: int, for_update: bool = False) -> bytes:
        if key in ctx.write_set:
            return ctx.write_set[key]
        v = visible_version(self.table, key, ctx.begin_ts, wait_pending=True)
        if v is None:
            raise Abort(AbortReason.GC_READ_FAIL, key)
        if self.ssn:
            self._ssn_read(ctx, key, v)
        ctx.read_set.append((key, v, v.wts, v.writer))
        return v.payload

    def _ssn_read(self, ctx: TxnCtx, key: int, v) -> None:
        if v.wts > ctx.eta:
            ctx.eta = v.wts
        with self.table.chain_latch(key):
            if v.readers is None:
                v.readers = {}
            v.readers[ctx.worker] = ctx.ssn
            s = v.sstamp
        if s < ctx.pi:
            ctx.pi = s

    def _link(self, ctx: TxnCtx, key: int, v):
        """First-updater-wins install of a pending version (wts unknown)."""
        table = self.table
        b = ctx.begin_ts
        with table.chain_latch(key):
            head = table.heads[key]
            node = head
            pred = None
            while node is not None:
                st = node.status
                if st == Status.PENDING or st == Status.COMMITTED:
                    if node.wts > b:
                        return False
                    if st == Status.PENDING:
                        return _RETRY  # about to commit below our snapshot
                    pred = node
                    break
                node = node.next
            v.pred_wts = pred.wts if pred is not None else None
            v.next = head
            table.heads[key] = v
            if self.ssn and pred is not None:
                pred.overwriter = ctx.ssn
        note_store()
        return pred

    def commit(self, ctx: TxnCtx) -> None:
        ctx.enter("validation")
        ws = ctx.write_set
        if not ws and not self.ssn:
            ctx.pos = ctx.begin_ts
            self._finish(ctx)
            return
        for k in sorted(ws):
            v = self.new_version(ctx, k, INF, ws[k])
            while True:
                pred = self._link(ctx, k, v)
                if pred is not _RETRY:
                    break
                if self.stop.is_set():
                    self.discard(ctx, k, v, linked=False)
                    raise RunStopped()
                cpu_relax()
            if pred is False:
                self.discard(ctx, k, v, linked=False)
                raise Abort(AbortReason.WW_CONFLICT, k)
            ctx.pending.append((k, v, pred))
        counter = self.counter
        with counter.latch:
            c = counter.value + 1
            counter.value = c
            for _, v, _ in ctx.pending:
                v.wts = c
                v.rts = c
                v.pstamp = c  # the creator precedes every overwriter (ww)
            if ctx.ssn is not None:
                ctx.ssn.cstamp = c
        note_store()
        ctx.cstamp = c
        if self.ssn:
            self._ssn_precommit(ctx)
        ctx.enter("write")
        dirty = self.dirty[ctx.worker]
        for k, v, _ in ctx.pending:
            v.status = Status.COMMITTED
            dirty.add(k)
        ctx.pending.clear()
        ctx.pos = c
        ctx.commit_ts = c
        self._finish(ctx)

    def _finish(self, ctx: TxnCtx) -> None:
        if ctx.ssn is not None:
            ctx.ssn.committed = True
            ctx.ssn.final = True
        ctx.status = TxnStatus.COMMITTED
        self.active[ctx.worker] = None

    def _ssn_precommit(self, ctx: TxnCtx) -> None:
        me = ctx.ssn
        c = me.cstamp
        stop = self.stop
        pi = min(ctx.pi, c)
        eta = ctx.eta
        for _, v, _, _ in ctx.read_set:
            o = v.overwriter
            if o is not None and o is not me and o.cstamp < c:
                o.wait_final(stop)
                if o.committed and o.pi < pi:
                    pi = o.pi
            if v.sstamp < pi:
                pi = v.sstamp
        for k, _, pred in ctx.pending:
            if pred is None:
                continue
            with self.table.chain_latch(k):
                if pred.pstamp > eta:
                    eta = pred.pstamp
                readers = list(pred.readers.values()) if pred.readers else ()
            for r in readers:
                if r is not me and r.cstamp < c:
                    r.wait_final(stop)
                    if r.committed and r.cstamp > eta:
                        eta = r.cstamp
        ctx.eta = eta
        ctx.pi = pi
        if pi <= eta:
            raise Abort(AbortReason.SSN_EXCLUSION)
        me.pi = pi
        for key, v, _, _ in ctx.read_set:
            with self.table.chain_latch(key):
                if v.pstamp < c:
                    v.pstamp = c
        for k, _, pred in ctx.pending:
            if pred is not None:
                pred.sstamp = pi
        note_store(len(ctx.read_set) + len(ctx.pending))

    def release(self, ctx: TxnCtx) -> None:
        for k, v, _ in ctx.pending:
            self.discard(ctx, k, v)
        ctx.pending.clear()
        if ctx.ssn is not None:
            ctx.ssn.final = True
        self.active[ctx.worker] = None


class ERMIA(SnapshotIsolation):
    name = "ermia"
    ssn = True
