"""Multi-version timestamp ordering with distributed timestamps (Cicada
style): optimistic reads, pending installs at commit, and the optional
contention sort, precheck, early abort, inlining, in-place overwrite and
non-visible-write optimizations."""
from __future__ import annotations

from ..lifetime import WriteDecision, thomas_write_filter
from ..storage import INF, AtomicArray, Status, Version, install_pending, note_store, visible_version
from .base import Abort, AbortReason, TxnCtx, TxnStatus
from .mv import MVEngine

WORKER_BITS = 8
MAX_WORKERS = 1 << WORKER_BITS


def mvto_ts(clock: int, worker: int) -> int:
    return (clock << WORKER_BITS) | worker


class MVTO(MVEngine):
    name = "mvto"

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        if self.workers > MAX_WORKERS - 1:
            raise ValueError(f"MVTO supports at most {MAX_WORKERS - 1} workers")
        n = self.workers
        self.clock = [0] * n
        # in flight: begin ts; idle: a lower bound on the next begin ts
        self.active = [mvto_ts(1, w) for w in range(n)]
        self.contention = AtomicArray(self.table.cardinality) if self.opts.sort_by_contention else None

    # ------------------------------------------------------------ clocks
    def begin(self, worker: int) -> TxnCtx:
        ctx = super().begin(worker)
        # loosely synchronized clocks: catch up to the fastest worker (reads only),
        # so a worker returning from a long stall does not begin in the past
        c = max(self.clock[worker] + 1, (ctx.seen >> WORKER_BITS) + 1, max(self.clock))
        self.clock[worker] = c
        ts = mvto_ts(c, worker)
        self.active[worker] = ts
        ctx.begin_ts = ts
        if ctx.gc_fail_streak > self.opts.starvation_retries:
            self.pinned[worker] = ts
        return ctx

    def _idle(self, ctx: TxnCtx) -> None:
        w = ctx.worker
        self.active[w] = mvto_ts(max(self.clock[w], ctx.seen >> WORKER_BITS) + 1, 0)

    def active_timestamps(self) -> list:
        return list(self.active)

    def newest_timestamp(self):
        return min(self.active)

    # ------------------------------------------------------------- reads
    def read(self, ctx: TxnCtx, key: int, for_update: bool = False) -> bytes:
        if key in ctx.write_set:
            return ctx.write_set[key]
        ts = ctx.begin_ts
        table = self.table
        head = table.heads[key]
        if head is not None and head.wts > ctx.seen and head.wts != INF:
            ctx.seen = head.wts
        v = visible_version(table, key, ts)
        if v is None:
            raise Abort(AbortReason.GC_READ_FAIL, key)
        if self.opts.early_abort and self._shadowed(key, v, ts):
            raise Abort(AbortReason.MVTO_READ_FAIL, key)
        if v.rts < ts:
            with table.chain_latch(key):
                if v.rts < ts:
                    v.rts = ts
            note_store()
        wts = v.wts
        if v.status != Status.COMMITTED:  # recycled or made non-visible meanwhile
            raise Abort(AbortReason.GC_READ_FAIL, key)
        ctx.read_set.append((key, v, wts, v.writer))
        return v.payload

    def _shadowed(self, key: int, v: Version, ts) -> bool:
        """A pending/committed/non-visible entry sits between v and ts."""
        node = self.table.heads[key]
        while node is not None and node is not v:
            if v.wts < node.wts < ts and node.status != Status.ABORTED:
                return True
            node = node.next
        return False

    def still_visible(self, key: int, v: Version, wts, ts) -> bool:
        if v.status != Status.COMMITTED or v.wts != wts:
            return False
        node = self.table.heads[key]
        while node is not None:
            if node is v:
                return True
            if wts < node.wts < ts and node.status != Status.ABORTED:
                return False
            node = node.next
        return False

    # ------------------------------------------------------------ commit
    def write(self, ctx: TxnCtx, key: int, payload: bytes) -> None:
        if self.opts.early_abort:
            head = self.table.heads[key]
            node = head
            while node is not None:
                if node.status in (Status.PENDING, Status.COMMITTED):
                    if node.wts > ctx.begin_ts or (node.status == Status.COMMITTED and node.rts > ctx.begin_ts):
                        raise Abort(AbortReason.WW_CONFLICT, key)
                    if node.status == Status.COMMITTED:
                        break
                node = node.next
        ctx.write_set[key] = payload

    def _bump_contention(self, key: int) -> None:
        if self.contention is None:
            return
        epoch = self.epochs.epoch
        arr = self.contention
        while True:
            w = arr._v[key]
            tag, count = w >> 32, w & 0xFFFFFFFF
            if tag != epoch:
                count >>= min(32, epoch - tag)
            new = (epoch << 32) | min(count + 1, 0xFFFFFFFF)
            if arr.cas(key, w, new):
                return

    def contention_of(self, key: int) -> int:
        w = self.contention._v[key]
        return (w & 0xFFFFFFFF) >> min(32, self.epochs.epoch - (w >> 32))

    def _validate_reads(self, ctx: TxnCtx) -> None:
        ts = ctx.begin_ts
        for key, v, wts, _ in ctx.read_set:
            if not self.still_visible(key, v, wts, ts):
                self._bump_contention(key)
                if v.status == Status.NON_VISIBLE:  # reclaimed under us
                    raise Abort(AbortReason.GC_READ_FAIL, key)
                raise Abort(AbortReason.READ_VALIDATION, key)

    def commit(self, ctx: TxnCtx) -> None:
        ctx.enter("validation")
        ts = ctx.begin_ts
        writes = list(ctx.write_set.items())
        if self.contention is not None:
            writes.sort(key=lambda kv: (-self.contention_of(kv[0]), kv[0]))
        if self.opts.precheck or self.opts.overwrite_inline:
            # in-place overwrites change the versions just read
            self._validate_reads(ctx)
        read_keys = ctx.read_keys if self.opts.thomas_write else ()
        for k, payload in writes:
            if self.opts.overwrite_inline:
                self._overwrite(ctx, k, payload)
                continue
            if (self.opts.thomas_write and k not in read_keys
                    and thomas_write_filter(self.table, k, ts) is WriteDecision.SKIP_AS_NON_VISIBLE):
                if not self._install_ghost(ctx, k):
                    self._bump_contention(k)
                    raise Abort(AbortReason.WW_CONFLICT, k)
                continue
            v = self.new_version(ctx, k, ts, payload)
            if not install_pending(self.table, k, v):
                self.discard(ctx, k, v, linked=False)
                self._bump_contention(k)
                raise Abort(AbortReason.WW_CONFLICT, k)
            ctx.pending.append((k, v))
        if not self.opts.overwrite_inline:
            self._validate_reads(ctx)
        ctx.enter("write")
        dirty = self.dirty[ctx.worker]
        for k, v in ctx.pending:
            v.status = Status.COMMITTED
            dirty.add(k)
        ctx.pending.clear()
        ctx.pos = ts
        ctx.commit_ts = ts
        ctx.status = TxnStatus.COMMITTED
        ctx.gc_fail_streak = 0
        self.pinned[ctx.worker] = None
        self._idle(ctx)

    def _install_ghost(self, ctx: TxnCtx, key: int) -> bool:
        """Order a skipped blind write at ts by linking a NON_VISIBLE marker
        just above its would-be predecessor; readers landing on it retry."""
        ts = ctx.begin_ts
        table = self.table
        with table.chain_latch(key):
            newer, node = None, table.heads[key]
            while node is not None:
                st = node.status
                if st != Status.ABORTED and node.wts <= ts:
                    break
                newer, node = node, node.next
            if node is None or node.wts == ts or node.status != Status.COMMITTED or node.rts > ts:
                return False
            if newer is None:
                return False  # nothing newer: the filter's precondition no longer holds
            ghost = Version(ts, b"", Status.NON_VISIBLE, ctx.txn_id)
            ghost.pred_wts = node.wts
            ghost.next = node
            newer.next = ghost
        self.births[ctx.worker] += 1
        self.dirty[ctx.worker].add(key)
        note_store()
        return True

    def _overwrite(self, ctx: TxnCtx, key: int, payload: bytes) -> None:
        """Partitioned mode: replace the single version in place."""
        table = self.table
        ts = ctx.begin_ts
        with table.chain_latch(key):
            v = table.heads[key]
            if v.wts > ts or v.rts > ts:
                raise Abort(AbortReason.WW_CONFLICT, key)
            v.payload = payload
            v.wts = v.rts = ts
            v.writer = ctx.txn_id
        note_store()

    def abort(self, ctx: TxnCtx, reason=None) -> None:
        if reason is AbortReason.GC_READ_FAIL:
            ctx.gc_fail_streak += 1
        super().abort(ctx, reason)
        self._idle(ctx)

    def release(self, ctx: TxnCtx) -> None:
        for k, v in ctx.pending:
            self.discard(ctx, k, v)
        ctx.pending.clear()
