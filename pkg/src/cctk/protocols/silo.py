"""Silo and MOCC (Silo plus temperature-driven pessimistic locking)."""
from __future__ import annotations

from ..storage import (EPOCH_MASK, EPOCH_SHIFT, LOCK_BIT, SEQ_MASK, SEQ_SHIFT,
                       read_consistent, rw_release_exclusive, rw_release_shared,
                       rw_try_exclusive, rw_try_shared, tid_pack, try_lock,
                       unlock)
from .base import Abort, AbortReason, Engine, TxnCtx, TxnStatus

UNLOCKED = ~LOCK_BIT


def silo_commit_tid(observed, last_tid: int, epoch: int) -> int:
    """Smallest TID in ``epoch`` (or later, should a TID from a newer epoch
    have been observed) that exceeds every word in ``observed`` and
    ``last_tid``."""
    top = last_tid & UNLOCKED
    for w in observed:
        w &= UNLOCKED
        if w > top:
            top = w
    e = (top >> EPOCH_SHIFT) & EPOCH_MASK
    if e < epoch:
        return tid_pack(False, epoch, 0)
    seq = (top >> SEQ_SHIFT) & SEQ_MASK
    if seq == SEQ_MASK:
        return tid_pack(False, e + 1, 0)
    return tid_pack(False, e, seq + 1)


class Silo(Engine):
    name = "silo"

    def read(self, ctx: TxnCtx, key: int, for_update: bool = False) -> bytes:
        if key in ctx.write_set:
            return ctx.write_set[key]
        data, tag, word, retries = read_consistent(self.table, key, self.table.tid)
        ctx.extra_reads += retries
        ctx.read_set.append((key, word, tag))
        return data

    def _lock_writes(self, ctx: TxnCtx, keys) -> int:
        words = self.table.tid
        top = ctx.last_commit_tid
        for k in keys:
            if self.opts.no_wait:
                if not try_lock(words, k):
                    raise Abort(AbortReason.WRITE_LOCK_CONFLICT, k)
            else:
                while not try_lock(words, k):
                    self.spin(ctx, k)
                self.waiting[ctx.worker] = None
            ctx.pending.append(k)
            w = words._v[k] & UNLOCKED
            if w > top:
                top = w
        return top

    def _validate(self, ctx: TxnCtx, top: int) -> int:
        vals = self.table.tid._v
        ws = ctx.write_set
        for key, word, _ in ctx.read_set:
            cur = vals[key]
            if (cur & UNLOCKED) != word or (cur & LOCK_BIT and key not in ws):
                self.on_validation_failure(ctx, key)
                raise Abort(AbortReason.READ_VALIDATION, key)
            if word > top:
                top = word
        return top

    def on_validation_failure(self, ctx: TxnCtx, key: int) -> None:
        pass

    def commit(self, ctx: TxnCtx) -> None:
        ctx.enter("validation")
        keys = sorted(ctx.write_set)
        top = self._lock_writes(ctx, keys)
        epoch = self.epochs.epoch  # read after every write lock is held
        top = self._validate(ctx, top)
        tid = silo_commit_tid((top,), 0, epoch) if keys else None
        if keys:
            ctx.enter("write")  # read-only commits have no write phase
        self.take_pos(ctx)
        words = self.table.tid
        for k in keys:
            self.table.write_payload(k, ctx.write_set[k], ctx.txn_id)
            unlock(words, k, tid)
        ctx.pending.clear()
        self.after_commit(ctx)
        if tid is not None:
            ctx.last_commit_tid = tid
        ctx.commit_ts = tid
        ctx.status = TxnStatus.COMMITTED

    def after_commit(self, ctx: TxnCtx) -> None:
        pass

    def release(self, ctx: TxnCtx) -> None:
        words = self.table.tid
        for k in ctx.pending:
            unlock(words, k)
        ctx.pending.clear()
        self.waiting[ctx.worker] = None


TEMP_CAP = (1 << 32) - 1


class MOCC(Silo):
    """Silo whose hot records are read under a reader/writer lock.

    ``ctx.locks`` maps key -> "S"/"X" for held reader/writer locks and is
    always acquired in ascending key order.
    """

    name = "mocc"

    # temperature word: epoch_tag << 32 | count
    def temperature(self, key: int) -> int:
        w = self.table.temp._v[key]
        return w & TEMP_CAP if (w >> 32) == self.epochs.epoch else 0

    def is_hot(self, key: int) -> bool:
        return self.temperature(key) >= self.opts.hot_threshold

    def temperature_bump(self, key: int, epoch: int | None = None) -> None:
        epoch = self.epochs.epoch if epoch is None else epoch
        temp = self.table.temp
        while True:
            w = temp._v[key]
            if (w >> 32) != epoch:
                new = (epoch << 32) | 1
            else:
                new = (epoch << 32) | min(TEMP_CAP, (w & TEMP_CAP) + 1)
            if temp.cas(key, w, new):
                return

    def on_validation_failure(self, ctx: TxnCtx, key: int) -> None:
        self.temperature_bump(key)

    def read(self, ctx: TxnCtx, key: int, for_update: bool = False) -> bytes:
        if key in ctx.write_set:
            return ctx.write_set[key]
        if self.is_hot(key):
            self.lock_canonical(ctx, key, "X" if for_update else "S")
        return super().read(ctx, key, for_update)

    def _rw_acquire(self, ctx: TxnCtx, key: int, mode: str) -> None:
        rw = self.table.rw
        attempt = rw_try_exclusive if mode == "X" else rw_try_shared
        while not attempt(rw, key):
            self.spin(ctx, key)
        self.waiting[ctx.worker] = None
        ctx.locks[key] = mode

    def _rw_release(self, key: int, mode: str) -> None:
        if mode == "X":
            rw_release_exclusive(self.table.rw, key)
        else:
            rw_release_shared(self.table.rw, key)

    def lock_canonical(self, ctx: TxnCtx, key: int, mode: str) -> None:
        """Lock ``key`` keeping the held set acquired in ascending order:
        held locks on larger keys are dropped first and re-taken after."""
        held = ctx.locks
        cur = held.get(key)
        if cur == "X" or cur == mode:
            return
        if cur == "S":  # upgrade: drop S then take X like a fresh lock
            self._rw_release(key, held.pop(key))
        larger = sorted(k for k in held if k > key)
        relock = [(k, held.pop(k)) for k in larger]
        for k, m in relock:
            self._rw_release(k, m)
        self._rw_acquire(ctx, key, mode)
        for k, m in relock:
            self._rw_acquire(ctx, k, m)

    def _lock_writes(self, ctx: TxnCtx, keys) -> int:
        # all reader/writer locks first: a transaction never waits on a
        # reader/writer lock while holding a TID lock, so readers spinning
        # on a TID lock cannot close a cycle
        for k in keys:
            self.lock_canonical(ctx, k, "X")
        words = self.table.tid
        top = ctx.last_commit_tid
        for k in keys:
            # every TID writer holds X first, so this is uncontended
            while not try_lock(words, k):
                self.spin(ctx, k)
            ctx.pending.append(k)
            w = words._v[k] & UNLOCKED
            if w > top:
                top = w
        return top

    def _release_rw(self, ctx: TxnCtx) -> None:
        for k, m in ctx.locks.items():
            self._rw_release(k, m)
        ctx.locks.clear()

    def after_commit(self, ctx: TxnCtx) -> None:
        self._release_rw(ctx)

    def release(self, ctx: TxnCtx) -> None:
        super().release(ctx)
        self._release_rw(ctx)
