"""Strict two-phase locking over per-record reader/writer locks."""
from __future__ import annotations

from ..storage import (rw_release_exclusive, rw_release_shared, rw_try_exclusive,
                       rw_try_shared, rw_try_upgrade)
from .base import Abort, AbortReason, Engine, TxnCtx, TxnStatus


class TwoPL(Engine):
    """Wait mode relies on the workload presenting keys in ascending order;
    a blocked upgrade could still deadlock, so it aborts instead."""

    name = "2pl"

    def _acquire(self, ctx: TxnCtx, key: int, mode: str) -> None:
        held = ctx.locks.get(key)
        if held == "X" or held == mode:
            return
        rw = self.table.rw
        if held == "S":
            if rw_try_upgrade(rw, key):
                ctx.locks[key] = "X"
                return
            raise Abort(AbortReason.WRITE_LOCK_CONFLICT if self.opts.no_wait
                        else AbortReason.DEADLOCK_AVOIDANCE, key)
        attempt = rw_try_exclusive if mode == "X" else rw_try_shared
        if self.opts.no_wait:
            if not attempt(rw, key):
                raise Abort(AbortReason.WRITE_LOCK_CONFLICT, key)
        else:
            while not attempt(rw, key):
                self.spin(ctx, key)
            self.waiting[ctx.worker] = None
        ctx.locks[key] = mode

    def read(self, ctx: TxnCtx, key: int, for_update: bool = False) -> bytes:
        if key in ctx.write_set:
            return ctx.write_set[key]
        self._acquire(ctx, key, "X" if for_update else "S")
        data = self.table.read_payload(key)
        ctx.read_set.append((key, self.table.tags[key]))
        return data

    def write(self, ctx: TxnCtx, key: int, payload: bytes) -> None:
        self._acquire(ctx, key, "X")
        ctx.write_set[key] = payload

    def commit(self, ctx: TxnCtx) -> None:
        ctx.enter("write")
        self.take_pos(ctx)
        for k, p in ctx.write_set.items():
            self.table.write_payload(k, p, ctx.txn_id)
        self.release(ctx)
        ctx.status = TxnStatus.COMMITTED

    def release(self, ctx: TxnCtx) -> None:
        rw = self.table.rw
        for k, m in ctx.locks.items():
            if m == "X":
                rw_release_exclusive(rw, k)
            else:
                rw_release_shared(rw, k)
        ctx.locks.clear()
        self.waiting[ctx.worker] = None

    def waits_for(self) -> dict:
        """Snapshot of worker -> workers holding the lock it is waiting on."""
        graph = {}
        for w, key in enumerate(self.waiting):
            if key is None:
                continue
            graph[w] = {o for o, c in enumerate(self.ctxs)
                        if o != w and key in c.locks}
        return graph
