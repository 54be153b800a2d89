"""TicToc: data-driven timestamps with lazy read-timestamp extension."""
from __future__ import annotations

import time
from collections import deque

from ..storage import (LOCK_BIT, RunStopped, read_consistent, try_lock, ts_make,
                       ts_rts, ts_wts, unlock)
from .base import Abort, AbortReason, Engine, TxnCtx, TxnStatus


def tictoc_commit_ts(read_words, write_words) -> int:
    """max(rts + 1 over the locked write records, wts over observed reads)."""
    ts = 0
    for w in write_words:
        r = ts_rts(w) + 1
        if r > ts:
            ts = r
    for w in read_words:
        r = ts_wts(w)
        if r > ts:
            ts = r
    return ts


def history_covers(history, observed_wts: int, commit_ts: int) -> bool:
    """True when the version written at ``observed_wts`` is known to have
    stayed current until some overwrite at a timestamp above ``commit_ts``."""
    if not history:
        return False
    for old, new in tuple(history):
        if old == observed_wts:
            return commit_ts < new
    return False


class TicToc(Engine):
    name = "tictoc"

    def read(self, ctx: TxnCtx, key: int, for_update: bool = False) -> bytes:
        if key in ctx.write_set:
            return ctx.write_set[key]
        data, tag, word, retries = read_consistent(self.table, key, self.table.ts)
        ctx.extra_reads += retries
        ctx.read_set.append((key, word, tag))
        return data

    def _lock_all(self, ctx: TxnCtx, keys) -> None:
        words = self.table.ts
        if not self.opts.no_wait_tt:
            for k in keys:
                while not try_lock(words, k):
                    self.spin(ctx, k)
                ctx.pending.append(k)
            self.waiting[ctx.worker] = None
            return
        # NoWaitTT: on any conflict drop every lock, pause, start over
        while True:
            for k in keys:
                if not try_lock(words, k):
                    self.release(ctx)
                    break
                ctx.pending.append(k)
            else:
                return
            if self.stop.is_set():
                raise RunStopped()
            time.sleep(self.opts.no_wait_tt_delay)

    def _preemptive_check(self, ctx: TxnCtx) -> None:
        vals = self.table.ts._v
        lower = tictoc_commit_ts([w for _, w, _ in ctx.read_set],
                                 [vals[k] for k in ctx.write_set])
        hist = self.table.history
        for key, word, _ in ctx.read_set:
            if ts_rts(word) >= lower:
                continue
            cur = vals[key]
            if ts_wts(cur) != ts_wts(word) and ts_rts(word) < ts_wts(cur):
                if not (self.opts.timestamp_history and history_covers(hist[key], ts_wts(word), lower)):
                    raise Abort(AbortReason.READ_VALIDATION, key)

    def commit(self, ctx: TxnCtx) -> None:
        ctx.enter("validation")
        ws = ctx.write_set
        keys = sorted(ws)
        if self.opts.preemptive_abort:
            self._preemptive_check(ctx)
        self._lock_all(ctx, keys)
        words = self.table.ts
        vals = words._v
        commit_ts = tictoc_commit_ts([w for _, w, _ in ctx.read_set],
                                     [vals[k] for k in keys])
        hist = self.table.history
        use_hist = self.opts.timestamp_history
        for key, word, _ in ctx.read_set:
            if ts_rts(word) >= commit_ts:
                continue  # already valid at commit_ts; no store needed
            wts = ts_wts(word)
            while True:
                cur = vals[key]
                if ts_wts(cur) != wts:
                    if use_hist and history_covers(hist[key], wts, commit_ts):
                        break
                    raise Abort(AbortReason.READ_VALIDATION, key)
                if key in ws:
                    break  # locked by us; the write sets rts anyway
                if cur & LOCK_BIT:
                    raise Abort(AbortReason.READ_VALIDATION, key)
                if ts_rts(cur) >= commit_ts:
                    break
                if words.cas(key, cur, ts_make(wts, commit_ts)):
                    ctx.read_stores += 1
                    break
        ctx.enter("write")
        self.take_pos(ctx)
        new = ts_make(commit_ts, commit_ts)
        for k in keys:
            self.table.write_payload(k, ws[k], ctx.txn_id)
            if use_hist:
                h = hist[k]
                if h is None:
                    h = hist[k] = deque(maxlen=self.opts.history_size)
                h.append((ts_wts(vals[k]), commit_ts))
            unlock(words, k, new)
        ctx.pending.clear()
        ctx.commit_ts = commit_ts
        ctx.status = TxnStatus.COMMITTED

    def release(self, ctx: TxnCtx) -> None:
        words = self.table.ts
        for k in ctx.pending:
            unlock(words, k)
        ctx.pending.clear()
        self.waiting[ctx.worker] = None
