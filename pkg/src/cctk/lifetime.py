"""Version lifetime: watermark GC, aggressive GC, the per-worker version
cache and the non-visible (Thomas) write filter."""
from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .storage import INF, Status, Table, Version, note_store


@dataclass(frozen=True)
class Watermark:
    value: float
    updated_at: float = field(default_factory=time.monotonic)


def watermark_compute(active: Iterable, newest_commit) -> Watermark:
    """Oldest timestamp any in-flight transaction may still read at."""
    active = [t for t in active if t is not None]
    return Watermark(min(active) if active else newest_commit)


class WatermarkTracker:
    """Keeps the published watermark non-decreasing across recomputations."""

    def __init__(self):
        self.current = Watermark(0)

    def update(self, active: Iterable, newest_commit) -> Watermark:
        wm = watermark_compute(active, newest_commit)
        if wm.value < self.current.value:
            wm = Watermark(self.current.value)
        self.current = wm
        return wm


class VersionCache:
    """Thread-local free list of version slots.

    Reclaimed slots wait in quarantine until the global epoch has moved
    ``quarantine`` epochs past their retirement so no reader that started
    before the unlink can still hold a pointer into a recycled slot.
    """

    def __init__(self, owner: int, quarantine: int = 2, table: Optional[Table] = None):
        self.owner = owner
        self.quarantine = quarantine
        self.table = table
        self.free: list = []
        self.pending: list = []
        self.fallback_alloc = 0
        self.capacity_estimate = 0

    def prewarm(self, n: int) -> None:
        self.capacity_estimate += n
        self.free.extend(Version() for _ in range(n))

    def acquire(self, epoch: int = 0) -> Version:
        if self.pending and self.pending[0].retired + self.quarantine <= epoch:
            self._drain(epoch)
        if self.free:
            return self.free.pop()
        self.fallback_alloc += 1
        return Version()

    def release(self, slot: Version, epoch: int = 0) -> None:
        slot.retired = epoch
        if self.quarantine == 0:
            self._recycle(slot)
        else:
            self.pending.append(slot)

    def _drain(self, epoch: int) -> None:
        keep = 0
        for i, v in enumerate(self.pending):
            if v.retired + self.quarantine > epoch:
                keep = i
                break
            self._recycle(v)
        else:
            keep = len(self.pending)
        del self.pending[:keep]

    def _recycle(self, slot: Version) -> None:
        if slot.home is not None and self.table is not None and self.table.inline is not None:
            self.table.inline[slot.home] = slot
        else:
            self.free.append(slot)

    def __len__(self) -> int:
        return len(self.free)


def sweep_chain(table: Table, key: int, watermark, keep_committed, pinned,
                 cache, epoch) -> tuple[int, int]:
    """Collect one chain; returns (reclaimed, surviving length)."""
    removed = []
    with table.chain_latch(key):
        prev = None
        v = table.heads[key]
        cut = False          # passed the newest version visible at the watermark
        newer = None         # previous committed/non-visible entry of the original chain
        committed_seen = 0
        length = 0
        while v is not None:
            nxt = v.next
            st = v.status
            drop = False
            if st == Status.PENDING or st == Status.ABORTED:
                pass  # owned by an in-flight writer, which unlinks aborts itself
            elif cut:
                drop = True
            else:
                if st == Status.COMMITTED:
                    committed_seen += 1
                    if committed_seen > keep_committed and not _needed(v, newer, pinned):
                        drop = True
                if v.wts <= watermark:
                    cut = True
                newer = v
            if drop:
                if prev is None:
                    table.heads[key] = nxt
                else:
                    prev.next = nxt
                if st == Status.COMMITTED:
                    v.status = Status.NON_VISIBLE
                removed.append(v)
            else:
                prev = v
                length += 1
            v = nxt
    if removed:
        note_store(len(removed))
        if cache is not None:
            for v in removed:
                cache.release(v, epoch)
    return len(removed), length


def _needed(v: Version, newer: Optional[Version], pinned) -> bool:
    # v serves every ts in [v.wts, newer.wts); spare it if a pinned reader lands there
    upper = newer.wts if newer is not None else INF
    return any(v.wts <= ts < upper for ts in pinned)


def rapid_gc_sweep(table: Table, watermark, keys: Optional[Iterable[int]] = None,
                   cache: Optional[VersionCache] = None, epoch: int = 0) -> int:
    """Unlink every version superseded by a committed version with
    ``wts <= watermark``; the version visible at the watermark survives."""
    keys = range(table.cardinality) if keys is None else keys
    return sum(sweep_chain(table, k, watermark, INF, (), cache, epoch)[0] for k in keys)


def aggressive_gc_sweep(table: Table, budget, keys: Optional[Iterable[int]] = None,
                        watermark=-1, pinned: Iterable = (),
                        cache: Optional[VersionCache] = None, epoch: int = 0,
                        stats: Optional[dict] = None) -> int:
    """Truncate each chain to its ``budget`` newest committed versions even if
    older ones are still visible to in-flight readers.  Versions visible at a
    ``pinned`` timestamp are spared.  A ``watermark`` additionally applies the
    rapid rule, so an infinite budget reduces to :func:`rapid_gc_sweep`."""
    if budget < 1:
        raise ValueError("budget must be >= 1")
    keys = range(table.cardinality) if keys is None else keys
    pinned = tuple(pinned)
    total = 0
    longest = 0
    for k in keys:
        n, length = sweep_chain(table, k, watermark, budget, pinned, cache, epoch)
        total += n
        longest = max(longest, length)
    if stats is not None:
        stats["max_chain"] = max(stats.get("max_chain", 0), longest)
    return total


class WriteDecision(enum.Enum):
    INSTALL = "install"
    SKIP_AS_NON_VISIBLE = "skip"


def thomas_write_filter(table: Table, key: int, commit_ts) -> WriteDecision:
    """Blind writes older than an already committed version never need to
    become visible."""
    v = table.heads[key]
    while v is not None:
        if v.status == Status.COMMITTED and v.wts > commit_ts:
            return WriteDecision.SKIP_AS_NON_VISIBLE
        v = v.next
    return WriteDecision.INSTALL


def max_chain_length(table: Table) -> int:
    return max(len(table.chain(k)) for k in range(table.cardinality))


def is_unbounded(budget) -> bool:
    return budget is None or (isinstance(budget, float) and math.isinf(budget))
