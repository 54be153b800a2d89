"""Machinery shared by the multi-version protocols: version allocation,
per-worker garbage collection and live-version accounting."""
from __future__ import annotations


from ..lifetime import VersionCache, WatermarkTracker, sweep_chain
from ..storage import INF, RunStopped, Status, Version, cpu_relax, unlink
from .base import Engine, TxnCtx

DEFAULT_PREWARM = 256


class MVEngine(Engine):
    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        n = self.workers
        opts = self.opts
        self.caches = None
        if opts.version_reuse:
            self.caches = [VersionCache(w, quarantine=2, table=self.table) for w in range(n)]
            for c in self.caches:
                c.prewarm(opts.prewarm or DEFAULT_PREWARM)
        self.dirty = [set() for _ in range(n)]
        # per-worker slots, each written only by its owner
        self.births = [0] * n
        self.reclaimed = [0] * n
        self.aborted = [0] * n
        self.pinned = [None] * n
        self.tracker = WatermarkTracker()
        self.gc_stats = {"max_chain": 0, "sweeps": 0}
        self.live_samples: list = []

    # --------------------------------------------------------- allocation
    def new_version(self, ctx: TxnCtx, key: int, wts, payload: bytes) -> Version:
        slot = None
        table = self.table
        if table.inline is not None and table.inline[key] is not None:
            with table.chain_latch(key):
                slot = table.inline[key]
                table.inline[key] = None
        if slot is None:
            if self.caches is not None:
                slot = self.caches[ctx.worker].acquire(ctx.epoch)
            else:
                slot = Version()
        slot.reset(wts, payload, Status.PENDING, ctx.txn_id)
        self.births[ctx.worker] += 1
        return slot

    def discard(self, ctx: TxnCtx, key: int, v: Version, linked: bool = True) -> None:
        """Retire an aborted attempt's version."""
        v.status = Status.ABORTED
        if linked:
            unlink(self.table, key, v, repair=True)
        self.aborted[ctx.worker] += 1
        if self.caches is not None:
            # a reader may still be walking through it
            self.caches[ctx.worker].release(v, self.epochs.epoch)

    def fallback_allocs(self) -> int:
        return sum(c.fallback_alloc for c in self.caches) if self.caches else 0

    # ----------------------------------------------------------------- gc
    def active_timestamps(self) -> list:
        raise NotImplementedError

    def newest_timestamp(self):
        raise NotImplementedError

    def live_versions(self) -> int:
        return (self.table.cardinality + sum(self.births)
                - sum(self.reclaimed) - sum(self.aborted))

    def sample_live(self) -> int:
        n = self.live_versions()
        self.live_samples.append(n)
        return n

    def gc_tick(self, worker: int) -> int:
        mode = self.opts.gc
        dirty = self.dirty[worker]
        if mode == "none" or not dirty:
            return 0
        wm = self.tracker.update(self.active_timestamps(), self.newest_timestamp()).value
        if mode == "aggressive":
            budget = self.opts.gc_budget
            pinned = tuple(p for p in self.pinned if p is not None)
        else:
            budget, pinned = INF, ()
        cache = self.caches[worker] if self.caches is not None else None
        epoch = self.epochs.epoch
        total = 0
        longest = 0
        for k in list(dirty):
            n, length = sweep_chain(self.table, k, wm, budget, pinned, cache, epoch)
            total += n
            longest = max(longest, length)
            if length <= 1:
                dirty.discard(k)
        self.reclaimed[worker] += total
        stats = self.gc_stats
        stats["sweeps"] += 1
        if longest > stats["max_chain"]:
            stats["max_chain"] = longest
        return total


class SsnState:
    """Commit-time state other transactions may inspect."""

    __slots__ = ("cstamp", "pi", "final", "committed")

    def __init__(self):
        self.cstamp = INF
        self.pi = INF
        self.final = False
        self.committed = False

    def wait_final(self, stop) -> None:
        while not self.final:
            if stop.is_set():
                raise RunStopped()
            cpu_relax()
