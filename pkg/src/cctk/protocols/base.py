"""Transaction context, abort signalling and the engine interface shared by
every protocol."""
from __future__ import annotations

import enum
import threading
import time
from dataclasses import dataclass, field, fields
from typing import Optional

from ..storage import INF, AtomicInt, EpochManager, RunStopped, Table, cpu_relax


class AbortReason(str, enum.Enum):
    READ_VALIDATION = "ReadValidation"
    WRITE_LOCK_CONFLICT = "WriteLockConflict"
    WW_CONFLICT = "WWConflict"
    SSN_EXCLUSION = "SsnExclusion"
    MVTO_READ_FAIL = "MvtoReadFail"
    GC_READ_FAIL = "GcReadFail"
    DEADLOCK_AVOIDANCE = "Deadlock-avoidance"


class Abort(Exception):
    def __init__(self, reason: AbortReason, key: Optional[int] = None):
        super().__init__(reason.value if key is None else f"{reason.value} on key {key}")
        self.reason = reason
        self.key = key


class TxnStatus(enum.Enum):
    IN_FLIGHT = "InFlight"
    COMMITTED = "Committed"
    ABORTED = "Aborted"


PHASES = ("read", "validation", "write", "gc", "abort_retry", "backoff")


class TxnCtx:
    """Per-worker transaction state; reset and reused for every attempt."""

    __slots__ = ("protocol", "worker", "txn_id", "status", "abort_reason",
                 "read_set", "write_set", "begin_ts", "commit_ts", "eta", "pi",
                 "cstamp", "last_commit_tid", "phase_ns", "extra_reads",
                 "read_stores", "locks", "pending", "pos", "epoch", "seen",
                 "ssn", "gc_fail_streak", "_phase", "_t0")

    def __init__(self, protocol: str, worker: int):
        self.protocol = protocol
        self.worker = worker
        self.last_commit_tid = 0
        self.gc_fail_streak = 0
        self.seen = 0
        self.txn_id = 0
        self.read_set: list = []
        self.write_set: dict = {}
        self.locks: dict = {}
        self.pending: list = []
        self.phase_ns = dict.fromkeys(PHASES, 0)
        self.reset(0)

    def reset(self, txn_id: int) -> "TxnCtx":
        self.txn_id = txn_id
        self.status = TxnStatus.IN_FLIGHT
        self.abort_reason = None
        self.read_set.clear()
        self.write_set.clear()
        self.locks.clear()
        self.pending.clear()
        self.begin_ts = None
        self.commit_ts = None
        self.eta = 0
        self.pi = INF
        self.cstamp = None
        self.extra_reads = 0
        self.read_stores = 0
        self.pos = None
        self.epoch = 0
        self.ssn = None
        for p in PHASES:
            self.phase_ns[p] = 0
        self._phase = "read"
        self._t0 = time.perf_counter_ns()
        return self

    def enter(self, phase: str) -> None:
        now = time.perf_counter_ns()
        self.phase_ns[self._phase] += now - self._t0
        self._phase = phase
        self._t0 = now

    def close_phase(self) -> None:
        self.enter(self._phase)

    @property
    def read_keys(self) -> set:
        return {e[0] for e in self.read_set}


@dataclass
class ProtocolOptions:
    """Optimization toggles; each applies to the protocols that support it."""

    no_wait: bool = False                 # Silo, 2PL: abort on lock conflict
    # TicToc
    no_wait_tt: bool = False
    no_wait_tt_delay: float = 1e-6
    preemptive_abort: bool = False
    timestamp_history: bool = False
    history_size: int = 8
    # MOCC
    hot_threshold: int = 5
    # MVTO (Cicada-style)
    sort_by_contention: bool = False
    precheck: bool = False
    early_abort: bool = False
    inlining: bool = False
    overwrite_inline: bool = False
    thomas_write: bool = False
    # version lifetime (SI, ERMIA, MVTO)
    gc: str = "rapid"                      # rapid | aggressive | none
    gc_interval: float = 1e-4
    gc_budget: int = 4
    starvation_retries: int = 8
    version_reuse: bool = True
    prewarm: int = 0
    # delays
    read_phase_extension: float = 0.0
    backoff: bool = False
    backoff_min: float = 1e-6
    backoff_max: float = 1e-3
    backoff_factor: float = 2.0
    watchdog: bool = False

    def toggles(self) -> str:
        """Compact rendering of every option that differs from its default."""
        default = ProtocolOptions()
        parts = []
        for f in fields(self):
            v = getattr(self, f.name)
            if v != getattr(default, f.name):
                parts.append(f.name if v is True else f"{f.name}={v}")
        return "+".join(parts) if parts else "default"


GC_MODES = ("rapid", "aggressive", "none")


class Engine:
    """Uniform begin/read/write/commit/abort interface over one table."""

    name = "?"

    def __init__(self, table: Table, options: Optional[ProtocolOptions] = None,
                 workers: int = 1, epochs: Optional[EpochManager] = None,
                 capture: bool = False, stop: Optional[threading.Event] = None):
        self.table = table
        self.opts = options or ProtocolOptions()
        self.workers = workers
        self.epochs = epochs or EpochManager(workers)
        self.capture = capture
        self.stop = stop or threading.Event()
        self.ctxs = [TxnCtx(self.name, w) for w in range(workers)]
        self._attempt = [0] * workers
        self.pos = AtomicInt(0)
        # waits-for bookkeeping for the lock watchdog
        self.waiting: list = [None] * workers

    def next_txn_id(self, worker: int) -> int:
        self._attempt[worker] += 1
        return self._attempt[worker] * self.workers + worker + 1

    def begin(self, worker: int) -> TxnCtx:
        ctx = self.ctxs[worker].reset(self.next_txn_id(worker))
        ctx.epoch = self.epochs.publish(worker)
        return ctx

    def read(self, ctx: TxnCtx, key: int, for_update: bool = False) -> bytes:
        raise NotImplementedError

    def write(self, ctx: TxnCtx, key: int, payload: bytes) -> None:
        ctx.write_set[key] = payload

    def commit(self, ctx: TxnCtx) -> None:
        """Commit or raise :class:`Abort`; the caller then runs :meth:`abort`."""
        raise NotImplementedError

    def abort(self, ctx: TxnCtx, reason: Optional[AbortReason] = None) -> None:
        self.release(ctx)
        ctx.status = TxnStatus.ABORTED
        ctx.abort_reason = reason
        ctx.read_set.clear()
        ctx.write_set.clear()

    def release(self, ctx: TxnCtx) -> None:
        """Drop every lock/pending version the attempt still holds."""

    def gc_tick(self, worker: int) -> int:
        return 0

    def finish_worker(self, worker: int) -> None:
        self.epochs.deregister(worker)

    # history capture helpers
    def capture_reads(self, ctx: TxnCtx) -> list:
        """(key, writer txn id) for every read the attempt performed."""
        return [(e[0], e[-1]) for e in ctx.read_set]

    def take_pos(self, ctx: TxnCtx) -> None:
        if self.capture:
            ctx.pos = self.pos.fetch_add(1) + 1

    def spin(self, ctx: TxnCtx, key: int) -> None:
        """One iteration of a wait loop on ``key``."""
        if self.stop.is_set():
            raise RunStopped()
        self.waiting[ctx.worker] = key
        cpu_relax()
