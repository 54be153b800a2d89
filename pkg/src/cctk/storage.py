"""Records, packed concurrency words, version chains and the epoch manager.

CPython exposes no user-level compare-and-swap, so every read-modify-write on
a shared word goes through one of a fixed pool of striped latches.  Plain
loads are single bytecode reads and need no latch.  All mutating helpers bump
a per-thread store counter so tests can assert that a code path performs no
shared-memory writes.
"""
from __future__ import annotations

import enum
import os
import threading
import time
from typing import NamedTuple, Optional

import numpy as np

# Hand the interpreter lock to another runnable thread. time.sleep(0) is not
# enough: it may take the lock straight back, so a preempted lock holder
# stays stalled for a whole scheduler tick.
cpu_relax = getattr(os, "sched_yield", lambda: time.sleep(0))

CACHE_LINE = 64
INF = float("inf")

# TidWord: lock(1) | epoch(29) | seq(32) | reserved(2)
LOCK_BIT = 1 << 63
EPOCH_BITS = 29
SEQ_BITS = 32
EPOCH_SHIFT = 34
SEQ_SHIFT = 2
EPOCH_MASK = (1 << EPOCH_BITS) - 1
SEQ_MASK = (1 << SEQ_BITS) - 1

# TsWord: lock(1) | wts(48) | delta(15)
WTS_BITS = 48
DELTA_BITS = 15
WTS_SHIFT = 15
WTS_MASK = (1 << WTS_BITS) - 1
DELTA_MAX = (1 << DELTA_BITS) - 1


class _StoreCounter(threading.local):
    n = 0


_stores = _StoreCounter()


def shared_stores() -> int:
    """Number of shared-memory stores issued so far by the calling thread."""
    return _stores.n


def note_store(n: int = 1) -> None:
    _stores.n += n


class TidWord(NamedTuple):
    lock: bool
    epoch: int
    seq: int

    def pack(self) -> int:
        return tid_pack(self.lock, self.epoch, self.seq)

    @classmethod
    def unpack(cls, word: int) -> "TidWord":
        return cls(bool(word & LOCK_BIT), (word >> EPOCH_SHIFT) & EPOCH_MASK,
                   (word >> SEQ_SHIFT) & SEQ_MASK)


def tid_pack(lock: bool, epoch: int, seq: int) -> int:
    if not 0 <= epoch <= EPOCH_MASK or not 0 <= seq <= SEQ_MASK:
        raise ValueError(f"tid out of range: epoch={epoch} seq={seq}")
    return (LOCK_BIT if lock else 0) | (epoch << EPOCH_SHIFT) | (seq << SEQ_SHIFT)


class TsWord(NamedTuple):
    lock: bool
    wts: int
    delta: int

    @property
    def rts(self) -> int:
        return self.wts + self.delta

    def pack(self) -> int:
        return ts_pack(self.lock, self.wts, self.delta)

    @classmethod
    def unpack(cls, word: int) -> "TsWord":
        return cls(bool(word & LOCK_BIT), (word >> WTS_SHIFT) & WTS_MASK,
                   word & DELTA_MAX)


def ts_pack(lock: bool, wts: int, delta: int) -> int:
    if not 0 <= wts <= WTS_MASK or not 0 <= delta <= DELTA_MAX:
        raise ValueError(f"ts out of range: wts={wts} delta={delta}")
    return (LOCK_BIT if lock else 0) | (wts << WTS_SHIFT) | delta


def ts_make(wts: int, rts: int, lock: bool = False) -> int:
    """Pack (wts, rts); when rts - wts overflows the delta field the write
    timestamp is advanced so the represented rts is preserved."""
    if rts - wts > DELTA_MAX:
        wts = rts - DELTA_MAX
    return ts_pack(lock, wts, rts - wts)


def ts_wts(word: int) -> int:
    return (word >> WTS_SHIFT) & WTS_MASK


def ts_rts(word: int) -> int:
    return ((word >> WTS_SHIFT) & WTS_MASK) + (word & DELTA_MAX)


class AtomicArray:
    """Fixed-length array of integer words with atomic read-modify-write."""

    __slots__ = ("_v", "_latches", "_mask")

    def __init__(self, n: int, init: int = 0, stripes: int = 1024):
        assert stripes & (stripes - 1) == 0
        self._v = [init] * n
        self._latches = [threading.Lock() for _ in range(stripes)]
        self._mask = stripes - 1

    def __len__(self) -> int:
        return len(self._v)

    def load(self, i: int) -> int:
        return self._v[i]

    def store(self, i: int, value: int) -> None:
        with self._latches[i & self._mask]:
            self._v[i] = value
        _stores.n += 1

    def cas(self, i: int, expected: int, new: int) -> bool:
        with self._latches[i & self._mask]:
            if self._v[i] != expected:
                return False
            self._v[i] = new
        _stores.n += 1
        return True

    def fetch_add(self, i: int, delta: int = 1) -> int:
        with self._latches[i & self._mask]:
            old = self._v[i]
            self._v[i] = old + delta
        _stores.n += 1
        return old

    def fetch_max(self, i: int, value: int) -> int:
        """Raise slot ``i`` to ``value``; no store when already >= value."""
        old = self._v[i]
        if old >= value:
            return old
        with self._latches[i & self._mask]:
            old = self._v[i]
            if old < value:
                self._v[i] = value
                _stores.n += 1
        return old

    def snapshot(self) -> list:
        return list(self._v)


class AtomicInt:
    """A single atomic word (global epoch, centralized counters)."""

    __slots__ = ("value", "_latch")

    def __init__(self, value: int = 0):
        self.value = value
        self._latch = threading.Lock()

    def load(self) -> int:
        return self.value

    def store(self, value: int) -> None:
        with self._latch:
            self.value = value
        _stores.n += 1

    def cas(self, expected: int, new: int) -> bool:
        with self._latch:
            if self.value != expected:
                return False
            self.value = new
        _stores.n += 1
        return True

    def fetch_add(self, delta: int = 1) -> int:
        with self._latch:
            old = self.value
            self.value = old + delta
        _stores.n += 1
        return old

    def fetch_max(self, value: int) -> int:
        with self._latch:
            old = self.value
            if old < value:
                self.value = value
        if old < value:
            _stores.n += 1
        return old

    @property
    def latch(self) -> threading.Lock:
        return self._latch


# ---------------------------------------------------------------- versions

class Status(enum.IntEnum):
    PENDING = 0
    COMMITTED = 1
    ABORTED = 2
    NON_VISIBLE = 3


class Version:
    """One entry of a record's version chain (newest first).

    ``pred_wts`` is the wts of the committed version this one superseded at
    install time; readers use it to notice when GC punched a hole in the
    chain between a newer version and an older survivor.
    """

    __slots__ = ("wts", "rts", "status", "payload", "next", "writer",
                 "pred_wts", "pstamp", "sstamp", "readers", "overwriter",
                 "retired", "home")

    def __init__(self, wts=0, payload=b"", status=Status.PENDING, writer=0):
        self.reset(wts, payload, status, writer)
        self.home = None  # key of the record header this slot is inlined in

    def reset(self, wts, payload, status=Status.PENDING, writer=0):
        self.wts = wts
        self.rts = wts
        self.status = status
        self.payload = payload
        self.next = None
        self.writer = writer
        self.pred_wts = None
        self.pstamp = 0
        self.sstamp = INF
        self.readers = None
        self.overwriter = None
        self.retired = -1
        return self

    def __repr__(self):
        return f"Version(wts={self.wts}, rts={self.rts}, {self.status.name})"


class Protocol(str, enum.Enum):
    SILO = "silo"
    TICTOC = "tictoc"
    MOCC = "mocc"
    TWO_PL = "2pl"
    SI = "si"
    ERMIA = "ermia"
    MVTO = "mvto"

    @property
    def multi_version(self) -> bool:
        return self in (Protocol.SI, Protocol.ERMIA, Protocol.MVTO)


# ------------------------------------------------------------------- table

class Table:
    """A fixed key space 0..cardinality-1 of records.

    Keys are dense and never inserted or deleted, so the record index is the
    key itself.  Only the representation the protocol needs is allocated:
    single-version protocols keep payloads in one cache-line-aligned buffer,
    multi-version protocols keep a chain of :class:`Version` per record.
    """

    def __init__(self, cardinality: int, payload_size: int, protocol,
                 inline: bool = False):
        if cardinality < 1:
            raise ValueError("cardinality must be >= 1")
        if payload_size < 4:
            raise ValueError("payload_size must be >= 4 bytes")
        self.protocol = Protocol(protocol)
        self.cardinality = cardinality
        self.payload_size = payload_size
        self.stride = -(-payload_size // CACHE_LINE) * CACHE_LINE
        n = cardinality
        self.tid = self.ts = self.rw = self.temp = None
        self.payload = self.tags = self.heads = None
        self._chain_latches = None
        if self.protocol.multi_version:
            zero = bytes(payload_size)
            self.heads = [Version(0, zero, Status.COMMITTED, 0) for _ in range(n)]
            self._chain_latches = [threading.Lock() for _ in range(1024)]
            # free inline slot per record; the initial version occupies it
            self.inline = [None] * n if inline else None
            if inline:
                for k, v in enumerate(self.heads):
                    v.home = k
        else:
            self.payload = _aligned_zeros(n, self.stride)
            self.tags = [0] * n
            if self.protocol is Protocol.TICTOC:
                self.ts = AtomicArray(n)
                self.history = [None] * n
            else:
                self.tid = AtomicArray(n)
            if self.protocol in (Protocol.TWO_PL, Protocol.MOCC):
                self.rw = AtomicArray(n)
            if self.protocol is Protocol.MOCC:
                self.temp = AtomicArray(n)

    def __len__(self) -> int:
        return self.cardinality

    @property
    def payload_bytes(self) -> int:
        """Bytes reserved for payloads (padded single-version buffer, or the
        initial versions of a multi-version table)."""
        if self.payload is not None:
            return self.payload.nbytes
        return self.cardinality * self.payload_size

    def check_key(self, key: int) -> int:
        if not 0 <= key < self.cardinality:
            raise KeyError(key)
        return key

    # single-version payload access
    def read_payload(self, key: int) -> bytes:
        return self.payload[key, :self.payload_size].tobytes()

    def write_payload(self, key: int, payload: bytes, tag: int) -> None:
        self.payload[key, :self.payload_size] = np.frombuffer(payload, np.uint8)
        self.tags[key] = tag
        _stores.n += 1

    # multi-version helpers
    def chain_latch(self, key: int) -> threading.Lock:
        return self._chain_latches[key & 1023]

    def chain(self, key: int) -> list:
        out, v = [], self.heads[key]
        while v is not None:
            out.append(v)
            v = v.next
        return out

    def live_versions(self) -> int:
        return sum(len(self.chain(k)) for k in range(self.cardinality))


def _aligned_zeros(rows: int, stride: int) -> np.ndarray:
    raw = np.zeros(rows * stride + CACHE_LINE, dtype=np.uint8)
    off = (-raw.ctypes.data) % CACHE_LINE
    return raw[off:off + rows * stride].reshape(rows, stride)


def table_build(cardinality: int, payload_size: int, protocol,
                inline: bool = False) -> Table:
    try:
        return Table(cardinality, payload_size, protocol, inline=inline)
    except MemoryError as exc:
        raise ConfigError(f"cannot allocate table: {exc}") from exc


class ConfigError(Exception):
    """Fatal configuration problem (bad parameters, allocation failure)."""


# ---------------------------------------------------- single-version words

def read_consistent(table: Table, key: int, words: AtomicArray = None):
    """Optimistic snapshot of a record without writing shared memory.

    Returns ``(payload, tag, word, retries)`` where ``word`` is the unlocked
    concurrency word under which the payload was written and ``retries``
    counts the failed attempts (extra reads).
    """
    words = words if words is not None else (table.tid if table.tid is not None else table.ts)
    vals = words._v
    buf, size, tags = table.payload, table.payload_size, table.tags
    retries = 0
    while True:
        w1 = vals[key]
        if not w1 & LOCK_BIT:
            data = buf[key, :size].tobytes()
            tag = tags[key]
            if vals[key] == w1:
                return data, tag, w1, retries
        retries += 1
        cpu_relax()


def try_lock(words: AtomicArray, key: int) -> bool:
    w = words._v[key]
    if w & LOCK_BIT:
        return False
    return words.cas(key, w, w | LOCK_BIT)


def lock_spin(words: AtomicArray, key: int, stop=None) -> None:
    while not try_lock(words, key):
        if stop is not None and stop.is_set():
            raise RunStopped()
        cpu_relax()


def unlock(words: AtomicArray, key: int, new_word: Optional[int] = None) -> None:
    """Release a locked word, publishing ``new_word`` (lock bit cleared) or the
    previous contents when ``new_word`` is None."""
    cur = words._v[key]
    assert cur & LOCK_BIT, f"unlock of unlocked word at key {key}"
    words.store(key, (cur if new_word is None else new_word) & ~LOCK_BIT)


class RunStopped(Exception):
    """Raised inside a wait loop when the harness is shutting the run down."""


# ----------------------------------------------------- reader/writer latch
# word value: -1 exclusive, n >= 0 number of shared holders

def rw_try_shared(rw: AtomicArray, key: int) -> bool:
    v = rw._v[key]
    return v >= 0 and rw.cas(key, v, v + 1)


def rw_try_exclusive(rw: AtomicArray, key: int) -> bool:
    return rw._v[key] == 0 and rw.cas(key, 0, -1)


def rw_try_upgrade(rw: AtomicArray, key: int) -> bool:
    return rw._v[key] == 1 and rw.cas(key, 1, -1)


def rw_release_shared(rw: AtomicArray, key: int) -> None:
    old = rw.fetch_add(key, -1)
    assert old > 0


def rw_release_exclusive(rw: AtomicArray, key: int) -> None:
    assert rw._v[key] == -1
    rw.store(key, 0)


# ------------------------------------------------------------------- epochs

class EpochManager:
    """Global epoch advanced only when every registered worker has caught up."""

    def __init__(self, workers: int, interval: float = 0.040):
        self.interval = interval
        self.global_epoch = AtomicInt(0)
        self.per_worker = AtomicArray(workers, stripes=64)
        self.registered = [True] * workers

    @property
    def epoch(self) -> int:
        return self.global_epoch.value

    def publish(self, worker: int) -> int:
        e = self.global_epoch.value
        if self.per_worker._v[worker] != e:
            self.per_worker.store(worker, e)
        return e

    def deregister(self, worker: int) -> None:
        self.registered[worker] = False

    def advance(self) -> int:
        cur = self.global_epoch.value
        for w, published in enumerate(self.per_worker._v):
            if self.registered[w] and published < cur:
                return cur
        self.global_epoch.cas(cur, cur + 1)
        return self.global_epoch.value

    def run(self, stop: threading.Event) -> None:
        while not stop.wait(self.interval):
            self.advance()


# ------------------------------------------------------------ version chains

def visible_version(table: Table, key: int, ts, wait_pending: bool = False):
    """Newest committed version with ``wts <= ts``, or None when the version
    that should be visible at ``ts`` has been reclaimed or made non-visible.

    With ``wait_pending`` a pending version that already carries a timestamp
    ``<= ts`` is waited on (snapshot reads); otherwise pending and aborted
    versions are skipped.
    """
    v = table.heads[key]
    newer = None  # last committed version passed with wts > ts
    while v is not None:
        st = v.status
        if st == Status.PENDING:
            if wait_pending and v.wts <= ts:
                while v.status == Status.PENDING:
                    cpu_relax()
                continue
        elif st == Status.COMMITTED:
            if v.wts <= ts:
                if newer is not None and newer.pred_wts != v.wts:
                    return None
                return v
            newer = v
        elif st == Status.NON_VISIBLE and v.wts <= ts:
            return None
        v = v.next
    return None


def install_pending(table: Table, key: int, version: Version) -> bool:
    """Link a pending version at the head of the chain if it can be ordered
    after every existing version and no later reader saw its predecessor."""
    assert version.status == Status.PENDING
    ts = version.wts
    with table.chain_latch(key):
        head = table.heads[key]
        v = head
        below = pred = None
        while v is not None:
            if v.status == Status.NON_VISIBLE and v.wts >= ts:
                return False
            if v.status in (Status.PENDING, Status.COMMITTED):
                if v.wts >= ts:
                    return False
                if below is None:
                    below = v
                if v.status == Status.COMMITTED:
                    pred = v
                    break
            v = v.next
        if pred is not None and pred.rts > ts:
            return False
        version.pred_wts = below.wts if below is not None else None
        version.next = head
        table.heads[key] = version
    _stores.n += 1
    return True


def unlink(table: Table, key: int, version: Version, repair: bool = False) -> bool:
    """Remove ``version`` from its chain; returns False if it was not linked.

    ``repair`` is for versions that never became visible (aborts): the newer
    neighbour's predecessor link is pointed past the removed entry so readers
    do not mistake the removal for a GC hole.
    """
    with table.chain_latch(key):
        prev, v = None, table.heads[key]
        while v is not None and v is not version:
            prev, v = v, v.next
        if v is None:
            return False
        if prev is None:
            table.heads[key] = v.next
        else:
            prev.next = v.next
            if repair and prev.pred_wts == v.wts:
                prev.pred_wts = v.pred_wts
    _stores.n += 1
    return True
