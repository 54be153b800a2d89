"""YCSB-style transaction generation: Zipfian keys, read/write mix, reusable
operation buffers."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np

READ, WRITE, RMW = 0, 1, 2
KIND_NAMES = ("Read", "Write", "RMW")
PRESETS = {"A": 50, "B": 95, "C": 100}
BATCH = 4096


@dataclass
class WorkloadConfig:
    skew: float = 0.0
    payload_size: int = 4
    txn_size: int = 10
    cardinality: int = 10_000
    read_ratio: float = 50.0
    rmw: bool = False
    threads: int = 1
    ycsb_preset: str = "custom"
    partitioned: bool = False
    sort_ops: bool = False
    seed: int = 0

    def __post_init__(self):
        self.ycsb_preset = normalize_preset(self.ycsb_preset)
        if self.ycsb_preset in PRESETS:
            self.read_ratio = float(PRESETS[self.ycsb_preset])

    def to_dict(self) -> dict:
        return asdict(self)


def normalize_preset(p) -> str:
    s = str(p).strip()
    return s.upper() if s.upper() in PRESETS else s.lower()


@dataclass
class Validation:
    errors: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors

    def __bool__(self) -> bool:
        return self.ok


def config_validate(cfg: WorkloadConfig) -> Validation:
    out = Validation()
    if cfg.threads < 1:
        out.errors.append(("threads", f"must be >= 1, got {cfg.threads}"))
    if cfg.txn_size < 1:
        out.errors.append(("txn_size", f"must be >= 1, got {cfg.txn_size}"))
    if cfg.payload_size < 4:
        out.errors.append(("payload_size", f"must be >= 4 bytes, got {cfg.payload_size}"))
    if not (0 <= cfg.skew < 1) or math.isnan(cfg.skew):
        out.errors.append(("skew", f"must lie in [0, 1), got {cfg.skew}"))
    if cfg.cardinality < 1:
        out.errors.append(("cardinality", f"must be >= 1, got {cfg.cardinality}"))
    if not 0 <= cfg.read_ratio <= 100:
        out.errors.append(("read_ratio", f"must lie in [0, 100], got {cfg.read_ratio}"))
    if cfg.ycsb_preset not in PRESETS and cfg.ycsb_preset != "custom":
        out.errors.append(("ycsb_preset", f"unknown preset {cfg.ycsb_preset!r}; use A, B, C or custom"))
    if cfg.partitioned and cfg.threads >= 1 and cfg.cardinality < cfg.threads:
        out.errors.append(("partitioned", "needs cardinality >= threads"))
    if not out.errors:
        span = cfg.cardinality // cfg.threads if cfg.partitioned else cfg.cardinality
        if cfg.txn_size > span:
            out.warnings.append(("txn_size", f"txn_size {cfg.txn_size} exceeds the {span} keys available; keys will repeat"))
    return out


# --------------------------------------------------------------------- zipf

def zipf_weights(n: int, theta: float) -> np.ndarray:
    """Exact normalized rank probabilities 1/i^theta / H(n, theta)."""
    w = np.arange(1, n + 1, dtype=np.float64) ** -float(theta)
    return w / w.sum()


@lru_cache(maxsize=16)
def alias_table(n: int, theta: float) -> tuple:
    """Walker/Vose alias table over ranks 0..n-1."""
    p = zipf_weights(n, theta) * n
    prob = np.ones(n)
    alias = np.arange(n, dtype=np.int64)
    small = [i for i in range(n) if p[i] < 1.0]
    large = [i for i in range(n) if p[i] >= 1.0]
    pl = p.tolist()
    while small and large:
        s = small.pop()
        g = large.pop()
        prob[s] = pl[s]
        alias[s] = g
        pl[g] = pl[g] + pl[s] - 1.0
        (small if pl[g] < 1.0 else large).append(g)
    prob.setflags(write=False)
    alias.setflags(write=False)
    return prob, alias


def _coprime_multiplier(n: int) -> int:
    a = 0x9E3779B97F4A7C15 % n if n > 1 else 1
    a = max(a, 1)
    while math.gcd(a, n) != 1:
        a += 1
    return a


class ZipfGenerator:
    """Draws keys in [offset, offset + n) with Zipfian rank popularity.

    Ranks come from an exact O(1) alias table; rank r maps to key
    ``(r * a + n // 3) % n`` with ``gcd(a, n) == 1`` so hot keys spread out.
    """

    def __init__(self, n: int, theta: float = 0.0, seed: int = 0, offset: int = 0,
                 rng: Optional[np.random.Generator] = None):
        if n < 1:
            raise ValueError("n must be >= 1")
        if theta < 0:
            raise ValueError("theta must be >= 0")
        self.n = n
        self.theta = float(theta)
        self.offset = offset
        self.rng = rng if rng is not None else np.random.default_rng(seed)
        self.uniform = self.theta == 0.0
        if not self.uniform:
            self.prob, self.alias = alias_table(n, self.theta)
        self.mult = _coprime_multiplier(n)
        self.shift = n // 3
        self._buf: list = []
        self._i = 0

    def ranks(self, size: int) -> np.ndarray:
        u = self.rng.random(size) * self.n
        idx = u.astype(np.int64)
        np.minimum(idx, self.n - 1, out=idx)
        if self.uniform:
            return idx
        frac = u - idx
        return np.where(frac < self.prob[idx], idx, self.alias[idx])

    def rank_to_key(self, ranks):
        return (ranks * self.mult + self.shift) % self.n + self.offset

    def keys(self, size: int) -> np.ndarray:
        return self.rank_to_key(self.ranks(size))

    def next(self) -> int:
        if self._i >= len(self._buf):
            self._buf = self.keys(BATCH).tolist()
            self._i = 0
        k = self._buf[self._i]
        self._i += 1
        return k


def zipf_next(state: ZipfGenerator, rng=None) -> int:
    return state.next()


# ----------------------------------------------------------------- templates

class TxnTemplate:
    """Reusable operation buffer; ``n`` live entries in ``kinds``/``keys``."""

    __slots__ = ("kinds", "keys", "n")

    def __init__(self, capacity: int):
        self.kinds = [READ] * capacity
        self.keys = [0] * capacity
        self.n = 0

    @property
    def ops(self) -> list:
        return [(KIND_NAMES[self.kinds[i]], self.keys[i]) for i in range(self.n)]

    def __len__(self) -> int:
        return self.n

    def __iter__(self):
        kinds, keys = self.kinds, self.keys
        for i in range(self.n):
            yield kinds[i], keys[i]


def _merge(a: int, b: int) -> int:
    return a if a == b else RMW


class WorkloadGenerator:
    """Per-worker op stream; the rng stream is seeded with seed + worker."""

    def __init__(self, cfg: WorkloadConfig, worker: int = 0, sort_ops: bool = False):
        self.cfg = cfg
        self.worker = worker
        self.sort = sort_ops or cfg.sort_ops
        rng = np.random.default_rng(cfg.seed + worker)
        if cfg.partitioned:
            span = cfg.cardinality // cfg.threads
            self.zipf = ZipfGenerator(span, cfg.skew, rng=rng, offset=worker * span)
        else:
            self.zipf = ZipfGenerator(cfg.cardinality, cfg.skew, rng=rng)
        self.rng = rng
        self.read_p = cfg.read_ratio / 100.0
        self.write_kind = RMW if cfg.rmw else WRITE
        self.template = TxnTemplate(cfg.txn_size)
        self.allocations = 1
        self._u: list = []
        self._ui = 0

    def _coin(self) -> float:
        if self._ui >= len(self._u):
            self._u = self.rng.random(BATCH).tolist()
            self._ui = 0
        x = self._u[self._ui]
        self._ui += 1
        return x

    def generate(self) -> TxnTemplate:
        t = self.template
        size = self.cfg.txn_size
        if len(t.kinds) < size:
            t.kinds = [READ] * size
            t.keys = [0] * size
            self.allocations += 1
        kinds, keys = t.kinds, t.keys
        read_p, wk, zipf = self.read_p, self.write_kind, self.zipf
        for i in range(size):
            kinds[i] = READ if self._coin() < read_p else wk
            keys[i] = zipf.next()
        t.n = size
        if self.sort:
            _sort_dedup(t)
        return t


def _sort_dedup(t: TxnTemplate) -> None:
    n = t.n
    kinds, keys = t.kinds, t.keys
    order = sorted(range(n), key=keys.__getitem__)
    pairs = [(keys[i], kinds[i]) for i in order]
    out = 0
    for k, kind in pairs:
        if out and keys[out - 1] == k:
            kinds[out - 1] = _merge(kinds[out - 1], kind)
        else:
            keys[out] = k
            kinds[out] = kind
            out += 1
    t.n = out


def txn_generate(cfg: WorkloadConfig, gen: Optional[WorkloadGenerator] = None,
                 worker: int = 0) -> TxnTemplate:
    gen = gen if gen is not None else WorkloadGenerator(cfg, worker)
    return gen.generate()
