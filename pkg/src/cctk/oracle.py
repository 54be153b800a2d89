"""Offline conflict-serializability checker over captured histories.

History line format (one committed transaction per line)::

    txn <id> worker <w> pos <p> [begin <b>] R k:<key>=<writer> ... W k:<key>=<tag> ...

Transaction 0 is the loader that wrote every initial value.
"""
from __future__ import annotations

import sys
from dataclasses import dataclass, field
from typing import Iterable, Optional

LOADER = 0


class MalformedHistory(ValueError):
    pass


@dataclass
class CommittedTxn:
    id: int
    worker: int
    pos: int
    reads: list = field(default_factory=list)    # [(key, writer id)]
    writes: list = field(default_factory=list)   # [(key, tag)]
    begin: Optional[int] = None


@dataclass
class History:
    entries: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def append(self, txn: CommittedTxn) -> None:
        self.entries.append(txn)


def format_txn(t: CommittedTxn) -> str:
    parts = [f"txn {t.id} worker {t.worker} pos {t.pos}"]
    if t.begin is not None:
        parts.append(f"begin {t.begin}")
    parts.append("R")
    parts.extend(f"k:{k}={w}" for k, w in t.reads)
    parts.append("W")
    parts.extend(f"k:{k}={tag}" for k, tag in t.writes)
    return " ".join(parts)


def format_history(h: Iterable[CommittedTxn]) -> str:
    return "".join(format_txn(t) + "\n" for t in h)


def _int(tok: str, lineno: int) -> int:
    try:
        return int(tok)
    except ValueError:
        raise MalformedHistory(f"line {lineno}: expected integer, got {tok!r}") from None


def _pair(tok: str, lineno: int) -> tuple:
    if not tok.startswith("k:") or "=" not in tok:
        raise MalformedHistory(f"line {lineno}: bad item {tok!r}")
    k, v = tok[2:].split("=", 1)
    return _int(k, lineno), _int(v, lineno)


def parse_line(line: str, lineno: int = 0) -> CommittedTxn:
    tok = line.split()
    if len(tok) < 8 or tok[0] != "txn" or tok[2] != "worker" or tok[4] != "pos":
        raise MalformedHistory(f"line {lineno}: expected 'txn <id> worker <w> pos <p> ...'")
    t = CommittedTxn(_int(tok[1], lineno), _int(tok[3], lineno), _int(tok[5], lineno))
    i = 6
    if tok[i] == "begin":
        t.begin = _int(tok[i + 1], lineno)
        i += 2
    if i >= len(tok) or tok[i] != "R":
        raise MalformedHistory(f"line {lineno}: missing R section")
    i += 1
    while i < len(tok) and tok[i] != "W":
        t.reads.append(_pair(tok[i], lineno))
        i += 1
    if i >= len(tok):
        raise MalformedHistory(f"line {lineno}: missing W section")
    t.writes = [_pair(x, lineno) for x in tok[i + 1:]]
    return t


def parse_history(text: str) -> History:
    h = History()
    for n, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if line and not line.startswith("#"):
            h.append(parse_line(line, n))
    return h


def load_history(path) -> History:
    with open(path, encoding="utf-8") as f:
        return parse_history(f.read())


# ---------------------------------------------------------------------- DSG

@dataclass(frozen=True)
class Edge:
    kind: str   # wr | ww | rw
    src: int
    dst: int

    def __str__(self) -> str:
        return f"{self.kind}(T{self.src}->T{self.dst})"


@dataclass
class DSG:
    nodes: set = field(default_factory=set)
    edges: set = field(default_factory=set)

    def adjacency(self) -> dict:
        adj: dict = {n: [] for n in self.nodes}
        for e in sorted(self.edges, key=lambda e: (e.src, e.dst, e.kind)):
            adj[e.src].append(e)
        return adj

    def edges_of(self, kind: str) -> set:
        return {(e.src, e.dst) for e in self.edges if e.kind == kind}


def version_orders(h: History) -> dict:
    """key -> writer ids in install order (loader first)."""
    per_key: dict = {}
    for t in h:
        for k, _ in t.writes:
            per_key.setdefault(k, []).append((t.pos, t.id))
    orders = {}
    for k, lst in per_key.items():
        lst.sort()
        for (p1, a), (p2, b) in zip(lst, lst[1:]):
            if p1 == p2:
                raise MalformedHistory(f"key {k}: writers T{a} and T{b} share pos {p1}")
        orders[k] = [LOADER] + [tid for _, tid in lst]
    return orders


def dsg_build(h: History) -> DSG:
    ids = {}
    for t in h:
        if t.id == LOADER:
            raise MalformedHistory("txn id 0 is reserved for the loader")
        if t.id in ids:
            raise MalformedHistory(f"duplicate txn id {t.id}")
        ids[t.id] = t
    orders = version_orders(h)
    index = {k: {w: i for i, w in enumerate(order)} for k, order in orders.items()}
    g = DSG(nodes=set(ids))
    add = g.edges.add
    for order in orders.values():
        for a, b in zip(order[1:], order[2:]):
            add(Edge("ww", a, b))
    for t in h:
        for k, w in t.reads:
            if w != LOADER and w not in ids:
                raise MalformedHistory(f"T{t.id} reads key {k} from unknown T{w}")
            order = orders.get(k, [LOADER])
            pos = index.get(k, {LOADER: 0}).get(w)
            if pos is None:
                raise MalformedHistory(f"T{t.id} reads key {k} from T{w}, which never wrote it")
            if w != LOADER and w != t.id:
                add(Edge("wr", w, t.id))
            # the reader precedes whoever installed the next version
            if pos + 1 < len(order):
                nxt = order[pos + 1]
                if nxt != t.id:
                    add(Edge("rw", t.id, nxt))
    return g


@dataclass
class Verdict:
    acyclic: bool
    witness: list = field(default_factory=list)

    def __bool__(self) -> bool:
        return self.acyclic

    def __str__(self) -> str:
        if self.acyclic:
            return "Acyclic"
        return "Cycle[" + ", ".join(map(str, self.witness)) + "]"


def check_serializable(g) -> Verdict:
    """Iterative DFS; on a back edge returns the cycle it closes."""
    if isinstance(g, History):
        g = dsg_build(g)
    adj = g.adjacency()
    WHITE, GREY, BLACK = 0, 1, 2
    color = dict.fromkeys(adj, WHITE)
    for root in sorted(adj):
        if color[root] != WHITE:
            continue
        color[root] = GREY
        path: list = []          # edges from root to the current node
        stack = [(root, iter(adj[root]))]
        while stack:
            node, it = stack[-1]
            e = next(it, None)
            if e is None:
                color[node] = BLACK
                stack.pop()
                if path:
                    path.pop()
                continue
            c = color[e.dst]
            if c == GREY:
                # e.dst is on the stack, so some path edge leaves it
                start = next(i for i, p in enumerate(path) if p.src == e.dst)
                cycle = path[start:] + [e]
                return Verdict(False, cycle)
            if c == WHITE:
                color[e.dst] = GREY
                path.append(e)
                stack.append((e.dst, iter(adj[e.dst])))
    return Verdict(True)


@dataclass
class SnapshotViolation:
    txn: int
    key: int
    read_from: int
    expected: int
    begin: int

    def __str__(self) -> str:
        return (f"T{self.txn} (begin {self.begin}) read key {self.key} from "
                f"T{self.read_from}, expected T{self.expected}")


def check_snapshot_reads(h: History) -> list:
    """Every read must return the newest version committed at or before the
    reader's begin timestamp (positions are commit timestamps)."""
    writers: dict = {}
    for t in h:
        for k, _ in t.writes:
            writers.setdefault(k, []).append((t.pos, t.id))
    for lst in writers.values():
        lst.sort()
    out = []
    for t in h:
        if t.begin is None:
            continue
        for k, w in t.reads:
            expected, best = LOADER, -1
            for p, tid in writers.get(k, ()):
                if p <= t.begin and p > best and tid != t.id:
                    best, expected = p, tid
            if w != expected:
                out.append(SnapshotViolation(t.id, k, w, expected, t.begin))
    return out


def main(argv=None) -> int:
    import argparse
    ap = argparse.ArgumentParser(prog="cctk-oracle", description="check a captured history")
    ap.add_argument("history")
    ap.add_argument("--snapshot", action="store_true", help="also check snapshot reads")
    a = ap.parse_args(argv)
    return check_file(a.history, a.snapshot)


def check_file(path, snapshot: bool = False, out=None) -> int:
    out = out or sys.stdout
    h = load_history(path)
    verdict = check_serializable(dsg_build(h))
    print(f"{len(h)} txns: {verdict}", file=out)
    bad = not verdict.acyclic
    if snapshot:
        v = check_snapshot_reads(h)
        for x in v[:20]:
            print(f"snapshot violation: {x}", file=out)
        print(f"snapshot reads: {'ok' if not v else f'{len(v)} violations'}", file=out)
        bad = bad or bool(v)
    return 2 if bad else 0
