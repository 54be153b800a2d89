"""Live versions and throughput of MVTO under one long transaction, across
RapidGC intervals."""
from _common import sweep_main

SPEC = {
    "protocol": "mvto",
    "cardinality": 10_000,
    "threads": 4,
    "skew": 0.0,
    "long_txn": {"worker": 0, "delay": 0.1},
    "sweep": [["gc_interval", [1e-4, 1e-3, 1e-2, 0.1, 0.3, 1.0]]],
}

if __name__ == "__main__":
    sweep_main("gc_interval", SPEC)
