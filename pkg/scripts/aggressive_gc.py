"""RapidGC against AggressiveGC (budget 4) as the long-transaction delay grows."""
from _common import sweep_main

SPEC = {
    "protocol": "mvto",
    "cardinality": 10_000,
    "threads": 4,
    "skew": 0.0,
    "sweep": [["gc", ["rapid", "aggressive"]],
              ["long_txn", [None] + [{"worker": 0, "delay": d} for d in (0.001, 0.01, 0.1)]]],
}

if __name__ == "__main__":
    sweep_main("aggressive_gc", SPEC)
