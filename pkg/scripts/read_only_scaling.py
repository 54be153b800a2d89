"""YCSB-C throughput against thread count for the single-version protocols."""
from _common import sweep_main

SPEC = {
    "ycsb": "C",
    "cardinality": 100_000,
    "sweep": [["protocol", ["silo", "tictoc", "mocc", "2pl"]], ["threads", [1, 2, 4, 8]]],
}

if __name__ == "__main__":
    sweep_main("read_only_scaling", SPEC)
