"""Abort ratio of Silo and MOCC on 50 hot records as the write share grows."""
from _common import sweep_main

SPEC = {
    "cardinality": 50,
    "threads": 4,
    "txn_size": 10,
    "sweep": [["protocol", ["silo", "mocc"]], ["read_ratio", [100, 95, 90, 80, 50, 0]]],
}

if __name__ == "__main__":
    sweep_main("write_ratio", SPEC)
