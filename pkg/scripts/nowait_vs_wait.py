"""2PL with NoWait against Wait as contention rises."""
from _common import sweep_main

SPEC = {
    "protocol": "2pl",
    "cardinality": 1000,
    "threads": 4,
    "read_ratio": 50,
    "rmw": True,
    "sweep": [["no_wait", [False, True]], ["skew", [0.0, 0.6, 0.8, 0.9, 0.99]]],
}

if __name__ == "__main__":
    sweep_main("nowait_vs_wait", SPEC)
