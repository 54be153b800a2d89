"""Shared-counter against per-thread counter increments per second."""
import argparse
import csv
import os
import sys

from cctk.harness import fetch_add_bench


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(prog="fetch_add")
    ap.add_argument("--output", "-o", default="fetch_add.csv")
    ap.add_argument("--duration", type=float, default=1.0)
    ap.add_argument("--threads", type=int, nargs="+",
                    default=sorted({1, 2, 4, 8, len(os.sched_getaffinity(0))}))
    a = ap.parse_args(argv)
    with open(a.output, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["threads", "mode", "total", "duration_s", "throughput"])
        for n in a.threads:
            for dec in (False, True):
                r = fetch_add_bench(n, a.duration, dec)
                w.writerow([n, "decentralized" if dec else "shared", r.total, r.duration, r.throughput])
    print(f"-> {a.output}", file=sys.stderr)


if __name__ == "__main__":
    main()
