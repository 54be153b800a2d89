"""Print oracle-derived constants in a form that can be pasted into tests.

Values come only from tests/oracles.py (brute force / exact arithmetic),
never from the package under test.
"""
import random
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "tests"))
import oracles  # noqa: E402


def main(seed: int = 7) -> None:
    rng = random.Random(seed)
    print("SILO_TID_CASES = [")
    print(f"    ({[(1, 3), (1, 5)]}, {[(1, 4)]}, (1, 2), 1, {oracles.smallest_tid([(1, 3), (1, 5)], [(1, 4)], (1, 2), 1)}),")
    for _ in range(6):
        reads = [(rng.randint(0, 3), rng.randint(0, 9)) for _ in range(rng.randint(0, 3))]
        over = [(rng.randint(0, 3), rng.randint(0, 9)) for _ in range(rng.randint(0, 2))]
        last = (rng.randint(0, 3), rng.randint(0, 9))
        e = rng.randint(0, 4)
        print(f"    ({reads}, {over}, {last}, {e}, {oracles.smallest_tid(reads, over, last, e)}),")
    print("]")

    print("TICTOC_CASES = [")
    print(f"    ([(3, 5)], [7], {oracles.smallest_commit_ts([(3, 5)], [7])}),")
    for _ in range(6):
        reads = []
        for _ in range(rng.randint(0, 3)):
            w = rng.randint(0, 20)
            reads.append((w, w + rng.randint(0, 6)))
        writes = [rng.randint(0, 20) for _ in range(rng.randint(0, 3))]
        print(f"    ({reads}, {writes}, {oracles.smallest_commit_ts(reads, writes)}),")
    print("]")

    chain = [(9, "C"), (5, "C"), (2, "C")]
    for ts in (6, 1, 100):
        i = oracles.visible(chain, ts)
        print(f"visible([9,5,2], ts={ts}) ->", None if i is None else chain[i][0])
    for wm in (10, 4):
        print(f"reclaim([9,5,2], wm={wm}) ->", sorted(chain[i][0] for i in oracles.reclaimable(chain, wm)))
    print("zipf N=2 theta=1 ->", oracles.zipf_exact(2, 1))
    print("backoff 1us x2 three rises ->", oracles.geometric_wait(1e-6, 2, 3, 1e-6, 1e-3))
    print("snapshot writer begin=7 {3,5,9} ->",
          oracles.snapshot_writer([(3, 13), (5, 15), (9, 19)], 7))


if __name__ == "__main__":
    main(*(int(a) for a in sys.argv[1:]))
