"""Compare the non-wear detector with the brute-force rule checker over a parameter grid.

Also counts how often loosening a tolerance lowers total non-wear (the greedy
scan is not monotone in its parameters).

    python3 scripts/nonwear_oracle_sweep.py --series 300
"""

import argparse
import itertools
import sys
from pathlib import Path

import numpy as np

from obtkit.nonwear import NonWearParams, detect_nonwear

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))
from oracles import brute_force_nonwear, random_counts  # noqa: E402


def spans(counts, params):
    return [(i.start_index, i.end_index, i.interrupted_minutes) for i in detect_nonwear(counts, params)]


def total(counts, params):
    return sum(e - s for s, e, _ in spans(counts, params))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--series", type=int, default=300)
    ap.add_argument("--max-len", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    data = [random_counts(rng, int(rng.integers(1, args.max_len + 1))) for _ in range(args.series)]
    grid = list(itertools.product((30, 60, 90), (0, 1, 2, 3), (50, 100)))
    print("min_len max_interrupts ceiling  mismatches  mean_nonwear_min")
    for min_len, k, ceiling in grid:
        p = NonWearParams(min_len, k, ceiling)
        bad = sum(spans(c, p) != brute_force_nonwear(c, min_len, k, ceiling) for c in data)
        mean = np.mean([total(c, p) for c in data])
        print(f"{min_len:7d} {k:14d} {ceiling:7d}  {bad:10d}  {mean:16.1f}")

    drops_k = sum(total(c, NonWearParams(60, 2, 100)) < total(c, NonWearParams(60, 1, 100)) for c in data)
    drops_c = sum(total(c, NonWearParams(60, 2, 100)) < total(c, NonWearParams(60, 2, 50)) for c in data)
    print(f"series where 2 interrupts give less non-wear than 1: {drops_k}/{len(data)}")
    print(f"series where ceiling 100 gives less non-wear than 50: {drops_c}/{len(data)}")


if __name__ == "__main__":
    main()
