"""Repeat LMS fits on BCCG data with known smooth curves and summarise the errors.

    python3 scripts/lms_recovery.py --reps 20 -n 5000
"""

import argparse
import time

import numpy as np
import pandas as pd

from obtkit.lms import PERCENTILES, LmsConfig, fit_lms, percentile_at, sample_bccg


def u(a):
    return (np.asarray(a, float) - 45) / 40


TRUTH = {
    "L": lambda a: 0.6 - 0.5 * u(a),
    "M": lambda a: 540 - 60 * u(a) + 25 * u(a) ** 2,
    "S": lambda a: 0.12 + 0.03 * u(a),
}


def one_rep(seed, n, cfg):
    rng = np.random.default_rng(seed)
    age = rng.uniform(6, 85, n)
    y = sample_bccg(TRUTH["L"](age), TRUTH["M"](age), TRUTH["S"](age), rng)
    t0 = time.perf_counter()
    c = fit_lms(age, y, config=cfg)
    elapsed = time.perf_counter() - t0
    g = c.age_grid
    lo, hi = np.quantile(g, [0.05, 0.95])
    mid = (g >= lo) & (g <= hi)
    held_age = rng.uniform(g[0], g[-1], n)
    held = sample_bccg(TRUTH["L"](held_age), TRUTH["M"](held_age), TRUTH["S"](held_age), rng)
    cover = {f"cover_P{round(p * 100)}": np.mean(held < [percentile_at(c, a, p) for a in held_age])
             for p in (0.5, 0.9)}
    cols = [f"P{round(p * 100)}" for p in PERCENTILES]
    return {
        "seed": seed, "seconds": elapsed, "iterations": c.iterations, "converged": c.converged,
        "M_err": np.max(np.abs(c.M[mid] / TRUTH["M"](g[mid]) - 1)),
        "S_err": np.max(np.abs(c.S[mid] / TRUTH["S"](g[mid]) - 1)),
        "L_err": np.max(np.abs(c.L[mid] - TRUTH["L"](g[mid]))),
        "monotone": bool((np.diff(c.table()[cols].to_numpy(), axis=1) > 0).all()),
        **cover,
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--reps", type=int, default=20)
    ap.add_argument("-n", type=int, default=5000)
    ap.add_argument("--edf", type=float, nargs=3, default=(3.0, 5.0, 3.0), metavar=("L", "M", "S"))
    ap.add_argument("--out", help="optional CSV of per-replicate results")
    args = ap.parse_args(argv)

    cfg = LmsConfig(*args.edf)
    frame = pd.DataFrame([one_rep(seed, args.n, cfg) for seed in range(args.reps)])
    with pd.option_context("display.width", 160, "display.float_format", "{:.4f}".format):
        print(frame.to_string(index=False))
        print()
        print(frame.drop(columns=["seed"]).describe().loc[["mean", "max"]].to_string())
    if args.out:
        frame.to_csv(args.out, index=False)


if __name__ == "__main__":
    main()
