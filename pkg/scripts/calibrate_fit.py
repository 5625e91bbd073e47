"""Fit-recovery sweep: how often the plateau fitter recovers noiseless plateaus.

    python3 scripts/calibrate_fit.py --trials 500

Reports the recovery rate (c within 2 frames, w within 10%) and the worst
errors, binned by slope steepness.
"""

import argparse

import numpy as np

from tsrefine.bench import fit_trial


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--trials", type=int, default=500)
    parser.add_argument("--seed", type=int, default=8)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    rows = []
    for _ in range(args.trials):
        truth, got = fit_trial(rng)
        rows.append((truth.s, abs(got.c - truth.c), abs(got.w - truth.w) / truth.w))
    rows = np.array(rows)
    ok = (rows[:, 1] <= 2.0) & (rows[:, 2] <= 0.1)
    print(f"recovered {ok.sum()}/{len(rows)}")
    edges = [0.25, 0.5, 0.75, 1.0, 1.25, 1.5]
    for lo, hi in zip(edges[:-1], edges[1:]):
        m = (rows[:, 0] >= lo) & (rows[:, 0] < hi)
        if m.any():
            print(f"s in [{lo:.2f}, {hi:.2f}): {ok[m].mean():.3f} recovered, "
                  f"max |dc| {rows[m, 1].max():.3f}, max rel dw {rows[m, 2].max():.4f}")


if __name__ == "__main__":
    main()
