"""Coordinate-update work of BlitzWS relative to plain coordinate descent on sparse lasso.

Work counts the nonzeros touched by coordinate updates, so the ratio does not
depend on machine speed.
"""

import argparse

import numpy as np

from blitzws.bench import build_task, reference_optimum, run_arm
from blitzws.fixtures import FixtureSizes, make_fixture
from blitzws.problems import LAMBDA_RATIOS


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--n-features", type=int, default=1000)
    ap.add_argument("--tol", type=float, default=1e-6)
    args = ap.parse_args()

    sizes = FixtureSizes(n_features=args.n_features)
    print(f"{'seed':<5} {'ratio':<7} {'blitzws work':>14} {'plain work':>14} {'work ratio':>11}")
    for ratio in LAMBDA_RATIOS:
        rows = []
        for seed in range(args.seeds):
            fx = make_fixture("lasso", seed, sizes)
            task = build_task("lasso", fx.X, fx.y, lam_ratio=ratio)
            ref = reference_optimum(task)
            work = {}
            for arm in ("blitzws", "plain"):
                _, s = run_arm(task, arm, ref, args.tol, time_limit=120)
                work[arm] = s.work if s.reached else np.inf
            rows.append(work["blitzws"] / work["plain"])
            print(f"{seed:<5} {ratio:<7g} {work['blitzws']:>14} {work['plain']:>14} {rows[-1]:>11.3f}")
        print(f"median work ratio at {ratio:g} lambda_max: {np.median(rows):.3f}")


if __name__ == "__main__":
    main()
