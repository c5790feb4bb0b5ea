"""Run every arm on the synthetic fixtures and print one summary row per run.

    python3 scripts/fixture_benchmark.py --seed 0 --tol 1e-6
"""

import argparse

from blitzws.bench import ARMS, SUMMARY_HEADER, build_task, reference_optimum, run_arm
from blitzws.fixtures import make_fixture
from blitzws.problems import LAMBDA_RATIOS

CASES = [("lasso", dict(lam_ratio=r)) for r in LAMBDA_RATIOS]
CASES += [("logreg", dict(lam_ratio=0.2)), ("grouplasso", dict(active_groups=0.1))]
CASES += [("svm", dict(C=c)) for c in (0.1, 1.0, 10.0)]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--tol", type=float, default=1e-6)
    ap.add_argument("--time-limit", type=float, default=60.0)
    ap.add_argument("--cache-dir", default=None)
    args = ap.parse_args()

    print(SUMMARY_HEADER)
    fixtures = {}
    for kind, kw in CASES:
        fx_kind = {"grouplasso": "group"}.get(kind, kind)
        fx = fixtures.setdefault(fx_kind, make_fixture(fx_kind, args.seed))
        task = build_task(kind, fx.X, fx.y, groups=fx.groups, **kw)
        ref = reference_optimum(task, args.cache_dir)
        for arm in ARMS:
            _, summary = run_arm(task, arm, ref, args.tol, time_limit=args.time_limit)
            print(summary.as_row(), flush=True)


if __name__ == "__main__":
    main()
