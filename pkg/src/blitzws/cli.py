"""Command line entry point: ``blitzws {fixture,solve,screen,bench}``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .bench import ARMS, SUMMARY_HEADER, TASKS, RunConfig, load_task, reference_optimum, run_arm
from .engine import EngineConfig, solve
from .fixtures import KINDS, FixtureSizes, make_fixture
from .screening import SafeRegion, blitz_screen, padded_gap

THREADS_ENV = "BLITZWS_NUM_THREADS"


def _add_problem_args(p):
    p.add_argument("--task", choices=TASKS, required=True)
    p.add_argument("--data", required=True, help="libsvm file")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--lambda", dest="lam", type=float)
    g.add_argument("--lambda-ratio", type=float, help="fraction of lambda_max, e.g. 0.2, 0.02, 0.002")
    g.add_argument("--active-groups", type=float, help="group lasso: fraction of groups nonzero at the solution")
    p.add_argument("--C", type=float, help="SVM loss weight")
    p.add_argument("--groups", help="group label per feature (default: <data>.groups)")
    p.add_argument("--no-intercept", action="store_true")
    p.add_argument("--no-standardize", action="store_true")
    p.add_argument("--min-nnz", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)


def _run_config(args, arm="blitzws") -> RunConfig:
    return RunConfig(task=args.task, data=args.data, lam=args.lam, lam_ratio=args.lambda_ratio,
                     active_groups=args.active_groups, C=args.C,
                     arm=arm, tol=getattr(args, "tol", 1e-6), seed=args.seed, out=getattr(args, "out", None),
                     groups=args.groups, fit_intercept=not args.no_intercept, standardize=not args.no_standardize,
                     min_nnz=args.min_nnz, time_limit=getattr(args, "time_limit", 60.0),
                     cache_dir=getattr(args, "cache_dir", None))


def cmd_fixture(args) -> int:
    sizes = FixtureSizes(n_examples=args.n_examples, n_features=args.n_features, density=args.density,
                         support=args.support, n_groups=args.n_groups, leaves=args.leaves)
    fx = make_fixture(args.kind, args.seed, sizes, args.out)
    for name, path in fx.files.items():
        print(f"{name}: {path}")
    return 0


def cmd_solve(args) -> int:
    cfg = _run_config(args)
    task = load_task(cfg)
    records = []

    def cb(engine, entry):
        rec = {"t": entry.t, "gap": entry.gap, "xi": entry.xi, "eps": entry.eps, "ws_size": entry.ws_size,
               "f_y": entry.f_y, "wall_seconds": entry.wall}
        records.append(rec)
        if args.verbose:
            print(json.dumps(rec))

    res = solve(task.problem, task.adapter.make_solver(), task.adapter.y0,
                EngineConfig(rel_tol=args.tol, time_limit=args.time_limit), callback=cb)
    st = res.state
    objective = task.primal_value(st.lb, st.y)
    print(f"status {res.status}  iterations {st.t}  primal objective {objective:.12g}  gap {st.gap:.3e}")
    if args.out:
        out = {"task": task.name, "param": task.param, "status": res.status, "objective": objective,
               "gap": st.gap, "iterations": records}
        Path(args.out).write_text(json.dumps(out, indent=1) + "\n")
    return 0 if res.converged else 1


def cmd_screen(args) -> int:
    """Run a few plain passes, then report what each safe region screens."""
    cfg = _run_config(args)
    task = load_task(cfg)
    problem = task.problem
    solver = task.adapter.make_solver()
    full = np.full(problem.m, -1, dtype=np.int64)
    solver.pin(full)
    solver.begin(full, [np.asarray(task.adapter.y0, float)])
    ws = solver.ws_indices(full)
    for _ in range(args.epochs):
        solver.work += solver.run_pass(ws)
    lb = solver.certificate().complete()
    z, ftz = solver.feasible_point(lb.minimizer, 0)
    gap = padded_gap(ftz, lb.min_value)
    rows = []
    for region in (SafeRegion.blitz(lb.minimizer, z, gap), SafeRegion.gap_safe(z, gap)):
        out = blitz_screen(problem, region)
        rows.append({"region": region.variant, "radius": region.radius, "screened": out.n_screened,
                     "terms": problem.m})
        print(f"{region.variant:<9} radius {region.radius:.4e}  screened {out.n_screened}/{problem.m}")
    if args.out:
        Path(args.out).write_text(json.dumps({"gap": gap, "epochs": args.epochs, "regions": rows}, indent=1) + "\n")
    return 0


def cmd_bench(args) -> int:
    arms = ARMS if args.arm == "all" else (args.arm,)
    base = _run_config(args, arms[0])
    task = load_task(base)
    ref = reference_optimum(task, args.cache_dir)
    print(SUMMARY_HEADER)
    summaries = []
    for arm in arms:
        clog, summary = run_arm(task, arm, ref, args.tol, args.time_limit, args.clock)
        summaries.append(summary)
        print(summary.as_row())
        if args.out:
            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
            clog.write(out / f"{task.name}_{arm.replace('+', '_')}.jsonl")
    if args.out:
        (Path(args.out) / f"{task.name}_summary.json").write_text(
            json.dumps([asdict(s) for s in summaries], indent=1) + "\n")
    return 0 if all(s.reached for s in summaries) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="blitzws", description="working-set convex solvers and benchmarks")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fixture", help="write a synthetic dataset in libsvm format")
    p.add_argument("--kind", choices=KINDS, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n-examples", type=int, default=200)
    p.add_argument("--n-features", type=int, default=1000)
    p.add_argument("--density", type=float, default=0.1)
    p.add_argument("--support", type=float, default=0.1)
    p.add_argument("--n-groups", type=int, default=50)
    p.add_argument("--leaves", type=int, default=8)
    p.set_defaults(func=cmd_fixture)

    p = sub.add_parser("solve", help="solve one problem with the working-set engine")
    _add_problem_args(p)
    p.add_argument("--tol", type=float, default=1e-8, help="relative gap target")
    p.add_argument("--time-limit", type=float, default=600.0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("screen", help="screen after a few plain solver passes")
    _add_problem_args(p)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--out")
    p.set_defaults(func=cmd_screen)

    p = sub.add_parser("bench", help="run solver arms against a cached reference optimum")
    _add_problem_args(p)
    p.add_argument("--arm", choices=ARMS + ("all",), default="all")
    p.add_argument("--tol", type=float, default=1e-6, help="target relative suboptimality")
    p.add_argument("--time-limit", type=float, default=60.0)
    p.add_argument("--clock", choices=("wall", "work"), default="wall")
    p.add_argument("--cache-dir", default=".blitzws_cache")
    p.add_argument("--out", help="directory for logs and the summary")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    threads = os.environ.get(THREADS_ENV)
    if threads:
        import numba

        numba.set_num_threads(int(threads))
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
