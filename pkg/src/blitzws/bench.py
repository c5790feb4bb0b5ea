"""Benchmark runs: one task, one solver arm, one convergence log.

Arms
----
``blitzws``         the working-set engine;
``plain``           the subproblem solver on every term, pass after pass;
``plain+screen``    plain, with the blitz safe region screening every 5 passes;
``plain+gapsafe``   plain, with gap-safe sphere screening every 5 passes.

Relative suboptimality is measured on the primal ML objective against a
cached reference optimum that is itself a certified lower bound, so the
logged value never understates the true suboptimality.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .engine import BlitzWS, EngineConfig
from .fixtures import read_groups
from .io import PreprocessOptions, preprocess, read_libsvm
from .piecewise import FULL, SparseColumnMatrix
from .problems import (LAMBDA_RATIOS, build_group_dual, build_l1_dual, build_svm_primal, compute_lambda_max,
                       group_lambda_max, prepare_groups)
from .screening import SafeRegion, ScreenOutcome, blitz_screen, padded_gap

log = logging.getLogger(__name__)

TASKS = ("lasso", "logreg", "grouplasso", "svm")
ARMS = ("blitzws", "plain", "plain+screen", "plain+gapsafe")
LOG_FIELDS = ("t", "wall_seconds", "rel_subopt", "ws_size", "xi", "eps", "screened_count", "work")
SCREEN_EVERY = 5


class ReferenceSolveError(RuntimeError):
    pass


@dataclass
class RunConfig:
    task: str
    data: str | None = None
    lam: float | None = None
    lam_ratio: float | None = None
    active_groups: float | None = None  # group lasso: pick lambda so this fraction of groups is nonzero
    C: float | None = None
    arm: str = "blitzws"
    tol: float = 1e-6
    seed: int = 0
    out: str | None = None
    groups: str | None = None
    fit_intercept: bool = True
    standardize: bool = True
    min_nnz: int = 10
    time_limit: float = 60.0
    clock: str = "wall"
    cache_dir: str | None = None

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}")
        if self.arm not in ARMS:
            raise ValueError(f"arm must be one of {ARMS}")
        if self.task == "svm":
            if self.C is None or not self.C > 0:
                raise ValueError("svm needs a positive C")
        elif sum(v is not None for v in (self.lam, self.lam_ratio, self.active_groups)) != 1:
            raise ValueError("give exactly one of lambda, lambda ratio and active-group fraction")
        if self.active_groups is not None and (self.task != "grouplasso" or not 0 < self.active_groups <= 1):
            raise ValueError("an active-group fraction in (0, 1] applies to group lasso only")
        if self.lam_ratio is not None and not 0 < self.lam_ratio <= 1:
            raise ValueError("lambda ratio must lie in (0, 1]")

    @property
    def preprocess_options(self) -> PreprocessOptions:
        return PreprocessOptions(standardize=self.standardize, min_nnz=self.min_nnz)


# ---------------------------------------------------------------------------
# tasks


@dataclass
class Task:
    """A built problem plus how to read the primal ML objective off a run."""

    name: str
    adapter: object
    param: float  # lambda or C actually used
    key: str  # cache key

    @property
    def problem(self):
        return self.adapter.problem

    def primal_value(self, lb, point) -> float:
        """Primal objective of the current estimate: -min LB for the duals, f(point) for the SVM."""
        if self.name == "svm":
            return self.problem.value(point)
        return -lb.complete().min_value

    def reference_from(self, f_y: float, lb_value: float) -> float:
        """A lower bound on the optimal primal value from a finished run."""
        return lb_value if self.name == "svm" else -f_y


def _hash_key(X: SparseColumnMatrix, y, *parts) -> str:
    h = hashlib.sha256()
    for arr in (X.indptr, X.indices, X.data, np.asarray(y, float)):
        h.update(np.ascontiguousarray(arr).tobytes())
    h.update(repr(parts).encode())
    return h.hexdigest()[:24]


def lambda_for_group_support(X, y, groups, frac: float = 0.1, fit_intercept: bool = True,
                             max_iter: int = 60) -> float:
    """A lambda at which exactly ``round(frac * n_groups)`` groups are nonzero in the solution.

    Bisection on log(lambda); each probe solves the group lasso to a tight gap.
    """
    A, gp, _, _ = prepare_groups(X, groups, True)
    n_groups = len(gp) - 1
    target = max(1, int(round(frac * n_groups)))
    y = np.asarray(y, float)

    def count(lam):
        ad = build_group_dual(X, y, groups, lam, fit_intercept=fit_intercept)
        solver = ad.make_solver()
        BlitzWS(ad.problem, solver, ad.y0, EngineConfig(rel_tol=1e-10, clock="work")).run()
        return len(ad.active_groups(solver.w))

    hi = group_lambda_max(A, y, gp, fit_intercept)
    lo = hi
    for _ in range(40):
        lo *= 0.25
        if count(lo) >= target:
            break
    else:
        raise ValueError("no lambda activates enough groups")
    for _ in range(max_iter):
        mid = float(np.sqrt(lo * hi))
        k = count(mid)
        if k == target:
            return mid
        lo, hi = (mid, hi) if k > target else (lo, mid)
    raise ValueError(f"no lambda gives exactly {target} active groups")


def build_task(task: str, X: SparseColumnMatrix, y, lam=None, lam_ratio=None, C=None, groups=None,
               fit_intercept=True, flags=(), active_groups=None) -> Task:
    y = np.asarray(y, float)
    if task in ("lasso", "logreg"):
        loss = "squared" if task == "lasso" else "logistic"
        if lam is None:
            lam = lam_ratio * compute_lambda_max(X, y, loss, fit_intercept)
        ad = build_l1_dual(X, y, loss, lam, fit_intercept)
        param = lam
    elif task == "grouplasso":
        if groups is None:
            raise ValueError("group lasso needs a group label per feature")
        if lam is None and active_groups is not None:
            lam = lambda_for_group_support(X, y, groups, active_groups, fit_intercept)
        elif lam is None:
            A, gp, _, _ = prepare_groups(X, groups, True)
            lam = lam_ratio * group_lambda_max(A, y, gp, fit_intercept)
        ad = build_group_dual(X, y, groups, lam, fit_intercept=fit_intercept)
        param = lam
    elif task == "svm":
        ad = build_svm_primal(X, y, C)
        param = C
    else:
        raise ValueError(f"unknown task {task!r}")
    return Task(task, ad, float(param), _hash_key(X, y, task, float(param), fit_intercept, tuple(flags)))


def load_task(cfg: RunConfig) -> Task:
    X, y = read_libsvm(cfg.data)
    groups = None
    if cfg.task == "grouplasso":
        gpath = Path(cfg.groups) if cfg.groups else Path(cfg.data).with_suffix(".groups")
        groups = read_groups(gpath)
        # group structure is defined on the raw columns, so no pruning or rescaling here
        return build_task(cfg.task, X, y, cfg.lam, cfg.lam_ratio, cfg.C, groups, cfg.fit_intercept,
                          active_groups=cfg.active_groups)
    if cfg.task == "svm":
        flags = ()
    else:
        pre = preprocess(X, cfg.preprocess_options)
        X = pre.matrix
        flags = (cfg.standardize, cfg.min_nnz)
    return build_task(cfg.task, X, y, cfg.lam, cfg.lam_ratio, cfg.C, groups, cfg.fit_intercept, flags)


# ---------------------------------------------------------------------------
# reference optimum


def reference_optimum(task: Task, cache_dir=None, rel_gap: float = 1e-12, accept_gap: float = 1e-9,
                      time_limit: float = 600.0) -> float:
    """Lower bound on the optimal primal value, from a long engine run; cached on disk by task key."""
    path = None
    if cache_dir is not None:
        path = Path(cache_dir) / f"ref_{task.key}.json"
        if path.exists():
            return float(json.loads(path.read_text())["value"])
    cfg = EngineConfig(rel_tol=rel_gap, max_iter=10_000, time_limit=time_limit)
    eng = BlitzWS(task.problem, task.adapter.make_solver(), task.adapter.y0, cfg)
    res = eng.run()
    st = res.state
    rel = st.gap / (1.0 + abs(st.f_y))
    if not np.isfinite(st.gap) or rel > accept_gap:
        raise ReferenceSolveError(f"reference solve for {task.name} stopped ({res.status}) at relative gap "
                                  f"{rel:.3e} after {st.t} iterations; f(y)={st.f_y!r}, lower bound "
                                  f"{st.lb.min_value!r}")
    value = task.reference_from(st.f_y, st.lb.min_value)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps({"value": value, "gap": st.gap, "task": task.name, "param": task.param,
                                    "iterations": st.t}, indent=1) + "\n")
    return value


# ---------------------------------------------------------------------------
# logging


@dataclass
class ConvergenceLog:
    records: list = field(default_factory=list)

    def add(self, **rec):
        prev = self.records[-1]["wall_seconds"] if self.records else -np.inf
        # the clock must strictly increase even when two records share a timer tick
        rec["wall_seconds"] = max(float(rec["wall_seconds"]), np.nextafter(prev, np.inf))
        self.records.append({k: rec.get(k) for k in LOG_FIELDS})

    def to_lines(self) -> str:
        return "".join(json.dumps(r) + "\n" for r in self.records)

    def write(self, path) -> None:
        Path(path).write_text(self.to_lines())

    @classmethod
    def read(cls, path) -> "ConvergenceLog":
        recs = [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
        return cls(recs)

    def rel_subopt(self) -> np.ndarray:
        return np.array([r["rel_subopt"] for r in self.records], float)

    def first_reaching(self, tol: float):
        for r in self.records:
            if r["rel_subopt"] <= tol:
                return r
        return None


@dataclass
class RunSummary:
    task: str
    arm: str
    param: float
    reference: float
    objective: float
    rel_subopt: float
    reached: bool
    steps: int
    work: int
    wall_seconds: float
    screened: int = 0

    def as_row(self) -> str:
        return (f"{self.task:<10} {self.arm:<14} {self.param:<11.4g} {self.rel_subopt:<11.3e} "
                f"{self.steps:<6d} {self.work:<12d} {self.wall_seconds:<9.3f} {self.screened}")


SUMMARY_HEADER = f"{'task':<10} {'arm':<14} {'param':<11} {'rel_subopt':<11} {'steps':<6} {'work':<12} " \
                 f"{'seconds':<9} screened"


def _rel(value: float, ref: float) -> float:
    return max(value - ref, 0.0) / max(abs(ref), 1e-300)


# ---------------------------------------------------------------------------
# arms


def run_blitzws(task: Task, ref: float, tol: float = 1e-6, time_limit: float = 60.0, clock: str = "wall",
                max_iter: int = 10_000):
    cfg = EngineConfig(rel_tol=1e-14, max_iter=max_iter, time_limit=time_limit, clock=clock)
    solver = task.adapter.make_solver()
    eng = BlitzWS(task.problem, solver, task.adapter.y0, cfg)
    clog = ConvergenceLog()
    start = time.perf_counter()
    best = np.inf

    def record(engine, entry):
        nonlocal best
        st = engine.state
        best = min(best, task.primal_value(st.lb, st.y))
        rel = _rel(best, ref)
        clog.add(t=entry.t, wall_seconds=time.perf_counter() - start, rel_subopt=rel, ws_size=entry.ws_size,
                 xi=entry.xi, eps=entry.eps, screened_count=0, work=int(solver.work))
        if rel <= tol:
            raise _Done

    try:
        eng.run(callback=record)
    except _Done:
        pass
    summary = _summary(task, "blitzws", ref, best, clog, solver.work, tol)
    return clog, summary


class _Done(Exception):
    pass


def run_plain(task: Task, ref: float, tol: float = 1e-6, screen: str | None = None, time_limit: float = 60.0,
              max_passes: int = 1_000_000, screen_every: int = SCREEN_EVERY):
    """Passes over every (unscreened) term; ``screen`` is None, "blitz" or "gap_safe"."""
    problem = task.problem
    solver = task.adapter.make_solver()
    anchor = np.asarray(task.adapter.y0, float)
    assignment = np.full(problem.m, FULL, dtype=np.int64)
    screened = ScreenOutcome(assignment.copy())
    solver.pin(assignment)
    solver.begin(assignment, [anchor])
    ws = solver.ws_indices(assignment)
    clog = ConvergenceLog()
    best = np.inf
    start = time.perf_counter()
    arm = "plain" if screen is None else ("plain+screen" if screen == "blitz" else "plain+gapsafe")
    for epoch in range(1, max_passes + 1):
        solver.work += solver.run_pass(ws)
        lb = solver.certificate().complete()
        z, ftz = solver.feasible_point(lb.minimizer, 0)
        best = min(best, task.primal_value(lb, z))
        rel = _rel(best, ref)
        if screen is not None and epoch % screen_every == 0 and np.isfinite(ftz):
            gap = padded_gap(ftz, lb.min_value)
            region = SafeRegion.blitz(lb.minimizer, z, gap) if screen == "blitz" else SafeRegion.gap_safe(z, gap)
            new = screened.merge(blitz_screen(problem, region))
            if new.n_screened > screened.n_screened:
                screened = new
                assignment = screened.assignment
                solver.pin(assignment)
                solver.begin(assignment, [anchor])
                ws = solver.ws_indices(assignment)
        wall = time.perf_counter() - start
        clog.add(t=epoch, wall_seconds=wall, rel_subopt=rel, ws_size=int(np.sum(assignment == FULL)), xi=None,
                 eps=None, screened_count=screened.n_screened, work=int(solver.work))
        if rel <= tol or wall >= time_limit:
            break
    summary = _summary(task, arm, ref, best, clog, solver.work, tol, screened.n_screened)
    return clog, summary


def _summary(task, arm, ref, best, clog, work, tol, screened=0) -> RunSummary:
    last = clog.records[-1] if clog.records else {"rel_subopt": np.inf, "wall_seconds": 0.0}
    return RunSummary(task.name, arm, task.param, ref, float(best), float(last["rel_subopt"]),
                      bool(last["rel_subopt"] <= tol), len(clog.records), int(work),
                      float(last["wall_seconds"]), screened)


def run_arm(task: Task, arm: str, ref: float, tol: float = 1e-6, time_limit: float = 60.0, clock: str = "wall"):
    if arm == "blitzws":
        return run_blitzws(task, ref, tol, time_limit, clock)
    if arm == "plain":
        return run_plain(task, ref, tol, None, time_limit)
    if arm == "plain+screen":
        return run_plain(task, ref, tol, "blitz", time_limit)
    if arm == "plain+gapsafe":
        return run_plain(task, ref, tol, "gap_safe", time_limit)
    raise ValueError(f"unknown arm {arm!r}")


def run_benchmark(cfg: RunConfig):
    """Load the data, resolve the reference optimum, run the arm and write the log if asked."""
    task = load_task(cfg)
    ref = reference_optimum(task, cfg.cache_dir)
    clog, summary = run_arm(task, cfg.arm, ref, cfg.tol, cfg.time_limit, cfg.clock)
    if cfg.out:
        out = Path(cfg.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        clog.write(out)
        out.with_suffix(".summary.json").write_text(json.dumps(asdict(summary), indent=1) + "\n")
    return clog, summary


__all__ = ["ARMS", "LAMBDA_RATIOS", "TASKS", "ConvergenceLog", "ReferenceSolveError", "RunConfig", "RunSummary",
           "SUMMARY_HEADER", "Task", "build_task", "load_task", "reference_optimum", "run_arm", "run_benchmark",
           "run_blitzws", "run_plain"]
