"""Working-set outer loop with capsule-based term selection.

Each iteration picks a progress coefficient ``xi`` and a subproblem
tolerance ``eps``, builds the capsule for ``xi`` around the segment
between the previous lower-bound minimizer and the feasible iterate,
fixes every term whose capsule test, piece, and previous minorant allow
it, solves the relaxed problem approximately, and line-searches the
feasible iterate.  The gap then satisfies

    Delta_t <= (1 - (1 - eps_t) xi_t) Delta_{t-1}.
"""

from __future__ import annotations

import logging
import math
import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .capsule import Converged, IterSnapshot, capsule_extents, capsule_from_extents, compute_capsule
from .piecewise import FULL, PiecewiseProblem
from .solvers import LowerBoundModel, SolverBudget, SubSolver, WarmStart, solve_subproblem

log = logging.getLogger(__name__)


@dataclass
class EngineConfig:
    rel_tol: float = 1e-8
    max_iter: int = 1000
    n_xi: int = 125
    xi_min: float = 1e-6
    n_eps: int = 10
    eps_min: float = 0.01
    eps_max: float = 0.7
    first_eps: float = 0.7
    clock: str = "wall"  # "wall" seconds or "work" (NNZ touched)
    max_passes: int = 10_000
    time_limit: float = np.inf  # overall budget in clock units
    line_tol: float = 1e-10

    def __post_init__(self):
        if self.clock not in ("wall", "work"):
            raise ValueError("clock must be 'wall' or 'work'")

    @property
    def xi_grid(self) -> np.ndarray:
        return np.logspace(math.log10(self.xi_min), 0.0, self.n_xi)

    @property
    def eps_grid(self) -> np.ndarray:
        return np.logspace(math.log10(self.eps_min), math.log10(self.eps_max), self.n_eps)


@dataclass
class EngineState:
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    gap: float
    f_y: float
    assignment: np.ndarray
    lb: LowerBoundModel
    t: int = 0
    initial_gap: float = 0.0


@dataclass
class IterationLog:
    t: int
    xi: float
    eps: float
    eps_certified: float
    gap: float
    gap_prev: float
    ws_size: int
    problem_size: int
    t_setup: float
    t_solve: float
    f_y: float
    lb_value: float
    work: int
    wall: float
    passes: int = 0
    hit_time_limit: bool = False
    stalled: bool = False


@dataclass
class EngineResult:
    state: EngineState
    logs: list
    converged: bool
    status: str = ""  # converged | max_iter | time_limit | stalled

    @property
    def y(self):
        return self.state.y

    @property
    def x(self):
        return self.state.x

    @property
    def gap(self):
        return self.state.gap


# ---------------------------------------------------------------------------
# tuning model


def _median(values) -> float:
    return float(np.median(np.asarray(values, dtype=float)))


class TuningModel:
    """Running estimates of setup cost, solve cost per unit size, and bound looseness."""

    def __init__(self):
        self.setup_history: deque = deque(maxlen=5)
        self.solve_history: deque = deque(maxlen=5)
        self.progress_history: deque = deque(maxlen=2)

    @property
    def c_setup(self) -> float:
        return _median(self.setup_history)

    @property
    def c_solve(self) -> float:
        return _median(self.solve_history)

    @property
    def c_progress(self) -> float:
        if not self.progress_history:
            return 1.0
        return max(1.0, _median(self.progress_history))

    @staticmethod
    def solve_estimate(t_solve, eps, problem_size) -> float:
        return t_solve * eps / problem_size

    @staticmethod
    def progress_estimate(gap, gap_prev, eps_hat, xi) -> float:
        return (1.0 - gap / gap_prev) / ((1.0 - eps_hat) * xi)

    def update(self, t_setup, t_solve, eps, problem_size, gap, gap_prev, eps_hat, xi):
        self.setup_history.append(float(t_setup))
        self.solve_history.append(self.solve_estimate(t_solve, eps, max(problem_size, 1)))
        self.progress_history.append(self.progress_estimate(gap, gap_prev, eps_hat, xi))

    def predicted_time(self, problem_size, eps):
        return self.c_setup + self.c_solve * np.asarray(problem_size, float) / eps

    def predicted_ratio(self, xi, eps):
        """Delta_hat / Delta_{t-1}."""
        return np.maximum(1.0 - (1.0 - eps) * xi * self.c_progress, eps)


def score_grid(tuner: TuningModel, xis, epss, sizes):
    """-log(Delta_hat/Delta) / T_hat over the (xi, eps) grid; rows follow ``xis``."""
    xi = np.asarray(xis, float)[:, None]
    eps = np.asarray(epss, float)[None, :]
    T = tuner.predicted_time(np.asarray(sizes, float)[:, None], eps)
    T = np.maximum(T, 1e-300)
    return -np.log(tuner.predicted_ratio(xi, eps)) / T


def choose_params(tuner: TuningModel, sizes, config: EngineConfig):
    """Best (xi, eps) on the grid given ProblemSize for each xi candidate."""
    xis, epss = config.xi_grid, config.eps_grid
    score = score_grid(tuner, xis, epss, sizes)
    i, j = np.unravel_index(int(np.argmax(score)), score.shape)
    return float(xis[i]), float(epss[j])


# ---------------------------------------------------------------------------
# working-set selection


@dataclass
class TermScan:
    """Per-block data needed to test many capsules along one line."""

    profiles: list
    active: list
    mults: list


def scan_terms(problem: PiecewiseProblem, snap: IterSnapshot, lb_prev: LowerBoundModel) -> TermScan:
    u = snap.direction
    profiles = [blk.profile(snap.y_prev, u) for blk in problem.blocks]
    active = [blk.active(snap.x_prev) for blk in problem.blocks]
    return TermScan(profiles, active, lb_prev.mults)


def _leave_mask(blk, prof, active, mult, s1, s2, r, idx):
    """Which of the terms ``idx`` may leave the working set, and onto which piece."""
    k, inside = blk.capsule_check(prof, s1, s2, r, idx)
    if blk.permanent:
        return np.zeros(len(k), dtype=bool), k
    linear = np.asarray(blk.pieces_linear)[k]
    ok = inside & linear & blk.c3_ok(mult, k, idx) & ~active[idx]
    return ok, k


def assignment_for_capsule(problem: PiecewiseProblem, cap, scan: TermScan) -> np.ndarray:
    parts = []
    for blk, prof, act, mult in zip(problem.blocks, scan.profiles, scan.active, scan.mults):
        idx = np.arange(blk.size)
        ok, k = _leave_mask(blk, prof, act, mult, cap.s1, cap.s2, cap.radius, idx)
        parts.append(np.where(ok, k, FULL))
    return np.concatenate(parts).astype(np.int64)


def select_working_set(state: EngineState, capsule, problem: PiecewiseProblem) -> np.ndarray:
    """Assignment for one capsule: a piece index for fixed terms, FULL for the working set."""
    snap = IterSnapshot(state.x, state.y, state.gap)
    return assignment_for_capsule(problem, capsule, scan_terms(problem, snap, state.lb))


def problem_size_sweep(problem: PiecewiseProblem, snap: IterSnapshot, scan: TermScan, xis):
    """ProblemSize for every xi, visiting candidates from largest to smallest.

    Capsules are nested in xi, so a term fixed at some xi stays fixed for
    every smaller xi; only terms still in the working set are re-tested.
    Returns (sizes, ws_counts) aligned with ``xis``.
    """
    xis = np.asarray(xis, float)
    d_min, d_max, radius = capsule_extents(snap, xis)
    order = np.argsort(-xis)
    remaining = [np.arange(blk.size) for blk in problem.blocks]
    sizes = np.zeros(len(xis))
    counts = np.zeros(len(xis), dtype=np.int64)
    for j in order:
        s1 = d_min[j] + radius[j]
        s2 = max(d_max[j] - radius[j], s1)
        total = 0
        count = 0
        for b, blk in enumerate(problem.blocks):
            idx = remaining[b]
            if len(idx) and not blk.permanent:
                ok, _ = _leave_mask(blk, scan.profiles[b], scan.active[b], scan.mults[b], s1, s2, radius[j], idx)
                idx = idx[~ok]
                remaining[b] = idx
            total += int(blk.nnz[idx].sum())
            count += len(idx)
        sizes[j] = total
        counts[j] = count
    return sizes, counts


# ---------------------------------------------------------------------------
# line search and gap


def extreme_feasible_point(problem: PiecewiseProblem, y_prev, z):
    """Farthest point from ``y_prev`` toward ``z`` that keeps every indicator finite."""
    d = z - y_prev
    alpha = min(1.0, problem.max_step(y_prev, d))
    return y_prev + alpha * d


def line_search_y(problem: PiecewiseProblem, y_prev, z, tol: float = 1e-10):
    """argmin of f over the segment [y_prev, z], by bisection on the right slope."""
    f_prev = problem.value(y_prev)
    if not np.isfinite(f_prev):
        raise ValueError("line search needs a starting point with finite objective")
    d = z - y_prev
    if not np.any(d):
        return y_prev.copy()
    # both ends finite means the whole segment is (the feasible set is convex)
    alpha_max = 1.0 if np.isfinite(problem.value(z)) else min(1.0, problem.max_step(y_prev, d))
    slopes = [fn for fn in (blk.line_slope(y_prev, d) for blk in problem.blocks) if fn is not None]
    psi = problem.psi

    def slope(alpha):
        return psi.slope(y_prev + alpha * d, d) + sum(fn(alpha) for fn in slopes)

    if alpha_max <= 0 or slope(0.0) >= 0:
        return y_prev.copy()
    s_end = slope(alpha_max)
    if not s_end >= 0:
        alpha = alpha_max
    else:
        lo, hi = 0.0, alpha_max
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if slope(mid) >= 0:
                hi = mid
            else:
                lo = mid
        alpha = hi
    y = y_prev + alpha * d if alpha < 1.0 else z.copy()
    if not problem.value(y) <= f_prev:
        return y_prev.copy()
    return y


def compute_gap(problem: PiecewiseProblem, y, lb: LowerBoundModel) -> float:
    fy = problem.value(y)
    if not np.isfinite(fy):
        raise ValueError("gap is undefined at a point with infinite objective")
    lb.complete()
    return fy - lb.min_value


# ---------------------------------------------------------------------------
# driver


class BlitzWS:
    """Run the working-set method on ``problem`` with ``solver`` from feasible ``y0``."""

    def __init__(self, problem: PiecewiseProblem, solver: SubSolver, y0, config: EngineConfig | None = None):
        self.problem = problem
        self.solver = solver
        self.config = config or EngineConfig()
        self.tuner = TuningModel()
        y0 = np.asarray(y0, dtype=np.float64)
        f0 = problem.value(y0)
        if solver.interior is None:
            solver.interior = y0.copy()
        if not np.isfinite(f0):
            raise ValueError("initial point must have a finite objective")
        lb = solver.initial_certificate().complete()
        self.state = EngineState(x=lb.minimizer, y=y0, z=y0, gap=f0 - lb.min_value, f_y=f0,
                                 assignment=np.full(problem.m, FULL, dtype=np.int64), lb=lb, t=0)
        self.state.initial_gap = self.state.gap
        self.logs: list[IterationLog] = []
        self._start = time.perf_counter()
        self._setup_work = int(problem.nnz.sum()) if problem.m else 0
        self._setup_units = 0

    def _now(self) -> float:
        if self.config.clock == "wall":
            return time.perf_counter()
        return float(self.solver.work + self._setup_units)

    def converged(self, state: EngineState | None = None) -> bool:
        s = state or self.state
        return s.gap <= self.config.rel_tol * (1.0 + abs(s.f_y))

    def run_iteration(self) -> IterationLog:
        cfg, problem, state = self.config, self.problem, self.state
        t = state.t + 1
        t0 = self._now()
        # the true gap is at least half the squared distance (strong convexity of
        # the bound); rounding in f_y - lb can put the computed value just below
        region_gap = max(state.gap, 0.5 * float(np.sum((state.x - state.y) ** 2)))
        snap = IterSnapshot.build(state.x, state.y, region_gap, initial_gap=state.initial_gap)
        scan = scan_terms(problem, snap, state.lb)
        xis = cfg.xi_grid
        sizes, counts = problem_size_sweep(problem, snap, scan, xis)
        self._setup_units += 3 * self._setup_work
        if t == 1:
            full = np.flatnonzero(counts == problem.m)
            xi = float(xis[full.min()]) if len(full) else 1.0
            eps = cfg.first_eps
            assignment = np.full(problem.m, FULL, dtype=np.int64)
            limit = np.inf
        else:
            xi, eps = choose_params(self.tuner, sizes, cfg)
            cap = compute_capsule(snap, xi)
            assignment = assignment_for_capsule(problem, cap, scan)
            ps = float(problem.nnz[assignment == FULL].sum())
            limit = self.tuner.c_solve * max(ps, 1.0) / eps
        psize = int(problem.nnz[assignment == FULL].sum())
        t1 = self._now()
        warm = WarmStart(x_prev=state.x, y_prev=state.y, lb_prev_value=state.lb.min_value, gap_prev=state.gap,
                         f_y_prev=state.f_y)
        budget = SolverBudget(eps_target=eps, wall_limit=limit if limit > 0 else np.inf,
                              max_passes=cfg.max_passes)
        res = solve_subproblem(self.solver, assignment, warm, budget, clock=cfg.clock)
        t2 = self._now()
        y = line_search_y(problem, state.y, res.z, cfg.line_tol)
        f_y = problem.value(y)
        self._setup_units += 2 * self._setup_work
        lb = res.lb
        gap = f_y - lb.min_value
        t3 = self._now()
        t_setup = (t1 - t0) + (t3 - t2)
        t_solve = t2 - t1
        eps_hat = min(max(res.sub_gap / state.gap, 0.0), 0.99)
        # cost is charged at the tolerance actually reached; the target alone
        # would let a too-short time limit reproduce itself forever
        eps_for_cost = min(max(eps, res.eps_certified), 0.99) if t > 1 else \
            min(max(res.eps_certified, cfg.eps_min), cfg.eps_max)
        self.tuner.update(t_setup, t_solve, eps_for_cost, psize, max(gap, 0.0), state.gap, eps_hat, xi)
        entry = IterationLog(t=t, xi=xi, eps=eps, eps_certified=res.eps_certified, gap=gap, gap_prev=state.gap,
                             ws_size=int(np.sum(assignment == FULL)), problem_size=psize, t_setup=t_setup,
                             t_solve=t_solve, f_y=f_y, lb_value=lb.min_value, work=self.solver.work,
                             wall=time.perf_counter() - self._start, passes=res.passes,
                             hit_time_limit=res.hit_time_limit, stalled=res.stalled)
        self.state = EngineState(x=res.x, y=y, z=res.z, gap=gap, f_y=f_y, assignment=assignment, lb=lb, t=t,
                                 initial_gap=state.initial_gap)
        self.logs.append(entry)
        log.debug("iter %d xi=%.3g eps=%.3g gap=%.3e ws=%d", t, xi, eps, gap, entry.ws_size)
        return entry

    def run(self, callback=None) -> EngineResult:
        cfg = self.config
        begin = self._now()
        done = self.converged()
        status = "converged" if done else "max_iter"
        while not done and self.state.t < cfg.max_iter:
            try:
                entry = self.run_iteration()
            except Converged:
                done = True
                break
            if callback is not None:
                callback(self, entry)
            done = self.converged()
            if done:
                break
            if entry.stalled and entry.gap >= entry.gap_prev:
                status = "stalled"
                break
            if self._now() - begin >= cfg.time_limit:
                status = "time_limit"
                break
        return EngineResult(self.state, self.logs, done, "converged" if done else status)


def solve(problem: PiecewiseProblem, solver: SubSolver, y0, config: EngineConfig | None = None,
          callback=None) -> EngineResult:
    return BlitzWS(problem, solver, y0, config).run(callback)
