"""Subproblem solvers that return lower-bound certificates.

Each solver owns a warm-startable state (dual multipliers or primal
weights) indexed over *all* terms of the full problem.  Terms outside the
working set keep the multipliers of their fixed piece, so the certificate
for the relaxed objective is also a certificate for the full one.

The certificate is a 1-strongly convex quadratic

    f_LB(x) = psi(a) + <g_psi, x - a> + 0.5 ||x - a||^2 + sum_i l_i(x)

where ``l_i`` is the affine minorant given by term ``i``'s multiplier.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .piecewise import (FULL, BandConstraints, EqualityConstraint, GroupNormConstraints, HalfSpaceConstraints,
                        HingeLosses, PiecewiseProblem, step_to_ball, step_to_bound)

@dataclass
class LowerBoundModel:
    """Quadratic lower bound on f_t built around ``anchor``."""

    problem: PiecewiseProblem
    anchor: np.ndarray
    psi_value: float
    g_psi: np.ndarray
    mults: list
    minimizer: np.ndarray | None = None
    min_value: float | None = None

    def total_gradient(self) -> np.ndarray:
        g = self.g_psi.copy()
        for blk, mu in zip(self.problem.blocks, self.mults):
            g += blk.minorant_grad(mu)
        return g

    def value(self, x) -> float:
        r = x - self.anchor
        v = self.psi_value + float(self.g_psi @ r) + 0.5 * float(r @ r)
        for blk, mu in zip(self.problem.blocks, self.mults):
            v += blk.minorant_value(mu, x)
        return v

    def term_linear_part(self, i):
        """(gradient, offset) of the i-th affine minorant."""
        b = int(np.searchsorted(self.problem.offsets, i, side="right") - 1)
        return self.problem.blocks[b].term_minorant(self.mults[b], i - self.problem.offsets[b])

    def complete(self) -> "LowerBoundModel":
        """Fill in the minimizer and minimum by direct computation."""
        if self.minimizer is None:
            self.minimizer = minimize_lower_bound(self)
        if self.min_value is None:
            self.min_value = self.value(self.minimizer)
        return self


def minimize_lower_bound(lb: LowerBoundModel) -> np.ndarray:
    return lb.anchor - lb.total_gradient()


@dataclass
class SolverBudget:
    eps_target: float
    wall_limit: float = np.inf
    max_passes: int = 10_000

    def __post_init__(self):
        if not 0.0 <= self.eps_target < 1.0:
            raise ValueError("eps_target must lie in [0, 1)")
        if not self.wall_limit > 0:
            raise ValueError("wall_limit must be positive")


@dataclass
class WarmStart:
    """What a subproblem needs from the previous iteration."""

    x_prev: np.ndarray
    y_prev: np.ndarray
    lb_prev_value: float
    gap_prev: float
    f_y_prev: float = 0.0


@dataclass
class SubproblemResult:
    z: np.ndarray
    lb: LowerBoundModel
    x: np.ndarray
    f_t_z: float
    sub_gap: float
    eps_certified: float
    passes: int
    work: int
    hit_time_limit: bool = False
    hit_pass_limit: bool = False
    elapsed: float = 0.0
    stalled: bool = False


class SubproblemError(RuntimeError):
    pass


def certified_eps(sub_gap, lb_value, warm: WarmStart, z) -> float:
    """Smallest eps for which both termination conditions hold, computed without slack."""
    e1 = max(sub_gap, 0.0) / warm.gap_prev
    half = 0.5 * float((z - warm.x_prev) @ (z - warm.x_prev))
    progress = lb_value - warm.lb_prev_value
    if half > 0:
        e2 = 1.0 - progress / half
    else:
        e2 = 0.0 if progress >= 0 else np.inf
    return max(e1, e2, 0.0)


class SubSolver:
    """Common driver; subclasses implement the pass and the certificate."""

    name = "base"

    def __init__(self, problem: PiecewiseProblem):
        self.problem = problem
        self.work = 0
        self.eps_hint = 0.1
        self.interior = None  # optional strictly feasible point used as a second anchor

    # hooks ---------------------------------------------------------------
    def pin(self, assignment):
        """Move every fixed term's multiplier onto its fixed piece."""

    def run_pass(self, ws) -> int:
        raise NotImplementedError

    def certificate(self) -> LowerBoundModel:
        raise NotImplementedError

    def begin(self, assignment, anchors):
        self._rel = self.problem.relaxed(assignment)
        self._anchors = anchors

    def feasible_point(self, x, k: int):
        """A point on the segment from anchor ``k`` toward ``x`` that is feasible for f_t, and f_t there."""
        rel = self._rel
        y = self._anchors[k]
        d = x - y
        alpha = min(1.0, rel.max_step(y, d))
        z = y + alpha * d if alpha < 1.0 else x.copy()
        return z, rel.value(z)

    def initial_certificate(self) -> LowerBoundModel:
        """Certificate of the warm state before any working-set pass."""
        return self.certificate()

    # driver --------------------------------------------------------------
    def ws_indices(self, assignment):
        out = []
        for blk, asg in zip(self.problem.blocks, self.problem.split(np.asarray(assignment))):
            if blk.permanent:
                out.append(np.arange(blk.size, dtype=np.int64))
            else:
                out.append(np.flatnonzero(asg == FULL).astype(np.int64))
        return out


def solve_subproblem(solver: SubSolver, assignment, warm: WarmStart, budget: SolverBudget,
                     clock: str = "wall", min_passes: int = 1) -> SubproblemResult:
    problem = solver.problem
    if not np.isfinite(warm.gap_prev) or warm.gap_prev <= 0:
        raise ValueError("previous gap must be positive and finite")
    assignment = np.asarray(assignment, dtype=np.int64)
    solver.eps_hint = budget.eps_target
    solver.pin(assignment)
    anchors = [warm.y_prev] if solver.interior is None else [warm.y_prev, solver.interior]
    solver.begin(assignment, anchors)
    ws = solver.ws_indices(assignment)
    start_wall = time.perf_counter()
    start_work = solver.work
    passes = 0
    hit_time = hit_pass = stalled = False
    last = None
    while True:
        solver.work += solver.run_pass(ws)
        passes += 1
        lb = solver.certificate()
        x = lb.minimizer
        best = None
        # any f_t-feasible z is admissible; keep the one certifying the smallest eps
        for k in range(len(anchors)):
            z, ftz = solver.feasible_point(x, k)
            if not np.isfinite(ftz):
                continue
            sub_gap = max(ftz - lb.min_value, 0.0)
            eps = certified_eps(sub_gap, lb.min_value, warm, z)
            if best is None or eps < best[0]:
                best = (eps, z, ftz, sub_gap)
        if best is None:
            raise SubproblemError(f"{solver.name}: no finite feasible point for the relaxed objective")
        eps, z, ftz, sub_gap = best
        # floating-point floor: x is bitwise unchanged and the bound stopped rising (x alone can
        # plateau while multipliers still move along the null space of A)
        stalled = last is not None and np.array_equal(last[0], x) and lb.min_value <= last[1]
        last = (x.copy(), lb.min_value)
        elapsed = (time.perf_counter() - start_wall) if clock == "wall" else float(solver.work - start_work)
        if passes >= min_passes and eps <= budget.eps_target:
            break
        if passes >= budget.max_passes:
            hit_pass = True
            break
        if stalled:
            break
        if elapsed >= budget.wall_limit and eps < 1.0 and passes >= min_passes:
            hit_time = True
            break
    return SubproblemResult(z=z, lb=lb, x=x, f_t_z=ftz, sub_gap=sub_gap, eps_certified=eps, passes=passes,
                            work=solver.work - start_work, hit_time_limit=hit_time, hit_pass_limit=hit_pass,
                            elapsed=elapsed, stalled=stalled)


# ---------------------------------------------------------------------------
# min-norm point under half-space constraints


class HildrethSolver(SubSolver):
    """Cyclic projection (Hildreth) on the multipliers of min 0.5||x - c||^2 s.t. A^T x <= b."""

    name = "hildreth"

    def __init__(self, problem: PiecewiseProblem):
        super().__init__(problem)
        (blk,) = problem.blocks
        if not isinstance(blk, HalfSpaceConstraints):
            raise TypeError("HildrethSolver needs a single half-space block")
        self.blk = blk
        self.center = problem.psi.center
        self.mu = np.zeros(blk.size)
        self.x = self.center.copy()

    def pin(self, assignment):
        fixed = np.flatnonzero((assignment != FULL) & (self.mu != 0))
        for i in fixed:
            K.col_axpy(self.blk.A.indptr, self.blk.A.indices, self.blk.A.data, i, self.mu[i], self.x)
            self.mu[i] = 0.0

    def run_pass(self, ws) -> int:
        A = self.blk.A
        return K.hildreth_pass(A.indptr, A.indices, A.data, A.sq_norms, self.blk.b, ws[0], self.mu, self.x)

    def certificate(self) -> LowerBoundModel:
        psi = self.problem.psi
        x = self.x.copy()
        am = self.center - x  # A mu
        val = -0.5 * float(am @ am) + float(am @ self.center) - float(self.blk.b @ self.mu) + psi.const
        return LowerBoundModel(self.problem, x, psi.value(x), psi.grad(x), [self.mu.copy()], x, val)


# ---------------------------------------------------------------------------
# sparse regression duals: shared primal state (weights, bias, predictions)


class _RegressionDualSolver(SubSolver):
    """Primal coordinate methods for min_w sum L(A w + beta) + penalty, viewed through the dual."""

    def __init__(self, problem: PiecewiseProblem, loss, labels):
        super().__init__(problem)
        self.blk = problem.blocks[0]
        self.eq = problem.blocks[1] if len(problem.blocks) > 1 else None
        self.A = self.blk.A
        self.loss = loss
        self.labels = np.asarray(labels, dtype=np.float64)
        self.lam = self.blk.lam
        self.w = np.zeros(self.A.n_cols)
        self.beta = np.zeros(1)
        self.pred = np.zeros(self.A.n_rows)  # A w + beta
        if self.eq is not None:
            self.work += self.fit_bias()

    def fit_bias(self) -> int:
        raise NotImplementedError

    def penalty(self) -> float:
        return self.lam * float(np.abs(self.w).sum())

    def dual_point(self):
        return self.loss.deriv(self.pred, self.labels)

    def primal_value(self) -> float:
        return float(np.sum(self.loss.value(self.pred, self.labels))) + self.penalty()

    def certificate(self) -> LowerBoundModel:
        x0 = self.dual_point()
        psi = self.problem.psi
        mults = [self.w.copy()] + ([self.beta.copy()] if self.eq is not None else [])
        return LowerBoundModel(self.problem, x0, psi.value(x0), self.pred.copy(), mults, x0,
                               -self.primal_value())

    def begin(self, assignment, anchors):
        super().begin(assignment, anchors)
        self._ws_cols = self.ws_indices(assignment)[0]
        self._p_anchor = [self._ws_profile(a) for a in anchors]
        self._q_for = None

    def _ws_profile(self, v):
        A = self.A
        return K.band_profile(A.indptr, A.indices, A.data, self._ws_cols, v)

    def feasible_point(self, x, k):
        # the anchor is feasible; walk toward x until the first working-set constraint binds
        if self._q_for is None or self._q_for[0] is not x:
            self._q_for = (x, self._ws_profile(x))
        p = self._p_anchor[k]
        q = self._q_for[1] - p
        alpha = self._alpha(p, q) if len(p) else 1.0
        y = self._anchors[k]
        z = x.copy() if alpha >= 1.0 else y + alpha * (x - y)
        return z, self.problem.psi.value(z)

    def _alpha(self, p, q) -> float:
        return min(1.0, step_to_bound(p, q, upper=self.lam, lower=-self.lam))


class LassoCDSolver(_RegressionDualSolver):
    """Cyclic coordinate descent on the squared-loss lasso, closed-form intercept."""

    name = "lasso_cd"

    def fit_bias(self) -> int:
        shift = float(np.mean(self.pred - self.labels))
        self.beta[0] -= shift
        self.pred -= shift
        return self.A.n_rows

    def pin(self, assignment):
        asg = self.problem.split(assignment)[0]
        fixed = np.flatnonzero((asg != FULL) & (self.w != 0))
        A = self.A
        for i in fixed:
            K.col_axpy(A.indptr, A.indices, A.data, i, -self.w[i], self.pred)
            self.w[i] = 0.0

    def run_pass(self, ws) -> int:
        A = self.A
        resid = self.pred - self.labels
        work = K.lasso_cd_pass(A.indptr, A.indices, A.data, A.sq_norms, self.lam, ws[0], self.w, resid)
        self.pred = resid + self.labels
        if self.eq is not None:
            work += self.fit_bias()
        return work


class ProxNewtonSolver(_RegressionDualSolver):
    """Proximal Newton with an inner weighted CD for l1 problems with smooth losses.

    One pass is one outer step: build the second-order model on the
    working set, solve it inexactly by CD, backtrack, then recenter the
    intercept with a 1-D Newton solve.
    """

    name = "prox_newton"
    inner_passes = 20
    armijo = 1e-4

    def fit_bias(self) -> int:
        work = 0
        for _ in range(100):
            g = float(np.sum(self.loss.deriv(self.pred, self.labels)))
            h = float(np.sum(self.loss.hess(self.pred, self.labels)))
            work += self.A.n_rows
            if h <= 0:
                break
            step = -g / h
            self.beta[0] += step
            self.pred += step
            if abs(step) <= 1e-15 * (1.0 + abs(self.beta[0])) or abs(g) <= 1e-15 * len(self.pred):
                break
        return work

    def pin(self, assignment):
        asg = self.problem.split(assignment)[0]
        fixed = np.flatnonzero((asg != FULL) & (self.w != 0))
        A = self.A
        for i in fixed:
            K.col_axpy(A.indptr, A.indices, A.data, i, -self.w[i], self.pred)
            self.w[i] = 0.0
        if len(fixed) and self.eq is not None:
            self.work += self.fit_bias()

    def run_pass(self, ws) -> int:
        A = self.A
        cols = ws[0]
        g = self.loss.deriv(self.pred, self.labels)
        h = np.maximum(self.loss.hess(self.pred, self.labels), 1e-12)
        d = np.zeros_like(self.w)
        q = np.zeros(A.n_rows)
        db = np.zeros(1)
        work = 0
        total = 0.0
        tol = max(self.eps_hint, 1e-6) / 10.0
        for _ in range(self.inner_passes):
            wk, dec = K.weighted_cd_pass(A.indptr, A.indices, A.data, self.lam, cols, h, g, self.w, d, q,
                                         self.eq is not None, db)
            work += wk
            total += dec
            if dec <= tol * total:
                break
        if not np.any(d[cols]) and db[0] == 0.0:
            return work
        # backtracking on the composite objective
        f0 = self.primal_value()
        wc, dc = self.w[cols], d[cols]
        pen0 = self.lam * float(np.abs(wc).sum())
        model = float(g @ q) + self.lam * float(np.abs(wc + dc).sum()) - pen0
        t = 1.0
        for _ in range(60):
            pred = self.pred + t * q
            f = float(np.sum(self.loss.value(pred, self.labels))) + (
                self.primal_value_offset(cols) + self.lam * float(np.abs(wc + t * dc).sum()))
            work += A.n_rows
            if f <= f0 + self.armijo * t * model:
                break
            # value differences vanish in rounding near the optimum; a
            # nonpositive right slope at t still proves descent by convexity
            if self._right_slope(pred, q, wc + t * dc, dc) <= 0:
                break
            t *= 0.5
        else:
            return work
        self.w[cols] = wc + t * dc
        self.beta[0] += t * db[0]
        self.pred = pred
        if self.eq is not None:
            work += self.fit_bias()
        return work

    def _right_slope(self, pred, q, wt, dc) -> float:
        smooth = float(self.loss.deriv(pred, self.labels) @ q)
        pen = np.where(wt != 0, np.sign(wt) * dc, np.abs(dc))
        return smooth + self.lam * float(pen.sum())

    def primal_value_offset(self, cols) -> float:
        """l1 mass of weights outside ``cols`` (zero once pinned)."""
        rest = np.abs(self.w).sum() - np.abs(self.w[cols]).sum()
        return self.lam * float(rest)


class GroupBCDSolver(_RegressionDualSolver):
    """Block coordinate descent for the squared-loss group lasso.

    Each block update solves min 0.5 w'Hw - c'w + lam ||w|| exactly: zero
    when ||c|| <= lam, otherwise w = (H + mu I)^{-1} c with ``mu`` found by
    bisection on mu ||(H + mu I)^{-1} c|| = lam.
    """

    name = "group_bcd"

    def __init__(self, problem, loss, labels):
        blk = problem.blocks[0]
        if not isinstance(blk, GroupNormConstraints):
            raise TypeError("GroupBCDSolver needs a group-norm block")
        self.gptr = blk.group_ptr
        dense = blk.A.to_scipy()
        self._groups = []
        for g in range(blk.size):
            sub = dense[:, self.gptr[g]:self.gptr[g + 1]].tocsc()
            rows = np.unique(sub.indices)
            Ag = sub[rows, :].toarray()
            evals, evecs = np.linalg.eigh(Ag.T @ Ag)
            self._groups.append((rows, Ag, np.maximum(evals, 0.0), evecs, int(sub.nnz)))
        super().__init__(problem, loss, labels)

    def penalty(self) -> float:
        gn = np.sqrt(np.add.reduceat(self.w * self.w, self.gptr[:-1]))
        return self.lam * float(gn.sum())

    def fit_bias(self) -> int:
        shift = float(np.mean(self.pred - self.labels))
        self.beta[0] -= shift
        self.pred -= shift
        return self.A.n_rows

    def pin(self, assignment):
        asg = self.problem.split(assignment)[0]
        for g in np.flatnonzero(asg != FULL):
            lo, hi = self.gptr[g], self.gptr[g + 1]
            if np.any(self.w[lo:hi]):
                rows, Ag, *_ = self._groups[g]
                self.pred[rows] -= Ag @ self.w[lo:hi]
                self.w[lo:hi] = 0.0

    def run_pass(self, ws) -> int:
        work = 0
        resid = self.pred - self.labels
        for g in ws[0]:
            lo, hi = self.gptr[g], self.gptr[g + 1]
            rows, Ag, evals, evecs, nnz = self._groups[g]
            work += nnz
            old = self.w[lo:hi]
            c = Ag.T @ (Ag @ old - resid[rows])
            new = group_block_update(c, evals, evecs, self.lam)
            step = new - old
            if np.any(step):
                resid[rows] += Ag @ step
                self.w[lo:hi] = new
        self.pred = resid + self.labels
        if self.eq is not None:
            work += self.fit_bias()
        return work

    def _alpha(self, p, q) -> float:
        # p, q are per-column profiles of the working-set groups
        starts = self._ws_starts
        pp = np.add.reduceat(p * p, starts)
        pq = np.add.reduceat(p * q, starts)
        qq = np.add.reduceat(q * q, starts)
        return min(1.0, step_to_ball(pp, pq, qq, self.lam))

    def begin(self, assignment, anchors):
        SubSolver.begin(self, assignment, anchors)
        groups = self.ws_indices(assignment)[0]
        if len(groups):
            cols = np.concatenate([np.arange(self.gptr[g], self.gptr[g + 1]) for g in groups])
            sizes = self.gptr[groups + 1] - self.gptr[groups]
            self._ws_starts = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
        else:
            cols = np.zeros(0, dtype=np.int64)
            self._ws_starts = np.zeros(0, dtype=np.int64)
        self._ws_cols = cols.astype(np.int64)
        self._p_anchor = [self._ws_profile(a) for a in anchors]
        self._q_for = None


def group_block_update(c, evals, evecs, lam, tol=1e-15, max_iter=200):
    """argmin_w 0.5 w'Hw - c'w + lam ||w|| for H = V diag(evals) V'."""
    cn = float(np.linalg.norm(c))
    if cn <= lam:
        return np.zeros_like(c)
    ct = evecs.T @ c
    emin, emax = float(evals.min()), float(evals.max())
    if emax - emin <= 1e-14 * max(emax, 1.0):
        # H = e I: closed-form shrink
        return (1.0 - lam / cn) * c / emax if emax > 0 else np.zeros_like(c)
    lo = lam * emin / (cn - lam)
    hi = lam * emax / (cn - lam)

    def excess(mu):
        return mu * np.sqrt(np.sum((ct / (evals + mu)) ** 2)) - lam

    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if excess(mid) > 0:
            hi = mid
        else:
            lo = mid
        if hi - lo <= tol * hi:
            break
    mu = 0.5 * (lo + hi)
    return evecs @ (ct / (evals + mu))


# ---------------------------------------------------------------------------
# hinge-loss SVM


class DCASolver(SubSolver):
    """Dual coordinate ascent for 0.5||w||^2 + C sum hinge."""

    name = "dca"

    def __init__(self, problem: PiecewiseProblem):
        super().__init__(problem)
        (blk,) = problem.blocks
        if not isinstance(blk, HingeLosses):
            raise TypeError("DCASolver needs a single hinge block")
        self.blk = blk
        self.alpha = np.zeros(blk.size)
        self.w = np.zeros(blk.A.n_rows)

    def pin(self, assignment):
        blk = self.blk
        fixed = np.flatnonzero(assignment != FULL)
        target = np.where(assignment[fixed] == 0, blk.C, 0.0)
        change = fixed[self.alpha[fixed] != target]
        if len(change):
            delta = np.zeros(blk.size)
            delta[change] = np.where(assignment[change] == 0, blk.C, 0.0) - self.alpha[change]
            self.w += blk.A.matvec(delta * blk.labels)
            self.alpha[change] += delta[change]

    def run_pass(self, ws) -> int:
        blk = self.blk
        A = blk.A
        return K.dca_pass(A.indptr, A.indices, A.data, A.sq_norms, blk.labels, blk.C, ws[0], self.alpha, self.w)

    def dual_value(self) -> float:
        return float(self.alpha.sum()) - 0.5 * float(self.w @ self.w)

    def certificate(self) -> LowerBoundModel:
        w = self.w.copy()
        psi = self.problem.psi
        return LowerBoundModel(self.problem, w, psi.value(w), psi.grad(w), [self.alpha.copy()], w,
                               self.dual_value())

    def feasible_point(self, x, k):
        return x.copy(), self._rel.value(x)
