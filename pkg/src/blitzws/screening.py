"""Safe screening: fix pieces of the objective that cannot matter at the optimum.

A safe region is a ball known to contain the minimizer ``x*``.  Two are
offered:

* ``SafeRegion.blitz`` needs a feasible ``y0`` and any 1-strongly convex
  quadratic lower bound with minimizer ``x0``.  With ``Delta = f(y0) - min LB``
  the ball has center ``(x0 + y0)/2`` and radius ``sqrt(Delta - |x0 - y0|^2/4)``.
* ``SafeRegion.gap_safe`` is the classic sphere around ``y0`` with radius
  ``sqrt(2 Delta)``.

The first is never larger than the second divided by sqrt(2) and lies
inside it.  A term is screened when the whole ball sits strictly inside
one of its subdomains whose piece is linear.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .piecewise import FULL, PiecewiseProblem, SparseColumnMatrix
from .problems import _as_loss, _as_matrix, optimal_intercept
from .solvers import LowerBoundModel

# relative error allowed in a computed gap f(y0) - LB; a gap that rounds to
# zero must not shrink the region onto a point that misses x*
GAP_ROUNDING = 1e-12


def padded_gap(f_value: float, lower: float) -> float:
    """``f_value - lower`` widened by the rounding error of both numbers."""
    return max(f_value - lower, 0.0) + GAP_ROUNDING * (abs(f_value) + abs(lower))


@dataclass
class SafeRegion:
    center: np.ndarray
    radius: float
    variant: str  # "blitz" or "gap_safe"

    @classmethod
    def blitz(cls, x0, y0, gap: float) -> "SafeRegion":
        x0, y0 = np.asarray(x0, float), np.asarray(y0, float)
        d2 = float((x0 - y0) @ (x0 - y0))
        # strong convexity gives gap >= d^2/4; clip rounding below zero
        return cls(0.5 * (x0 + y0), float(np.sqrt(max(gap - 0.25 * d2, 0.0))), "blitz")

    @classmethod
    def gap_safe(cls, y0, gap: float) -> "SafeRegion":
        return cls(np.asarray(y0, float).copy(), float(np.sqrt(2.0 * max(gap, 0.0))), "gap_safe")

    @classmethod
    def from_certificate(cls, problem: PiecewiseProblem, lb: LowerBoundModel, y0, variant="blitz"):
        """Region from a solver certificate; the certificate must lower-bound the full objective."""
        lb.complete()
        f0 = problem.value(y0)
        if not np.isfinite(f0):
            raise ValueError("y0 must be feasible")
        gap = padded_gap(f0, lb.min_value)
        if variant == "blitz":
            return cls.blitz(lb.minimizer, y0, gap)
        if variant == "gap_safe":
            return cls.gap_safe(y0, gap)
        raise ValueError(f"unknown region variant {variant!r}")

    def contains(self, x, slack: float = 0.0) -> bool:
        return float(np.linalg.norm(np.asarray(x) - self.center)) <= self.radius + slack


@dataclass
class ScreenOutcome:
    """``assignment[i]`` is FULL (retain) or the piece index term i is fixed to."""

    assignment: np.ndarray
    region: SafeRegion | None = None

    @property
    def screened(self) -> np.ndarray:
        return self.assignment != FULL

    @property
    def n_screened(self) -> int:
        return int(np.sum(self.screened))

    @property
    def n_retained(self) -> int:
        return int(len(self.assignment) - self.n_screened)

    def merge(self, other: "ScreenOutcome") -> "ScreenOutcome":
        """Union of two outcomes; screening is permanent, so an earlier fix is kept."""
        asg = np.where(self.screened, self.assignment, other.assignment)
        return ScreenOutcome(asg, other.region)


def build_lower_bound(problem: PiecewiseProblem, y0, g0=None):
    """The quadratic f(y0) + <g0, x - y0> + |x - y0|^2/2 and its minimizer x0 = y0 - g0.

    Returns ``(model, x0, min_value)`` where ``model`` evaluates the bound.
    ``g0`` defaults to the problem's own subgradient at ``y0``.
    """
    y0 = np.asarray(y0, float)
    f0 = problem.value(y0)
    if not np.isfinite(f0):
        raise ValueError("y0 must have finite objective")
    g0 = problem.subgradient(y0) if g0 is None else np.asarray(g0, float)
    if not np.all(np.isfinite(g0)):
        raise ValueError("f has no finite subgradient at y0")
    x0 = y0 - g0

    def model(x):
        r = np.asarray(x, float) - y0
        return f0 + float(g0 @ r) + 0.5 * float(r @ r)

    return model, x0, f0 - 0.5 * float(g0 @ g0)


def region_from_point(problem: PiecewiseProblem, y0, g0=None, variant="blitz") -> SafeRegion:
    _, x0, low = build_lower_bound(problem, y0, g0)
    gap = padded_gap(problem.value(y0), low)
    return SafeRegion.blitz(x0, y0, gap) if variant == "blitz" else SafeRegion.gap_safe(y0, gap)


def blitz_screen(problem: PiecewiseProblem, region: SafeRegion) -> ScreenOutcome:
    """Fix term i to piece k when the region lies strictly inside that piece's subdomain and k is linear."""
    c = np.asarray(region.center, float)
    zero = np.zeros_like(c)
    parts = []
    for blk in problem.blocks:
        if blk.permanent:
            parts.append(np.full(blk.size, FULL, dtype=np.int64))
            continue
        k, inside = blk.capsule_check(blk.profile(c, zero), 0.0, 0.0, region.radius)
        linear = np.asarray(blk.pieces_linear)[k]
        parts.append(np.where(inside & linear, k, FULL).astype(np.int64))
    asg = np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)
    return ScreenOutcome(asg, region)


def screen_l1(omega0, data, labels, lam: float, loss="squared", fit_intercept: bool = True,
              beta0: float | None = None) -> ScreenOutcome:
    """Screen features of an l1-regularized regression from a primal point.

    Feature i is removed (its weight is zero at every solution) when
    ``lam - |<A_i, c>| >= |A_i| r`` for the blitz region built from
    ``x0 = L'(A omega0 + beta)`` and the scaled feasible point ``y0``.
    The returned assignment fixes feature i to piece 0 (inside the band).
    """
    A: SparseColumnMatrix = _as_matrix(data)
    loss = _as_loss(loss)
    labels = np.asarray(labels, float)
    omega0 = np.asarray(omega0, float)
    if not lam > 0:
        raise ValueError("lambda must be positive")
    offset = A.matvec(omega0)
    if fit_intercept:
        beta = optimal_intercept(loss, labels, offset) if beta0 is None else float(beta0)
    else:
        beta = 0.0
    pred = offset + beta
    x0 = loss.deriv(pred, labels)
    corr = A.rmatvec(x0)
    top = float(np.max(np.abs(corr))) if A.n_cols else 0.0
    if top == 0.0:
        # x0 is dual feasible and optimal for every lam > 0: nothing is active
        return ScreenOutcome(np.zeros(A.n_cols, dtype=np.int64), SafeRegion.blitz(x0, x0, 0.0))
    y0 = min(1.0, lam / top) * x0
    primal = float(np.sum(loss.value(pred, labels))) + lam * float(np.abs(omega0).sum())
    dual = float(np.sum(loss.conjugate(y0, labels)))
    region = SafeRegion.blitz(x0, y0, padded_gap(primal, -dual))
    slack = lam - np.abs(A.rmatvec(region.center))
    keep = slack < A.norms * region.radius
    return ScreenOutcome(np.where(keep, FULL, 0).astype(np.int64), region)
