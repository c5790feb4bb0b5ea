"""Capsule equivalence regions and ball/capsule containment tests.

Given the previous lower-bound minimizer ``x``, feasible point ``y`` and
gap ``Delta``, the equivalence region for progress coefficient ``xi`` is
a union of balls ``B(beta)`` centred at ``y + beta (x - y)`` with radius
``tau(beta)``.  We enclose it in a capsule (all points within ``radius``
of a segment ``[c1, c2]`` on the line through ``y`` and ``x``).

The three one-dimensional suprema that define the capsule are found by
bisection on the sign of the derivative in ``theta = beta / (1 - beta)``,
where each objective is unimodal.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

BISECT_TOL = 1e-12
BISECT_MAX_ITER = 200
BETA_CAP = 0.5 - 1e-12
THETA_CAP = BETA_CAP / (1.0 - BETA_CAP)


class Converged(Exception):
    """Raised when the gap is zero (or negligible) and no region is needed."""


@dataclass(frozen=True)
class IterSnapshot:
    x_prev: np.ndarray
    y_prev: np.ndarray
    gap_prev: float
    dist: float = field(default=np.nan)

    def __post_init__(self):
        if np.isnan(self.dist):
            object.__setattr__(self, "dist", float(np.linalg.norm(self.x_prev - self.y_prev)))

    @classmethod
    def build(cls, x_prev, y_prev, gap_prev, initial_gap=None):
        """Validated constructor; raises ``Converged`` for a vanishing gap."""
        gap_prev = float(gap_prev)
        if gap_prev <= 0 or (initial_gap is not None and gap_prev < 1e-15 * initial_gap):
            raise Converged(gap_prev)
        snap = cls(np.asarray(x_prev, float), np.asarray(y_prev, float), gap_prev)
        if snap.dist**2 > 2 * gap_prev * (1 + 1e-9):
            raise ValueError(
                f"inconsistent snapshot: squared distance {snap.dist**2:.6g} exceeds 2*gap {2 * gap_prev:.6g}")
        return snap

    @property
    def kappa(self) -> float:
        """1 - d^2 / (2 Delta), clipped at 0 against rounding."""
        return max(0.0, 1.0 - self.dist**2 / (2.0 * self.gap_prev))

    @property
    def direction(self) -> np.ndarray:
        if self.dist == 0:
            return np.zeros_like(self.x_prev)
        return (self.x_prev - self.y_prev) / self.dist


@dataclass(frozen=True)
class CapsuleParams:
    c1: np.ndarray
    c2: np.ndarray
    radius: float
    d_min: float
    d_max: float
    # line coordinates: c1 = y + s1*u, c2 = y + s2*u
    u: np.ndarray | None = None
    s1: float = 0.0
    s2: float = 0.0


# ---------------------------------------------------------------------------
# the radius function


def _bracket(theta, xi, kappa):
    return 1.0 + kappa * theta - (1.0 - xi) * (1.0 + theta) / (1.0 - theta)


def tau_xi(beta: float, xi: float, snap: IterSnapshot) -> float:
    """Radius of the ball at parameter ``beta`` of the region for ``xi``."""
    if not 0.0 < beta < 0.5:
        raise ValueError("beta must lie strictly inside (0, 1/2)")
    if not 0.0 < xi <= 1.0:
        raise ValueError("xi must lie in (0, 1]")
    delta = snap.gap_prev
    br = 1.0 + (beta / (1.0 - beta)) * (1.0 - snap.dist**2 / (2 * delta)) - (1.0 - xi) / (1.0 - 2.0 * beta)
    return beta * np.sqrt(2.0 * delta) * np.sqrt(max(br, 0.0))


def tau_theta(theta, xi, kappa, scale):
    """Vectorized tau in theta coordinates; ``scale`` is sqrt(2 Delta)."""
    beta = theta / (1.0 + theta)
    return scale * beta * np.sqrt(np.maximum(_bracket(theta, xi, kappa), 0.0))


def theta_upper(xi, kappa):
    """Largest theta with a nonnegative bracket, capped just below beta = 1/2."""
    xi = np.asarray(xi, dtype=np.float64)
    p = 2.0 - xi - kappa
    root = 2.0 * xi / (p + np.sqrt(p * p + 4.0 * kappa * xi))
    return np.minimum(root, THETA_CAP)


def _q_slope(theta, s, xi, kappa, d, scale):
    beta = theta / (1.0 + theta)
    dbeta = 1.0 / (1.0 + theta) ** 2
    br = np.maximum(_bracket(theta, xi, kappa), 1e-300)
    dbr = kappa - 2.0 * (1.0 - xi) / (1.0 - theta) ** 2
    rb = np.sqrt(br)
    return dbeta * (s * d + scale * rb) + scale * beta * dbr / (2.0 * rb)


def _argmax_q(s, xi, kappa, d, scale):
    """Bisection on the derivative sign of q_s over (0, theta_hi]; vectorized over xi."""
    xi = np.atleast_1d(np.asarray(xi, dtype=np.float64))
    hi = theta_upper(xi, kappa)
    lo = np.zeros_like(hi)
    tol = BISECT_TOL * hi
    for _ in range(BISECT_MAX_ITER):
        if np.all(hi - lo <= tol):
            break
        mid = 0.5 * (lo + hi)
        up = _q_slope(mid, s, xi, kappa, d, scale) > 0
        lo = np.where(up, mid, lo)
        hi = np.where(up, hi, mid)
    return 0.5 * (lo + hi)


def _q_value(theta, s, xi, kappa, d, scale):
    return s * d * theta / (1.0 + theta) + tau_theta(theta, xi, kappa, scale)


def capsule_extents(snap: IterSnapshot, xis):
    """(d_min, d_max, radius) for every ``xi`` in ``xis`` (vectorized)."""
    xis = np.atleast_1d(np.asarray(xis, dtype=np.float64))
    if np.any(xis <= 0) or np.any(xis > 1):
        raise ValueError("xi must lie in (0, 1]")
    if snap.gap_prev <= 0:
        raise Converged(snap.gap_prev)
    kappa, d = snap.kappa, snap.dist
    scale = np.sqrt(2.0 * snap.gap_prev)
    out = []
    for s in (-1.0, 0.0, 1.0):
        th = _argmax_q(s, xis, kappa, d, scale)
        # the limit theta -> 0 gives q = 0, which bounds the supremum from below
        out.append(np.maximum(_q_value(th, s, xis, kappa, d, scale), 0.0))
    lower, radius, upper = out
    return -lower, upper, radius


def compute_capsule(snap: IterSnapshot, xi: float) -> CapsuleParams:
    d_min, d_max, radius = (float(v[0]) for v in capsule_extents(snap, xi))
    return capsule_from_extents(snap, d_min, d_max, radius)


def capsule_from_extents(snap: IterSnapshot, d_min, d_max, radius) -> CapsuleParams:
    u = snap.direction
    s1, s2 = d_min + radius, d_max - radius
    if s1 > s2:
        # only rounding can cause this; the end balls then coincide
        s1 = s2 = 0.5 * (s1 + s2)
    return CapsuleParams(snap.y_prev + s1 * u, snap.y_prev + s2 * u, radius, d_min, d_max, u, s1, s2)


def teardrop_ball(snap: IterSnapshot, xi: float, beta: float):
    """Centre and radius of the ball B(beta) in the region for ``xi``."""
    return snap.y_prev + beta * (snap.x_prev - snap.y_prev), tau_xi(beta, xi, snap)


def distance_to_capsule_axis(cap: CapsuleParams, points) -> np.ndarray:
    """Distance from each row of ``points`` to the segment [c1, c2]."""
    points = np.atleast_2d(points)
    seg = cap.c2 - cap.c1
    L2 = float(seg @ seg)
    if L2 == 0:
        return np.linalg.norm(points - cap.c1, axis=1)
    t = np.clip((points - cap.c1) @ seg / L2, 0.0, 1.0)
    return np.linalg.norm(points - (cap.c1 + t[:, None] * seg), axis=1)


# ---------------------------------------------------------------------------
# containment primitives (all strict)


def ball_inside_halfspace(center, radius, a, b) -> bool:
    return float(a @ center) - b < -float(np.linalg.norm(a)) * radius


def ball_inside_ball(center, radius, a_center, b_radius) -> bool:
    return float(np.linalg.norm(a_center - center)) + radius < b_radius


def ball_inside_group_cap(center, radius, columns, lam, lipschitz) -> bool:
    return float(np.linalg.norm(columns.T @ center)) + lipschitz * radius < lam


def capsule_intersects_halfspace_complement(cap: CapsuleParams, a, b) -> bool:
    """Whether the capsule meets {x : <a, x> >= b}."""
    a = np.asarray(a, dtype=np.float64)
    if not np.any(a):
        raise ValueError("half-space normal must be nonzero")
    reach = max(float(a @ cap.c1), float(a @ cap.c2))
    return b - reach < float(np.linalg.norm(a)) * cap.radius


def ball_inside_subdomain(center, radius, dom) -> bool:
    from .piecewise import BallRegion, Complement, Everywhere, GroupNormCap, HalfSpace

    if isinstance(dom, HalfSpace):
        return ball_inside_halfspace(center, radius, dom.a, dom.b)
    if isinstance(dom, BallRegion):
        return ball_inside_ball(center, radius, dom.center, dom.radius)
    if isinstance(dom, GroupNormCap):
        return ball_inside_group_cap(center, radius, dom.columns, dom.lam, dom.lipschitz)
    if isinstance(dom, Everywhere):
        return True
    if isinstance(dom, Complement) and isinstance(dom.inner, HalfSpace):
        # open side {<a,x> > b}
        return ball_inside_halfspace(center, radius, -dom.inner.a, -dom.inner.b)
    raise TypeError(f"no containment test for subdomain {type(dom).__name__}")


def capsule_inside_subdomain(cap: CapsuleParams, dom) -> bool:
    return ball_inside_subdomain(cap.c1, cap.radius, dom) and ball_inside_subdomain(cap.c2, cap.radius, dom)
