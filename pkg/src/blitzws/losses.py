"""Smooth per-example losses L(z; b) and their convex conjugates.

Each loss is 1-smooth in ``z``, so each conjugate is 1-strongly convex.
All methods are vectorized over numpy arrays of ``z`` (or ``x``) and
labels ``b``.  Conjugates return ``+inf`` outside their domain.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, xlogy


@dataclass(frozen=True)
class Squared:
    """L(z) = 0.5 (z - b)^2."""

    name = "squared"

    def value(self, z, b):
        return 0.5 * (z - b) ** 2

    def deriv(self, z, b):
        return z - b

    def hess(self, z, b):
        return np.ones_like(np.asarray(z, dtype=float))

    def conjugate(self, x, b):
        return 0.5 * (x + b) ** 2 - 0.5 * b**2

    def conjugate_grad(self, x, b):
        return x + b

    def in_domain(self, x, b):
        return np.isfinite(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class SquaredHinge:
    """L(z) = 0.5 max(0, 1 - b z)^2 with b in {-1, +1}."""

    name = "squared_hinge"

    def value(self, z, b):
        return 0.5 * np.maximum(0.0, 1.0 - b * z) ** 2

    def deriv(self, z, b):
        return -b * np.maximum(0.0, 1.0 - b * z)

    def hess(self, z, b):
        return (b * z < 1.0).astype(float)

    def in_domain(self, x, b):
        return x * b <= 0

    def conjugate(self, x, b):
        v = x * b
        return np.where(v <= 0, 0.5 * (v + 1.0) ** 2 - 0.5, np.inf)

    def conjugate_grad(self, x, b):
        return b * (x * b + 1.0)


@dataclass(frozen=True)
class Huber:
    """Huber loss of the residual z - b with threshold s."""

    s: float = 1.0
    name = "huber"

    def value(self, z, b):
        r = np.abs(z - b)
        return np.where(r <= self.s, 0.5 * r * r, self.s * r - 0.5 * self.s**2)

    def deriv(self, z, b):
        return np.clip(z - b, -self.s, self.s)

    def hess(self, z, b):
        return (np.abs(z - b) < self.s).astype(float)

    def in_domain(self, x, b):
        return np.abs(x) <= self.s

    def conjugate(self, x, b):
        return np.where(np.abs(x) <= self.s, 0.5 * x * x + b * x, np.inf)

    def conjugate_grad(self, x, b):
        return x + b


@dataclass(frozen=True)
class Logistic:
    """L(z) = 4 log(1 + exp(-b z)); the factor 4 makes it 1-smooth."""

    name = "logistic"

    def value(self, z, b):
        return 4.0 * np.logaddexp(0.0, -b * z)

    def deriv(self, z, b):
        return -4.0 * b * expit(-b * z)

    def hess(self, z, b):
        p = expit(b * z)
        return 4.0 * p * (1.0 - p) * b * b

    def in_domain(self, x, b):
        v = x / (4.0 * b)
        return (v >= -1.0) & (v <= 0.0)

    def conjugate(self, x, b):
        # 4 * l*(x / (4b)) with l*(v) = -v log(-v) + (1+v) log(1+v) on [-1, 0]
        v = np.asarray(x / (4.0 * b), dtype=float)
        inside = (v >= -1.0) & (v <= 0.0)
        vc = np.clip(v, -1.0, 0.0)
        val = 4.0 * (xlogy(-vc, -vc) + xlogy(1.0 + vc, 1.0 + vc))
        return np.where(inside, val, np.inf)

    def conjugate_grad(self, x, b):
        v = np.clip(x / (4.0 * b), -1.0, 0.0)
        with np.errstate(divide="ignore"):
            return (np.log1p(v) - np.log(-v)) / b


LOSSES = {"squared": Squared, "squared_hinge": SquaredHinge, "huber": Huber, "logistic": Logistic}


def make_loss(name: str, **kw):
    try:
        return LOSSES[name](**kw)
    except KeyError:
        raise ValueError(f"unknown loss {name!r}; choose from {sorted(LOSSES)}") from None


def brute_force_conjugate(loss, x, b, grid):
    """max_z x z - L(z; b) over a fixed grid; a test oracle."""
    z = np.asarray(grid, dtype=float)
    return np.max(np.multiply.outer(np.atleast_1d(x), z) - loss.value(z, b)[None, :], axis=1)


class ConjugatePsi:
    """psi(x) = sum_j L*_j(x_j): the strongly convex part of a sparse-regression dual."""

    gamma = 1.0

    def __init__(self, loss, labels):
        self.loss = loss
        self.labels = np.asarray(labels, dtype=np.float64)

    @property
    def n(self) -> int:
        return len(self.labels)

    def value(self, x) -> float:
        return float(np.sum(self.loss.conjugate(x, self.labels)))

    def grad(self, x):
        return self.loss.conjugate_grad(x, self.labels)

    def slope(self, x, d) -> float:
        # right derivative; directions leaving the domain get +inf
        g = self.grad(x)
        mask = d != 0
        return float(np.sum(g[mask] * d[mask]))

    def scaled(self, factor):
        from .piecewise import ScaledPsi

        return ScaledPsi(self, factor)

    def in_domain(self, x) -> bool:
        return bool(np.all(self.loss.in_domain(x, self.labels)))
