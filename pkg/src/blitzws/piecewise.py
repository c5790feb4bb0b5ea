"""Problem data model: a 1-strongly convex term plus piecewise terms.

An objective has the form ``f(x) = psi(x) + sum_i phi_i(x)``.  Each
``phi_i`` is convex and piecewise: on subdomain ``X_i^(k)`` it agrees
with subfunction ``phi_i^(k)``.

Two views of the same terms live here.  The object view
(``Subdomain``, ``Subfunction``, ``PiecewiseTerm``) is literal and used
for reasoning and tests.  The block view (``TermBlock`` subclasses)
stores many terms of one kind in a sparse matrix and evaluates them with
vectorized numpy, which is what the engine and solvers run on.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from . import _kernels as K

FULL = -1  # assignment code: keep the term unrelaxed (in the working set)

# Indicator feasibility is checked with a relative slack so that points
# placed exactly on a boundary by the line search are not rejected.
FEAS_RTOL = 1e-10
ACTIVE_RTOL = 1e-9


# ---------------------------------------------------------------------------
# sparse storage


class SparseColumnMatrix:
    """Column-major sparse matrix with cached column norms and NNZ counts.

    Column ``i`` holds the vector attached to term ``i`` (a constraint
    normal, a feature column, or a training example).
    """

    def __init__(self, n_rows: int, indptr, indices, data):
        indptr = np.ascontiguousarray(indptr, dtype=np.int64)
        indices = np.ascontiguousarray(indices, dtype=np.int64)
        data = np.ascontiguousarray(data, dtype=np.float64)
        if indptr.ndim != 1 or indptr[0] != 0 or np.any(np.diff(indptr) < 0):
            raise ValueError("indptr must start at 0 and be nondecreasing")
        if indptr[-1] != len(indices) or len(indices) != len(data):
            raise ValueError("indptr, indices and data lengths disagree")
        if len(indices) and (indices.min() < 0 or indices.max() >= n_rows):
            raise ValueError("row index out of range")
        # strictly increasing rows within each column
        if len(indices) > 1:
            step = np.diff(indices)
            col_start = np.zeros(len(indices), dtype=bool)
            col_start[indptr[:-1][np.diff(indptr) > 0]] = True
            if np.any((step <= 0) & ~col_start[1:]):
                raise ValueError("row indices must be strictly increasing within a column")
        if not np.all(np.isfinite(data)):
            raise ValueError("matrix entries must be finite")
        self.n_rows = int(n_rows)
        self.indptr = indptr
        self.indices = indices
        self.data = data
        self.nnz = np.diff(indptr)
        sq = np.zeros(self.n_cols)
        np.add.at(sq, np.repeat(np.arange(self.n_cols), self.nnz), data * data)
        self.sq_norms = sq
        self.norms = np.sqrt(sq)
        self._csc = None

    @property
    def n_cols(self) -> int:
        return len(self.indptr) - 1

    @property
    def shape(self):
        return (self.n_rows, self.n_cols)

    @classmethod
    def from_columns(cls, n_rows: int, columns: Sequence[Sequence[tuple[int, float]]]):
        indptr = [0]
        indices: list[int] = []
        data: list[float] = []
        for col in columns:
            for r, v in col:
                indices.append(int(r))
                data.append(float(v))
            indptr.append(len(indices))
        return cls(n_rows, indptr, indices, data)

    @classmethod
    def from_scipy(cls, mat):
        csc = sp.csc_matrix(mat, dtype=np.float64)
        csc.sum_duplicates()
        csc.sort_indices()
        csc.eliminate_zeros()
        return cls(csc.shape[0], csc.indptr, csc.indices, csc.data)

    @classmethod
    def from_dense(cls, arr):
        return cls.from_scipy(sp.csc_matrix(np.asarray(arr, dtype=np.float64)))

    def to_scipy(self) -> sp.csc_matrix:
        if self._csc is None:
            self._csc = sp.csc_matrix((self.data, self.indices, self.indptr), shape=self.shape)
        return self._csc

    def to_dense(self) -> np.ndarray:
        return self.to_scipy().toarray()

    def column(self, i: int):
        lo, hi = self.indptr[i], self.indptr[i + 1]
        return self.indices[lo:hi], self.data[lo:hi]

    def dense_column(self, i: int) -> np.ndarray:
        out = np.zeros(self.n_rows)
        rows, vals = self.column(i)
        out[rows] = vals
        return out

    def rmatvec(self, x) -> np.ndarray:
        """A^T x, one inner product per column."""
        return K.csc_rmatvec(self.indptr, self.indices, self.data, np.ascontiguousarray(x, dtype=np.float64))

    def matvec(self, w) -> np.ndarray:
        return K.csc_matvec(self.indptr, self.indices, self.data, self.n_rows,
                            np.ascontiguousarray(w, dtype=np.float64))

    def select(self, cols) -> "SparseColumnMatrix":
        cols = np.asarray(cols, dtype=np.int64)
        sub = self.to_scipy()[:, cols]
        return SparseColumnMatrix(self.n_rows, sub.indptr, sub.indices, sub.data)

    def scale_columns(self, factors) -> "SparseColumnMatrix":
        factors = np.asarray(factors, dtype=np.float64)
        data = self.data * np.repeat(factors, self.nnz)
        return SparseColumnMatrix(self.n_rows, self.indptr, self.indices, data)

    def transpose(self) -> "SparseColumnMatrix":
        return SparseColumnMatrix.from_scipy(self.to_scipy().T.tocsc())


# ---------------------------------------------------------------------------
# object view: subdomains and subfunctions


@dataclass(frozen=True)
class HalfSpace:
    """{x : <a, x> <= b}."""

    a: np.ndarray
    b: float

    def __post_init__(self):
        if not np.any(self.a):
            raise ValueError("half-space normal must be nonzero")

    def contains(self, x) -> bool:
        return float(self.a @ x) <= self.b


@dataclass(frozen=True)
class BallRegion:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        if self.radius < 0:
            raise ValueError("radius must be nonnegative")

    def contains(self, x) -> bool:
        return float(np.linalg.norm(x - self.center)) <= self.radius


def group_spectral_norms(A: SparseColumnMatrix, group_ptr) -> np.ndarray:
    """Largest singular value of each column group.

    This is the Lipschitz constant of x -> ||A_G^T x||.  The largest column
    norm is smaller unless the group's columns are orthogonal.
    """
    out = np.empty(len(group_ptr) - 1)
    for g in range(len(out)):
        block = A.select(np.arange(group_ptr[g], group_ptr[g + 1])).to_dense()
        out[g] = np.linalg.norm(block, 2) if block.shape[1] > 1 else np.linalg.norm(block)
    return out


@dataclass(frozen=True)
class GroupNormCap:
    """{x : ||A_G^T x|| <= lam}; ``lipschitz`` bounds the spectral norm of A_G."""

    columns: np.ndarray  # dense n x |G|
    lam: float
    lipschitz: float

    def contains(self, x) -> bool:
        return float(np.linalg.norm(self.columns.T @ x)) <= self.lam


@dataclass(frozen=True)
class Complement:
    """Open complement of a closed convex subdomain."""

    inner: object

    def contains(self, x) -> bool:
        return not self.inner.contains(x)


@dataclass(frozen=True)
class Everywhere:
    def contains(self, x) -> bool:
        return True


@dataclass(frozen=True)
class LinearPiece:
    g: np.ndarray
    c: float
    is_linear = True

    def __call__(self, x) -> float:
        return float(self.g @ x) + self.c


@dataclass(frozen=True)
class ZeroPiece:
    is_linear = True

    def __call__(self, x) -> float:
        return 0.0


@dataclass(frozen=True)
class IndicatorZeroOnSubdomain:
    domain: object
    is_linear = False

    def __call__(self, x) -> float:
        return 0.0 if self.domain.contains(x) else np.inf


@dataclass(frozen=True)
class SmoothPiece:
    value: Callable
    grad: Callable
    is_linear = False

    def __call__(self, x) -> float:
        return float(self.value(x))


@dataclass(frozen=True)
class PiecewiseTerm:
    """A term given by (subfunction, subdomain) pairs, indexed from 0."""

    pieces: tuple

    def partition(self, x) -> int:
        return partition_index(self, x)

    def __call__(self, x) -> float:
        fn, _ = self.pieces[partition_index(self, x)]
        return fn(x)


def partition_index(term: PiecewiseTerm, x) -> int:
    """Index of the piece whose subdomain holds ``x``; boundary ties go to the lowest index."""
    for k, (_, dom) in enumerate(term.pieces):
        if dom.contains(x):
            return k
    raise ValueError("point lies in no subdomain; pieces do not cover the space")


# ---------------------------------------------------------------------------
# strongly convex part


class QuadraticPsi:
    """psi(x) = 0.5 * ||x - center||^2 + const."""

    gamma = 1.0

    def __init__(self, center, const: float = 0.0):
        self.center = np.asarray(center, dtype=np.float64)
        self.const = float(const)

    @property
    def n(self) -> int:
        return len(self.center)

    def value(self, x) -> float:
        r = x - self.center
        return 0.5 * float(r @ r) + self.const

    def grad(self, x) -> np.ndarray:
        return x - self.center

    def slope(self, x, d) -> float:
        return float((x - self.center) @ d)

    def scaled(self, factor):
        return ScaledPsi(self, factor)


class ScaledPsi:
    """factor * base; used to normalize a gamma-strongly convex psi to gamma = 1."""

    def __init__(self, base, factor: float):
        self.base = base
        self.factor = float(factor)
        self.gamma = base.gamma * self.factor

    @property
    def n(self) -> int:
        return self.base.n

    def value(self, x) -> float:
        return self.factor * self.base.value(x)

    def grad(self, x):
        return self.factor * self.base.grad(x)

    def slope(self, x, d) -> float:
        return self.factor * self.base.slope(x, d)

    def scaled(self, factor):
        return ScaledPsi(self.base, self.factor * factor)


class ScaledQuadraticPsi(QuadraticPsi):
    """(gamma/2) * ||x - center||^2 + const, for tests of the normalization step."""

    def __init__(self, center, gamma: float, const: float = 0.0):
        super().__init__(center, const)
        self.gamma = float(gamma)

    def value(self, x) -> float:
        r = x - self.center
        return 0.5 * self.gamma * float(r @ r) + self.const

    def grad(self, x):
        return self.gamma * (x - self.center)

    def slope(self, x, d) -> float:
        return self.gamma * float((x - self.center) @ d)


# ---------------------------------------------------------------------------
# block view


def _tol(scale) -> np.ndarray:
    return FEAS_RTOL * (1.0 + scale)


_ROUND = 64 * np.finfo(float).eps


def step_to_bound(p, q, upper=None, lower=None) -> float:
    """Largest alpha >= 0 keeping lower <= p + alpha q <= upper elementwise.

    Bounds get a margin at rounding level so that a start point sitting on
    its boundary is not reported as blocked.
    """
    alpha = np.inf
    mag = np.abs(p) + np.abs(q)
    if upper is not None:
        hi = upper + _ROUND * (np.abs(upper) + mag)
        alpha = min(alpha, _first_crossing(hi - p, q, p + q <= hi))
    if lower is not None:
        lo = lower - _ROUND * (np.abs(lower) + mag)
        alpha = min(alpha, _first_crossing(p - lo, -q, p + q >= lo))
    return max(0.0, alpha)


def _first_crossing(room, rate, ok_at_one) -> float:
    # rows still feasible at alpha = 1 cross at >= 1; flooring keeps rounding from saying otherwise
    moving = rate > 0
    if not np.any(moving):
        return np.inf
    steps = room[moving] / rate[moving]
    return float(np.where(ok_at_one[moving], np.maximum(steps, 1.0), steps).min())


def step_to_ball(pp, pq, qq, radius) -> float:
    """Largest alpha >= 0 with ||p + alpha q|| <= radius for every group, given group sums of p.p, p.q, q.q."""
    r = radius + _ROUND * (radius + np.sqrt(pp) + np.sqrt(qq))
    r2 = r * r
    moving = qq > 0
    if not np.any(moving):
        return np.inf
    ok_at_one = (pp + 2 * pq + qq <= r2)[moving]
    pp, pq, qq, r2 = pp[moving], pq[moving], qq[moving], r2[moving]
    disc = np.maximum(pq * pq - qq * (pp - r2), 0.0)
    steps = (-pq + np.sqrt(disc)) / qq
    return max(0.0, float(np.where(ok_at_one, np.maximum(steps, 1.0), steps).min()))


class TermBlock:
    """Many terms of the same kind.

    Multipliers parameterize one affine minorant per term (the i-th linear
    part of a lower-bound model).  ``c3_ok`` tells whether piece ``k``
    dominates that minorant everywhere.
    """

    permanent = False
    pieces_linear: tuple = ()

    size: int
    nnz: np.ndarray

    # evaluation --------------------------------------------------------
    def values(self, x) -> np.ndarray:
        raise NotImplementedError

    def partition(self, x) -> np.ndarray:
        raise NotImplementedError

    def terms(self) -> list[PiecewiseTerm]:
        raise NotImplementedError

    # geometry ----------------------------------------------------------
    def profile(self, y, u):
        """Precompute what the capsule tests need along the line y + s*u."""
        raise NotImplementedError

    def capsule_check(self, prof, s1, s2, r, idx=None):
        """Piece index at c1 and whether the capsule is strictly inside that piece's subdomain."""
        raise NotImplementedError

    def active(self, x) -> np.ndarray:
        return np.zeros(self.size, dtype=bool)

    @staticmethod
    def _pick(arrs, idx):
        if idx is None:
            return arrs
        return tuple(a[idx] for a in arrs)

    def max_step(self, y, d) -> float:
        """Largest alpha in [0, inf] with y + alpha*d feasible for every indicator in the block."""
        return np.inf

    def slope(self, x, d) -> float:
        """Right directional derivative of the finite-valued part."""
        return 0.0

    def line_slope(self, y, d):
        """Callable alpha -> right slope along y + alpha d, or None when it is identically zero."""
        return None

    def subgradient(self, x) -> np.ndarray:
        return np.zeros(len(x))

    # minorants ---------------------------------------------------------
    def zero_multipliers(self) -> np.ndarray:
        raise NotImplementedError

    def minorant_value(self, mult, x) -> float:
        raise NotImplementedError

    def minorant_grad(self, mult) -> np.ndarray:
        raise NotImplementedError

    def term_minorant(self, mult, i):
        """(g_i dense, c_i) with the i-th affine minorant equal to <g_i, x> + c_i."""
        raise NotImplementedError

    def c3_ok(self, mult, k, idx=None) -> np.ndarray:
        raise NotImplementedError

    def piece_multipliers(self, mult, idx, k):
        """Return a copy of ``mult`` with terms ``idx`` set to the minorant equal to piece ``k``."""
        raise NotImplementedError

    # restriction -------------------------------------------------------
    def subset(self, idx) -> "TermBlock":
        raise NotImplementedError

    def collapse(self, idx, k, n):
        """Sum of the linear pieces k[j] of terms idx[j] as (gradient, offset)."""
        raise NotImplementedError

    def scaled(self, factor) -> "TermBlock":
        return self


class HalfSpaceConstraints(TermBlock):
    """phi_i = indicator of <a_i, x> <= b_i.  Piece 0: zero on the half-space."""

    pieces_linear = (True, False)

    def __init__(self, A: SparseColumnMatrix, b):
        self.A = A
        self.b = np.asarray(b, dtype=np.float64)
        if np.any(A.norms == 0):
            raise ValueError("constraint normals must be nonzero")
        self.size = A.n_cols
        self.nnz = A.nnz

    def values(self, x):
        v = self.A.rmatvec(x)
        tol = _tol(np.abs(self.b) + self.A.norms * np.linalg.norm(x))
        return np.where(v - self.b <= tol, 0.0, np.inf)

    def partition(self, x):
        return np.where(self.A.rmatvec(x) <= self.b, 0, 1)

    def terms(self):
        out = []
        for i in range(self.size):
            hs = HalfSpace(self.A.dense_column(i), float(self.b[i]))
            out.append(PiecewiseTerm(((ZeroPiece(), hs), (IndicatorZeroOnSubdomain(hs), Complement(hs)))))
        return out

    def profile(self, y, u):
        return self.A.rmatvec(y), self.A.rmatvec(u)

    def capsule_check(self, prof, s1, s2, r, idx=None):
        p, q, norms, b = self._pick((*prof, self.A.norms, self.b), idx)
        v1, v2 = p + s1 * q, p + s2 * q
        k = np.where(v1 <= b, 0, 1)
        nr = norms * r
        inside0 = (v1 - b < -nr) & (v2 - b < -nr)
        inside1 = (v1 - b > nr) & (v2 - b > nr)
        return k, np.where(k == 0, inside0, inside1)

    def active(self, x):
        v = self.A.rmatvec(x)
        return np.abs(v - self.b) / (1.0 + np.abs(self.b)) <= ACTIVE_RTOL

    def max_step(self, y, d):
        return step_to_bound(self.A.rmatvec(y), self.A.rmatvec(d), upper=self.b)

    def zero_multipliers(self):
        return np.zeros(self.size)

    def minorant_value(self, mult, x):
        return float(mult @ (self.A.rmatvec(x) - self.b))

    def minorant_grad(self, mult):
        return self.A.matvec(mult)

    def term_minorant(self, mult, i):
        return mult[i] * self.A.dense_column(i), -mult[i] * self.b[i]

    def c3_ok(self, mult, k, idx=None):
        m = mult if idx is None else mult[idx]
        return (k == 0) & (m == 0)

    def piece_multipliers(self, mult, idx, k):
        out = mult.copy()
        out[idx] = 0.0
        return out

    def subset(self, idx):
        return HalfSpaceConstraints(self.A.select(idx), self.b[idx])

    def collapse(self, idx, k, n):
        return np.zeros(n), 0.0


class BandConstraints(TermBlock):
    """phi_i = indicator of |<A_i, x>| <= lam.

    Pieces: 0 the band (zero), 1 the upper violation, 2 the lower violation.
    Multiplier omega_i gives the minorant -omega_i <A_i, x> - lam |omega_i|.
    """

    pieces_linear = (True, False, False)

    def __init__(self, A: SparseColumnMatrix, lam: float):
        if lam <= 0:
            raise ValueError("lambda must be positive")
        self.A = A
        self.lam = float(lam)
        self.size = A.n_cols
        self.nnz = A.nnz

    def values(self, x):
        v = self.A.rmatvec(x)
        tol = _tol(self.lam + self.A.norms * np.linalg.norm(x))
        return np.where(np.abs(v) - self.lam <= tol, 0.0, np.inf)

    def partition(self, x):
        v = self.A.rmatvec(x)
        return np.where(np.abs(v) <= self.lam, 0, np.where(v > 0, 1, 2))

    def terms(self):
        out = []
        for i in range(self.size):
            a = self.A.dense_column(i)
            norm = float(self.A.norms[i])
            band = GroupNormCap(a[:, None], self.lam, norm)
            upper = HalfSpace(-a, -self.lam) if norm > 0 else Complement(Everywhere())
            lower = HalfSpace(a, -self.lam) if norm > 0 else Complement(Everywhere())
            ind = IndicatorZeroOnSubdomain(band)
            out.append(PiecewiseTerm(((ZeroPiece(), band), (ind, upper), (ind, lower))))
        return out

    def profile(self, y, u):
        return self.A.rmatvec(y), self.A.rmatvec(u)

    def capsule_check(self, prof, s1, s2, r, idx=None):
        p, q, norms = self._pick((*prof, self.A.norms), idx)
        v1, v2 = p + s1 * q, p + s2 * q
        k = np.where(np.abs(v1) <= self.lam, 0, np.where(v1 > 0, 1, 2))
        nr = norms * r
        inside0 = (np.abs(v1) + nr < self.lam) & (np.abs(v2) + nr < self.lam)
        inside1 = (v1 - nr > self.lam) & (v2 - nr > self.lam)
        inside2 = (v1 + nr < -self.lam) & (v2 + nr < -self.lam)
        return k, np.choose(k, [inside0, inside1, inside2])

    def active(self, x):
        v = np.abs(self.A.rmatvec(x))
        return np.abs(v - self.lam) / (1.0 + self.lam) <= ACTIVE_RTOL

    def max_step(self, y, d):
        return step_to_bound(self.A.rmatvec(y), self.A.rmatvec(d), upper=self.lam, lower=-self.lam)

    def zero_multipliers(self):
        return np.zeros(self.size)

    def minorant_value(self, mult, x):
        return float(-(mult @ self.A.rmatvec(x)) - self.lam * np.abs(mult).sum())

    def minorant_grad(self, mult):
        return -self.A.matvec(mult)

    def term_minorant(self, mult, i):
        return -mult[i] * self.A.dense_column(i), -self.lam * abs(mult[i])

    def c3_ok(self, mult, k, idx=None):
        m = mult if idx is None else mult[idx]
        return (k == 0) & (m == 0)

    def piece_multipliers(self, mult, idx, k):
        out = mult.copy()
        out[idx] = 0.0
        return out

    def subset(self, idx):
        return BandConstraints(self.A.select(idx), self.lam)

    def collapse(self, idx, k, n):
        return np.zeros(n), 0.0


class GroupNormConstraints(TermBlock):
    """phi_G = indicator of ||A_G^T x|| <= lam, one term per group.

    Groups are contiguous column ranges ``group_ptr[g]:group_ptr[g+1]``.
    Containment uses the inner relaxation
    ``||A_G^T c|| + L_G * r < lam`` with ``L_G`` the largest column norm,
    which is exact when A_G has a single column.
    """

    pieces_linear = (True, False)

    def __init__(self, A: SparseColumnMatrix, group_ptr, lam: float):
        if lam <= 0:
            raise ValueError("lambda must be positive")
        group_ptr = np.asarray(group_ptr, dtype=np.int64)
        if group_ptr[0] != 0 or group_ptr[-1] != A.n_cols or np.any(np.diff(group_ptr) <= 0):
            raise ValueError("groups must be nonempty contiguous column ranges covering A")
        self.A = A
        self.group_ptr = group_ptr
        self.lam = float(lam)
        self.size = len(group_ptr) - 1
        self.nnz = np.add.reduceat(A.nnz, group_ptr[:-1])
        self.lipschitz = group_spectral_norms(A, group_ptr)
        self._starts = group_ptr[:-1]

    def _gsum(self, v):
        return np.add.reduceat(v, self._starts)

    def group_norms(self, x):
        v = self.A.rmatvec(x)
        return np.sqrt(self._gsum(v * v))

    def values(self, x):
        g = self.group_norms(x)
        tol = _tol(self.lam + self.lipschitz * np.linalg.norm(x))
        return np.where(g - self.lam <= tol, 0.0, np.inf)

    def partition(self, x):
        return np.where(self.group_norms(x) <= self.lam, 0, 1)

    def terms(self):
        dense = self.A.to_dense()
        out = []
        for g in range(self.size):
            cols = dense[:, self.group_ptr[g]:self.group_ptr[g + 1]]
            cap = GroupNormCap(cols, self.lam, float(self.lipschitz[g]))
            out.append(PiecewiseTerm(((ZeroPiece(), cap), (IndicatorZeroOnSubdomain(cap), Complement(cap)))))
        return out

    def profile(self, y, u):
        p, q = self.A.rmatvec(y), self.A.rmatvec(u)
        return self._gsum(p * p), self._gsum(p * q), self._gsum(q * q)

    def capsule_check(self, prof, s1, s2, r, idx=None):
        pp, pq, qq, lip = self._pick((*prof, self.lipschitz), idx)
        n1 = np.sqrt(np.maximum(pp + 2 * s1 * pq + s1 * s1 * qq, 0.0))
        n2 = np.sqrt(np.maximum(pp + 2 * s2 * pq + s2 * s2 * qq, 0.0))
        k = np.where(n1 <= self.lam, 0, 1)
        lr = lip * r
        inside0 = (n1 + lr < self.lam) & (n2 + lr < self.lam)
        # the complement is not convex; no containment claim is made for it
        return k, np.where(k == 0, inside0, False)

    def active(self, x):
        return np.abs(self.group_norms(x) - self.lam) / (1.0 + self.lam) <= ACTIVE_RTOL

    def max_step(self, y, d):
        p, q = self.A.rmatvec(y), self.A.rmatvec(d)
        return step_to_ball(self._gsum(p * p), self._gsum(p * q), self._gsum(q * q), self.lam)

    def zero_multipliers(self):
        return np.zeros(self.A.n_cols)

    def _mult_norms(self, mult):
        return np.sqrt(self._gsum(mult * mult))

    def minorant_value(self, mult, x):
        return float(-(mult @ self.A.rmatvec(x)) - self.lam * self._mult_norms(mult).sum())

    def minorant_grad(self, mult):
        return -self.A.matvec(mult)

    def term_minorant(self, mult, i):
        lo, hi = self.group_ptr[i], self.group_ptr[i + 1]
        w = np.zeros_like(mult)
        w[lo:hi] = mult[lo:hi]
        return -self.A.matvec(w), -self.lam * float(np.linalg.norm(mult[lo:hi]))

    def c3_ok(self, mult, k, idx=None):
        nrm = self._mult_norms(mult)
        return (k == 0) & ((nrm if idx is None else nrm[idx]) == 0)

    def piece_multipliers(self, mult, idx, k):
        out = mult.copy()
        for g in np.atleast_1d(idx):
            out[self.group_ptr[g]:self.group_ptr[g + 1]] = 0.0
        return out

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        cols = np.concatenate([np.arange(self.group_ptr[g], self.group_ptr[g + 1]) for g in idx])
        sizes = self.group_ptr[idx + 1] - self.group_ptr[idx]
        return GroupNormConstraints(self.A.select(cols), np.concatenate([[0], np.cumsum(sizes)]), self.lam)

    def collapse(self, idx, k, n):
        return np.zeros(n), 0.0


class HingeLosses(TermBlock):
    """phi_i(x) = C * max(0, 1 - b_i <a_i, x>).

    Piece 0 (loss) ``C (1 - b_i <a_i, x>)`` on ``b_i <a_i, x> <= 1`` and
    piece 1 (zero) elsewhere.  Multiplier alpha_i in [0, C] gives the
    minorant ``alpha_i (1 - b_i <a_i, x>)``.
    """

    pieces_linear = (True, True)

    def __init__(self, A: SparseColumnMatrix, labels, C: float):
        if C <= 0:
            raise ValueError("C must be positive")
        self.A = A
        self.labels = np.asarray(labels, dtype=np.float64)
        self.C = float(C)
        self.size = A.n_cols
        self.nnz = A.nnz

    def margins(self, x):
        return self.labels * self.A.rmatvec(x)

    def values(self, x):
        return self.C * np.maximum(0.0, 1.0 - self.margins(x))

    def partition(self, x):
        return np.where(self.margins(x) <= 1.0, 0, 1)

    def terms(self):
        out = []
        for i in range(self.size):
            ba = self.labels[i] * self.A.dense_column(i)
            loss = LinearPiece(-self.C * ba, self.C)
            out.append(PiecewiseTerm(((loss, HalfSpace(ba, 1.0)), (ZeroPiece(), HalfSpace(-ba, -1.0)))))
        return out

    def profile(self, y, u):
        return self.labels * self.A.rmatvec(y), self.labels * self.A.rmatvec(u)

    def capsule_check(self, prof, s1, s2, r, idx=None):
        p, q, norms = self._pick((*prof, self.A.norms), idx)
        m1, m2 = p + s1 * q, p + s2 * q
        k = np.where(m1 <= 1.0, 0, 1)
        nr = norms * r
        inside0 = (m1 + nr < 1.0) & (m2 + nr < 1.0)
        inside1 = (m1 - nr > 1.0) & (m2 - nr > 1.0)
        return k, np.where(k == 0, inside0, inside1)

    def slope(self, x, d):
        s = 1.0 - self.margins(x)
        ds = -self.labels * self.A.rmatvec(d)
        return self.C * float(np.where(s > 0, ds, np.where(s == 0, np.maximum(ds, 0.0), 0.0)).sum())

    def line_slope(self, y, d):
        p = self.margins(y)
        q = self.labels * self.A.rmatvec(d)
        C = self.C

        def slope(alpha):
            s = 1.0 - (p + alpha * q)
            return -C * float(np.where(s > 0, q, np.where(s == 0, np.minimum(q, 0.0), 0.0)).sum())

        return slope

    def subgradient(self, x):
        on = self.margins(x) <= 1.0
        return -self.C * self.A.matvec(np.where(on, self.labels, 0.0))

    def zero_multipliers(self):
        return np.zeros(self.size)

    def minorant_value(self, mult, x):
        return float(mult @ (1.0 - self.margins(x)))

    def minorant_grad(self, mult):
        return -self.A.matvec(mult * self.labels)

    def term_minorant(self, mult, i):
        return -mult[i] * self.labels[i] * self.A.dense_column(i), float(mult[i])

    def c3_ok(self, mult, k, idx=None):
        m = mult if idx is None else mult[idx]
        return np.where(k == 0, m == self.C, m == 0.0)

    def piece_multipliers(self, mult, idx, k):
        out = mult.copy()
        out[idx] = np.where(np.asarray(k) == 0, self.C, 0.0)
        return out

    def subset(self, idx):
        return HingeLosses(self.A.select(idx), self.labels[idx], self.C)

    def collapse(self, idx, k, n):
        idx = np.asarray(idx, dtype=np.int64)
        on = idx[np.asarray(k) == 0]
        if len(on) == 0:
            return np.zeros(n), 0.0
        w = np.zeros(self.size)
        w[on] = self.labels[on]
        return -self.C * self.A.matvec(w), self.C * len(on)

    def scaled(self, factor):
        return HingeLosses(self.A, self.labels, self.C * factor)


class EqualityConstraint(TermBlock):
    """Single permanent term: indicator of <a, x> = 0 (the unpenalized bias).

    Multiplier beta gives the minorant -beta <a, x>, which is exact on the
    hyperplane for every beta.
    """

    permanent = True
    pieces_linear = (False,)

    def __init__(self, a):
        self.a = np.asarray(a, dtype=np.float64)
        self.size = 1
        self.nnz = np.array([np.count_nonzero(self.a)])
        self._norm = float(np.linalg.norm(self.a))

    def _feasible(self, x):
        return abs(float(self.a @ x)) <= _tol(self._norm * np.linalg.norm(x))

    def values(self, x):
        return np.array([0.0 if self._feasible(x) else np.inf])

    def partition(self, x):
        return np.zeros(1, dtype=np.int64)

    def terms(self):
        dom = _Hyperplane(self.a)
        return [PiecewiseTerm(((IndicatorZeroOnSubdomain(dom), Everywhere()),))]

    def profile(self, y, u):
        return None

    def capsule_check(self, prof, s1, s2, r, idx=None):
        n = 1 if idx is None else len(idx)
        return np.zeros(n, dtype=np.int64), np.zeros(n, dtype=bool)

    def active(self, x):
        return np.ones(1, dtype=bool)

    def max_step(self, y, d):
        return np.inf if self._feasible(y + d) else 0.0

    def zero_multipliers(self):
        return np.zeros(1)

    def minorant_value(self, mult, x):
        return -float(mult[0]) * float(self.a @ x)

    def minorant_grad(self, mult):
        return -float(mult[0]) * self.a

    def term_minorant(self, mult, i):
        return -float(mult[0]) * self.a, 0.0

    def c3_ok(self, mult, k, idx=None):
        return np.zeros(np.shape(k), dtype=bool)

    def piece_multipliers(self, mult, idx, k):
        return mult.copy()

    def subset(self, idx):
        return self

    def collapse(self, idx, k, n):
        return np.zeros(n), 0.0


@dataclass(frozen=True)
class _Hyperplane:
    a: np.ndarray

    def contains(self, x) -> bool:
        return abs(float(self.a @ x)) <= _tol(np.linalg.norm(self.a) * np.linalg.norm(x))


class CollapsedLinear(TermBlock):
    """One term equal to the linear function <g, x> + c everywhere."""

    pieces_linear = (True,)

    def __init__(self, g, c: float):
        self.g = np.asarray(g, dtype=np.float64)
        self.c = float(c)
        self.size = 1
        self.nnz = np.array([np.count_nonzero(self.g)])

    def values(self, x):
        return np.array([float(self.g @ x) + self.c])

    def partition(self, x):
        return np.zeros(1, dtype=np.int64)

    def terms(self):
        return [PiecewiseTerm(((LinearPiece(self.g, self.c), Everywhere()),))]

    def profile(self, y, u):
        return None

    def capsule_check(self, prof, s1, s2, r, idx=None):
        n = 1 if idx is None else len(idx)
        return np.zeros(n, dtype=np.int64), np.ones(n, dtype=bool)

    def slope(self, x, d):
        return float(self.g @ d)

    def line_slope(self, y, d):
        gd = float(self.g @ d)
        return lambda alpha: gd

    def subgradient(self, x):
        return self.g.copy()

    def zero_multipliers(self):
        return np.ones(1)

    def minorant_value(self, mult, x):
        return float(mult[0]) * (float(self.g @ x) + self.c)

    def minorant_grad(self, mult):
        return float(mult[0]) * self.g

    def term_minorant(self, mult, i):
        return float(mult[0]) * self.g, float(mult[0]) * self.c

    def c3_ok(self, mult, k, idx=None):
        return np.full(np.shape(k), mult[0] == 1.0)

    def piece_multipliers(self, mult, idx, k):
        return np.ones(1)

    def subset(self, idx):
        return self

    def collapse(self, idx, k, n):
        if len(idx) == 0:
            return np.zeros(n), 0.0
        return self.g.copy(), self.c

    def scaled(self, factor):
        return CollapsedLinear(self.g * factor, self.c * factor)


# ---------------------------------------------------------------------------
# problem


class PiecewiseProblem:
    """psi plus a list of term blocks; terms are numbered block by block.

    A psi with strong-convexity constant gamma != 1 is normalized on
    construction by scaling the whole objective by 1/gamma.
    """

    def __init__(self, psi, blocks: Sequence[TermBlock]):
        gamma = float(psi.gamma)
        if gamma <= 0:
            raise ValueError("psi must be strongly convex (gamma > 0)")
        self.scale = 1.0
        if gamma != 1.0:
            self.scale = 1.0 / gamma
            psi = psi.scaled(self.scale)
            blocks = [blk.scaled(self.scale) for blk in blocks]
        self.psi = psi
        self.blocks = list(blocks)
        sizes = [blk.size for blk in self.blocks]
        self.offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        self.m = int(self.offsets[-1])
        self.n = psi.n
        self.nnz = np.concatenate([blk.nnz for blk in self.blocks]) if self.blocks else np.zeros(0)
        self.permanent = np.concatenate(
            [np.full(blk.size, blk.permanent) for blk in self.blocks]) if self.blocks else np.zeros(0, bool)
        self._terms = None
        self._relaxed_cache: dict = {}

    # helpers --------------------------------------------------------------
    def split(self, arr):
        return [arr[lo:hi] for lo, hi in zip(self.offsets[:-1], self.offsets[1:])]

    def _check(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.n,):
            raise ValueError(f"expected a vector of length {self.n}, got shape {x.shape}")
        return x

    @property
    def terms(self) -> list[PiecewiseTerm]:
        if self._terms is None:
            self._terms = [t for blk in self.blocks for t in blk.terms()]
        return self._terms

    # evaluation ------------------------------------------------------------
    def term_values(self, x) -> np.ndarray:
        x = self._check(x)
        if not self.blocks:
            return np.zeros(0)
        return np.concatenate([blk.values(x) for blk in self.blocks])

    def value(self, x) -> float:
        x = self._check(x)
        total = self.psi.value(x)
        for blk in self.blocks:
            total += float(blk.values(x).sum())
            if total == np.inf:
                return np.inf
        return total

    def partition(self, x) -> np.ndarray:
        x = self._check(x)
        return np.concatenate([blk.partition(x) for blk in self.blocks]).astype(np.int64)

    def max_step(self, y, d) -> float:
        return min([blk.max_step(y, d) for blk in self.blocks], default=np.inf)

    def slope(self, x, d) -> float:
        return self.psi.slope(x, d) + sum(blk.slope(x, d) for blk in self.blocks)

    def subgradient(self, x) -> np.ndarray:
        g = self.psi.grad(x)
        for blk in self.blocks:
            g = g + blk.subgradient(x)
        return g

    def zero_multipliers(self):
        return [blk.zero_multipliers() for blk in self.blocks]

    # relaxation ------------------------------------------------------------
    def relaxed(self, assignment) -> "RelaxedObjective":
        assignment = np.asarray(assignment, dtype=np.int64)
        if assignment.shape != (self.m,):
            raise ValueError(f"assignment must have length {self.m}")
        key = hash(assignment.tobytes())
        hit = self._relaxed_cache.get(key)
        if hit is not None and np.array_equal(hit.assignment, assignment):
            return hit
        rel = RelaxedObjective(self, assignment)
        if len(self._relaxed_cache) > 8:
            self._relaxed_cache.clear()
        self._relaxed_cache[key] = rel
        return rel


class RelaxedObjective:
    """f_t: working-set terms kept in full, fixed linear pieces collapsed into one linear term."""

    def __init__(self, problem: PiecewiseProblem, assignment):
        self.problem = problem
        self.assignment = np.array(assignment, dtype=np.int64)
        self.psi = problem.psi
        n = problem.n
        g = np.zeros(n)
        c = 0.0
        self.parts: list[TermBlock] = []
        self.ws_index: list[np.ndarray] = []
        for blk, asg in zip(problem.blocks, problem.split(self.assignment)):
            if blk.permanent:
                asg = np.full(blk.size, FULL)
            ws = np.flatnonzero(asg == FULL)
            fixed = np.flatnonzero(asg != FULL)
            if len(fixed):
                ks = asg[fixed]
                lin = np.asarray(blk.pieces_linear)[ks]
                if not np.all(lin):
                    raise ValueError("only linear pieces may be fixed outside the working set")
                dg, dc = blk.collapse(fixed, ks, n)
                g += dg
                c += dc
            self.ws_index.append(ws)
            if len(ws) == blk.size:
                self.parts.append(blk)
            elif len(ws):
                self.parts.append(blk.subset(ws))
        self.g_star = g
        self.c_star = c
        self.ws_size = int(np.sum(self.assignment == FULL))

    def value(self, x) -> float:
        total = self.psi.value(x) + float(self.g_star @ x) + self.c_star
        for part in self.parts:
            total += float(part.values(x).sum())
            if total == np.inf:
                return np.inf
        return total

    def max_step(self, y, d) -> float:
        return min([p.max_step(y, d) for p in self.parts], default=np.inf)

    def slope(self, x, d) -> float:
        return self.psi.slope(x, d) + float(self.g_star @ d) + sum(p.slope(x, d) for p in self.parts)


def evaluate_full(problem: PiecewiseProblem, x) -> float:
    return problem.value(x)


def evaluate_relaxed(problem: PiecewiseProblem, assignment, x) -> float:
    return problem.relaxed(assignment).value(problem._check(x))


def reduce_problem(problem: PiecewiseProblem, assignment) -> PiecewiseProblem:
    """A smaller problem in which every term with ``assignment[i] = k != FULL`` is replaced by its piece k.

    Only linear pieces may be fixed; they are folded into one affine term.
    """
    asg = np.asarray(assignment, dtype=np.int64)
    if asg.shape != (problem.m,):
        raise ValueError("need one assignment entry per term")
    if np.all(asg == FULL):
        return problem
    n = problem.n
    g = np.zeros(n)
    c = 0.0
    blocks: list[TermBlock] = []
    for blk, ks in zip(problem.blocks, problem.split(asg)):
        full = (ks == FULL) | blk.permanent
        keep, drop = np.flatnonzero(full), np.flatnonzero(~full)
        if len(drop):
            if not np.all(np.asarray(blk.pieces_linear)[ks[drop]]):
                raise ValueError("only linear pieces can be fixed")
            dg, dc = blk.collapse(drop, ks[drop], n)
            g += dg
            c += dc
        if len(keep) == blk.size:
            blocks.append(blk)
        elif len(keep):
            blocks.append(blk.subset(keep))
    if np.any(g) or c:
        blocks.append(CollapsedLinear(g, c))
    reduced = PiecewiseProblem.__new__(PiecewiseProblem)
    PiecewiseProblem.__init__(reduced, _Unit(problem.psi), blocks)
    return reduced


def reduce_at_solution(problem: PiecewiseProblem, x_star, boundary_flags) -> PiecewiseProblem:
    """Fix every term off its boundary at x_star to the piece holding x_star."""
    flags = np.asarray(boundary_flags, dtype=bool)
    if flags.shape != (problem.m,):
        raise ValueError("need one boundary flag per term")
    try:
        return reduce_problem(problem, np.where(flags, FULL, problem.partition(x_star)))
    except ValueError:
        raise ValueError("a non-boundary term sits on a nonlinear piece") from None


class _Unit:
    """Wrap an already-normalized psi so it is not normalized twice."""

    def __init__(self, psi):
        self._psi = psi
        self.gamma = 1.0

    def __getattr__(self, name):
        return getattr(self._psi, name)
