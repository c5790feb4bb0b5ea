"""Adapters that turn ML data into piecewise problems.

Four families are supported:

* min-norm point under half-space constraints (``build_pmn``);
* dual of l1-regularized regression with a smooth loss (``build_l1_dual``);
* dual of the squared-loss group lasso (``build_group_dual``);
* primal linear SVM with hinge loss (``build_svm_primal``).

For the sparse-regression duals the variable ``x`` lives in example
space; feature ``i`` becomes the term ``|<A_i, x>| <= lam``.  The primal
weights are the multipliers of those terms.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .losses import ConjugatePsi, Squared, make_loss
from .piecewise import (BandConstraints, EqualityConstraint, GroupNormConstraints, HalfSpaceConstraints, HingeLosses,
                        PiecewiseProblem, QuadraticPsi, SparseColumnMatrix)
from .solvers import DCASolver, GroupBCDSolver, HildrethSolver, LassoCDSolver, ProxNewtonSolver

LAMBDA_RATIOS = (0.2, 0.02, 0.002)


def _as_matrix(data) -> SparseColumnMatrix:
    if isinstance(data, SparseColumnMatrix):
        return data
    if isinstance(data, np.ndarray):
        return SparseColumnMatrix.from_dense(data)
    return SparseColumnMatrix.from_scipy(data)


def _as_loss(loss):
    return make_loss(loss) if isinstance(loss, str) else loss


# ---------------------------------------------------------------------------
# min-norm point


@dataclass
class PMNAdapter:
    """min 0.5 ||x - c||^2 subject to <a_i, x> <= b_i."""

    problem: PiecewiseProblem
    y0: np.ndarray
    kind = "pmn"

    def make_solver(self):
        return HildrethSolver(self.problem)

    def objective(self, x) -> float:
        return self.problem.value(x)


def build_pmn(A, b, y0, center=None) -> PMNAdapter:
    A = _as_matrix(A)
    center = np.zeros(A.n_rows) if center is None else np.asarray(center, float)
    problem = PiecewiseProblem(QuadraticPsi(center), [HalfSpaceConstraints(A, b)])
    y0 = np.asarray(y0, float)
    if not np.isfinite(problem.value(y0)):
        raise ValueError("y0 must satisfy every constraint")
    return PMNAdapter(problem, y0)


# ---------------------------------------------------------------------------
# l1-regularized regression


def optimal_intercept(loss, labels, offset=None, max_iter: int = 100) -> float:
    """argmin_beta sum_j L(offset_j + beta; b_j) by Newton's method."""
    labels = np.asarray(labels, float)
    offset = np.zeros(len(labels)) if offset is None else np.asarray(offset, float)
    if isinstance(loss, Squared):
        return float(np.mean(labels - offset))
    beta = 0.0
    for _ in range(max_iter):
        z = offset + beta
        g = float(np.sum(loss.deriv(z, labels)))
        h = float(np.sum(loss.hess(z, labels)))
        if h <= 0:
            break
        step = g / h
        beta -= step
        if abs(step) <= 1e-15 * (1 + abs(beta)):
            break
    return beta


def compute_lambda_max(data, labels, loss="squared", fit_intercept: bool = True) -> float:
    """Smallest lambda whose solution has all weights zero."""
    A = _as_matrix(data)
    loss = _as_loss(loss)
    labels = np.asarray(labels, float)
    beta = optimal_intercept(loss, labels) if fit_intercept else 0.0
    x0 = loss.deriv(np.full(A.n_rows, beta), labels)
    return float(np.max(np.abs(A.rmatvec(x0)))) if A.n_cols else 0.0


@dataclass
class L1DualAdapter:
    """Dual of min_w sum_j L(<a_j, w> + beta; b_j) + lam ||w||_1."""

    problem: PiecewiseProblem
    A: SparseColumnMatrix
    labels: np.ndarray
    loss: object
    lam: float
    fit_intercept: bool
    y0: np.ndarray = field(default=None)
    kind = "l1"

    def __post_init__(self):
        if self.y0 is None:
            self.y0 = np.zeros(self.A.n_rows)

    def make_solver(self):
        if isinstance(self.loss, Squared):
            return LassoCDSolver(self.problem, self.loss, self.labels)
        return ProxNewtonSolver(self.problem, self.loss, self.labels)

    def primal_objective(self, w, beta=0.0) -> float:
        pred = self.A.matvec(w) + beta
        return float(np.sum(self.loss.value(pred, self.labels))) + self.lam * float(np.abs(w).sum())

    def dual_objective(self, x) -> float:
        """The minimized dual; at the optimum it equals minus the primal optimum."""
        return self.problem.value(x)

    def dual_from_primal(self, w, beta=0.0):
        return self.loss.deriv(self.A.matvec(w) + beta, self.labels)

    def primal_from_dual(self, x):
        """Predictions A w + beta implied by a dual point (the gradient of psi)."""
        return self.problem.psi.grad(x)

    def weights(self, solver):
        return solver.w.copy(), float(solver.beta[0])


def build_l1_dual(data, labels, loss="squared", lam: float = 1.0, fit_intercept: bool = True) -> L1DualAdapter:
    if not lam > 0:
        raise ValueError("lambda must be positive")
    A = _as_matrix(data)
    loss = _as_loss(loss)
    labels = np.asarray(labels, float)
    if len(labels) != A.n_rows:
        raise ValueError("one label per row is required")
    if isinstance(loss, Squared):
        psi = QuadraticPsi(-labels, -0.5 * float(labels @ labels))
    else:
        psi = ConjugatePsi(loss, labels)
    blocks = [BandConstraints(A, lam)]
    if fit_intercept:
        blocks.append(EqualityConstraint(np.ones(A.n_rows)))
    return L1DualAdapter(PiecewiseProblem(psi, blocks), A, labels, loss, float(lam), fit_intercept)


# ---------------------------------------------------------------------------
# group lasso


@dataclass
class GroupDualAdapter:
    problem: PiecewiseProblem
    A: SparseColumnMatrix  # permuted and scaled
    labels: np.ndarray
    lam: float
    perm: np.ndarray  # column j of A is original feature perm[j]
    scale: np.ndarray  # A[:, j] = original[:, perm[j]] * scale[j]
    group_ptr: np.ndarray
    fit_intercept: bool
    y0: np.ndarray = field(default=None)
    loss: object = field(default_factory=Squared)
    kind = "group"

    def __post_init__(self):
        if self.y0 is None:
            self.y0 = np.zeros(self.A.n_rows)

    def make_solver(self):
        return GroupBCDSolver(self.problem, self.loss, self.labels)

    def primal_objective(self, w, beta=0.0) -> float:
        pred = self.A.matvec(w) + beta
        gn = np.sqrt(np.add.reduceat(w * w, self.group_ptr[:-1]))
        return 0.5 * float(np.sum((pred - self.labels) ** 2)) + self.lam * float(gn.sum())

    def dual_objective(self, x) -> float:
        return self.problem.value(x)

    def dual_from_primal(self, w, beta=0.0):
        return self.A.matvec(w) + beta - self.labels

    def original_weights(self, w):
        out = np.zeros(len(w))
        out[self.perm] = w * self.scale
        return out

    def active_groups(self, w, tol=0.0):
        gn = np.sqrt(np.add.reduceat(w * w, self.group_ptr[:-1]))
        return np.flatnonzero(gn > tol)


def group_lambda_max(A: SparseColumnMatrix, labels, group_ptr, fit_intercept=True) -> float:
    x0 = (np.mean(labels) if fit_intercept else 0.0) - np.asarray(labels, float)
    v = A.rmatvec(x0)
    return float(np.sqrt(np.add.reduceat(v * v, group_ptr[:-1])).max())


def prepare_groups(data, groups, standardize: bool = True):
    """Permute features so groups are contiguous and optionally standardize each group.

    Returns (matrix, group_ptr, perm, scale).  With ``standardize`` each
    group is scaled so that its column variances sum to one.
    """
    A = _as_matrix(data)
    groups = np.asarray(groups)
    if groups.shape != (A.n_cols,):
        raise ValueError("need one group label per feature")
    labels_sorted, inverse = np.unique(groups, return_inverse=True)
    perm = np.argsort(inverse, kind="stable")
    counts = np.bincount(inverse, minlength=len(labels_sorted))
    if np.any(counts == 0):
        raise ValueError("empty group")
    group_ptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    A = A.select(perm)
    scale = np.ones(A.n_cols)
    if standardize:
        n = A.n_rows
        sums = np.add.reduceat(A.data, A.indptr[:-1]) if len(A.data) else np.zeros(A.n_cols)
        sums = np.where(A.nnz > 0, sums, 0.0)
        var = A.sq_norms / n - (sums / n) ** 2
        gvar = np.add.reduceat(var, group_ptr[:-1])
        if np.any(gvar <= 0):
            raise ValueError("a group has zero total variance")
        scale = np.repeat(1.0 / np.sqrt(gvar), counts)
        A = A.scale_columns(scale)
    return A, group_ptr, perm, scale


def build_group_dual(data, labels, groups, lam: float, standardize: bool = True,
                     fit_intercept: bool = True) -> GroupDualAdapter:
    if not lam > 0:
        raise ValueError("lambda must be positive")
    A, group_ptr, perm, scale = prepare_groups(data, groups, standardize)
    labels = np.asarray(labels, float)
    psi = QuadraticPsi(-labels, -0.5 * float(labels @ labels))
    blocks = [GroupNormConstraints(A, group_ptr, lam)]
    if fit_intercept:
        blocks.append(EqualityConstraint(np.ones(A.n_rows)))
    return GroupDualAdapter(PiecewiseProblem(psi, blocks), A, labels, float(lam), perm, scale, group_ptr,
                            fit_intercept)


# ---------------------------------------------------------------------------
# SVM


@dataclass
class SVMAdapter:
    """min_w 0.5 ||w||^2 + C sum_i max(0, 1 - b_i <a_i, w>); examples are columns of ``X``."""

    problem: PiecewiseProblem
    X: SparseColumnMatrix
    labels: np.ndarray
    C: float
    y0: np.ndarray = field(default=None)
    kind = "svm"

    def __post_init__(self):
        if self.y0 is None:
            self.y0 = np.zeros(self.X.n_rows)

    def make_solver(self):
        return DCASolver(self.problem)

    def primal_objective(self, w) -> float:
        return self.problem.value(w)

    def dual_objective(self, alpha) -> float:
        w = self.X.matvec(alpha * self.labels)
        return float(alpha.sum()) - 0.5 * float(w @ w)

    def primal_from_dual(self, alpha):
        return self.X.matvec(alpha * self.labels)


def build_svm_primal(data, labels, C: float, examples_as_rows: bool = True) -> SVMAdapter:
    """``data`` is examples x features (as read from libsvm) unless ``examples_as_rows`` is False."""
    if not C > 0:
        raise ValueError("C must be positive")
    labels = np.asarray(labels, float)
    if not np.all(np.isin(labels, (-1.0, 1.0))):
        raise ValueError("labels must be -1 or +1")
    M = _as_matrix(data)
    X = M.transpose() if examples_as_rows else M
    if X.n_cols != len(labels):
        raise ValueError("one label per example is required")
    problem = PiecewiseProblem(QuadraticPsi(np.zeros(X.n_rows)), [HingeLosses(X, labels, C)])
    return SVMAdapter(problem, X, labels, float(C))
