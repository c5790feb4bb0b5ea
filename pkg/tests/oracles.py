"""Independent reference solvers built on cvxpy.

Nothing here imports the package's solvers; objectives are written out
from their textbook definitions so the tests compare two unrelated routes.
"""

import cvxpy as cp
import numpy as np

_OPTS = dict(solver=cp.CLARABEL, tol_gap_abs=1e-12, tol_gap_rel=1e-12, tol_feas=1e-12, max_iter=500)


def _solve(prob):
    try:
        prob.solve(**_OPTS)
    except cp.SolverError:
        prob.solve(solver=cp.CLARABEL)
    if prob.status not in ("optimal", "optimal_inaccurate"):
        raise RuntimeError(f"reference solve failed: {prob.status}")
    return prob.value


def min_norm_point(A, b, center=None):
    """argmin 0.5||x - c||^2 s.t. A^T x <= b (A is n x m, one constraint per column)."""
    n = A.shape[0]
    c = np.zeros(n) if center is None else center
    x = cp.Variable(n)
    val = _solve(cp.Problem(cp.Minimize(0.5 * cp.sum_squares(x - c)), [A.T @ x <= b]))
    return x.value, val


def _loss_expr(loss, pred, y):
    if loss == "squared":
        return 0.5 * cp.sum_squares(pred - y)
    if loss == "logistic":
        return 4 * cp.sum(cp.logistic(-cp.multiply(y, pred)))
    if loss == "squared_hinge":
        return 0.5 * cp.sum_squares(cp.pos(1 - cp.multiply(y, pred)))
    if loss == "huber":
        # cvxpy's huber is 2x the usual one with threshold M
        return 0.5 * cp.sum(cp.huber(pred - y, 1.0))
    raise ValueError(loss)


def l1_regression(X, y, lam, loss="squared", fit_intercept=True):
    """(w, beta, optimal value) for sum L(Xw + beta; y) + lam ||w||_1."""
    n, p = X.shape
    w = cp.Variable(p)
    beta = cp.Variable() if fit_intercept else 0.0
    pred = X @ w + beta
    val = _solve(cp.Problem(cp.Minimize(_loss_expr(loss, pred, y) + lam * cp.norm1(w))))
    return w.value, (float(beta.value) if fit_intercept else 0.0), val


def group_lasso(X, y, group_ptr, lam, fit_intercept=True):
    """Columns of X are grouped contiguously by ``group_ptr``."""
    n, p = X.shape
    w = cp.Variable(p)
    beta = cp.Variable() if fit_intercept else 0.0
    pen = sum(cp.norm(w[group_ptr[g]:group_ptr[g + 1]], 2) for g in range(len(group_ptr) - 1))
    val = _solve(cp.Problem(cp.Minimize(0.5 * cp.sum_squares(X @ w + beta - y) + lam * pen)))
    return w.value, (float(beta.value) if fit_intercept else 0.0), val


def linear_svm(X, y, C):
    """X is examples x features."""
    w = cp.Variable(X.shape[1])
    val = _solve(cp.Problem(cp.Minimize(0.5 * cp.sum_squares(w) + C * cp.sum(cp.pos(1 - cp.multiply(y, X @ w))))))
    return w.value, val
