"""Compiled inner loops over CSC columns.

Every pass returns the work it did: the sum of column NNZ over the
coordinate updates it performed.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def col_dot(indptr, indices, data, i, v):
    s = 0.0
    for p in range(indptr[i], indptr[i + 1]):
        s += data[p] * v[indices[p]]
    return s


@njit(cache=True)
def col_axpy(indptr, indices, data, i, alpha, v):
    for p in range(indptr[i], indptr[i + 1]):
        v[indices[p]] += alpha * data[p]


@njit(cache=True)
def hildreth_pass(indptr, indices, data, sqn, b, ws, mu, x):
    """Projection CD on the dual of min 0.5||x - c||^2 s.t. <a_i, x> <= b_i; x = c - A mu."""
    work = 0
    for i in ws:
        nz = indptr[i + 1] - indptr[i]
        work += nz
        viol = col_dot(indptr, indices, data, i, x) - b[i]
        new = mu[i] + viol / sqn[i]
        if new < 0.0:
            new = 0.0
        step = new - mu[i]
        if step != 0.0:
            mu[i] = new
            col_axpy(indptr, indices, data, i, -step, x)
    return work


@njit(cache=True)
def lasso_cd_pass(indptr, indices, data, sqn, lam, ws, w, r):
    """Cyclic CD on 0.5||r||^2 + lam ||w||_1 where r = A w + const."""
    work = 0
    for i in ws:
        if sqn[i] == 0.0:
            continue
        work += indptr[i + 1] - indptr[i]
        g = col_dot(indptr, indices, data, i, r)
        u = w[i] - g / sqn[i]
        thr = lam / sqn[i]
        if u > thr:
            new = u - thr
        elif u < -thr:
            new = u + thr
        else:
            new = 0.0
        step = new - w[i]
        if step != 0.0:
            w[i] = new
            col_axpy(indptr, indices, data, i, step, r)
    return work


@njit(cache=True)
def weighted_cd_pass(indptr, indices, data, lam, ws, h, g, w, d, q, fit_bias, bias_state):
    """One pass of CD on the proximal Newton model.

    Minimizes <g, q> + 0.5 sum h q^2 + lam ||w + d||_1 over d (and a bias
    step when ``fit_bias``), with q = A d + d_bias.  Returns (work, decrease).
    """
    work = 0
    dec = 0.0
    for i in ws:
        lo, hi = indptr[i], indptr[i + 1]
        work += hi - lo
        grad = 0.0
        curv = 0.0
        for p in range(lo, hi):
            j = indices[p]
            a = data[p]
            grad += a * (g[j] + h[j] * q[j])
            curv += a * a * h[j]
        if curv <= 1e-14:
            continue
        cur = w[i] + d[i]
        u = cur - grad / curv
        thr = lam / curv
        if u > thr:
            new = u - thr
        elif u < -thr:
            new = u + thr
        else:
            new = 0.0
        step = new - cur
        if step != 0.0:
            dec += -(grad * step + 0.5 * curv * step * step) - lam * (abs(new) - abs(cur))
            d[i] += step
            for p in range(lo, hi):
                q[indices[p]] += step * data[p]
    if fit_bias:
        n = q.shape[0]
        grad = 0.0
        curv = 0.0
        for j in range(n):
            grad += g[j] + h[j] * q[j]
            curv += h[j]
        work += n
        if curv > 1e-14:
            step = -grad / curv
            dec += -(grad * step + 0.5 * curv * step * step)
            bias_state[0] += step
            for j in range(n):
                q[j] += step
    return work, dec


@njit(cache=True)
def dca_pass(indptr, indices, data, sqn, labels, C, ws, alpha, w):
    """Dual coordinate ascent for the hinge SVM; w = sum alpha_i b_i a_i (+ fixed part)."""
    work = 0
    for i in ws:
        if sqn[i] == 0.0:
            # the zero example: its loss is constant C, optimal alpha is C
            alpha[i] = C
            continue
        work += indptr[i + 1] - indptr[i]
        margin = labels[i] * col_dot(indptr, indices, data, i, w)
        new = alpha[i] - (margin - 1.0) / sqn[i]
        if new < 0.0:
            new = 0.0
        elif new > C:
            new = C
        step = new - alpha[i]
        if step != 0.0:
            alpha[i] = new
            col_axpy(indptr, indices, data, i, step * labels[i], w)
    return work


@njit(cache=True)
def band_profile(indptr, indices, data, ws, x):
    out = np.empty(ws.shape[0])
    for k in range(ws.shape[0]):
        out[k] = col_dot(indptr, indices, data, ws[k], x)
    return out


@njit(cache=True)
def csc_rmatvec(indptr, indices, data, x):
    n_cols = indptr.shape[0] - 1
    out = np.empty(n_cols)
    for i in range(n_cols):
        out[i] = col_dot(indptr, indices, data, i, x)
    return out


@njit(cache=True)
def csc_matvec(indptr, indices, data, n_rows, w):
    out = np.zeros(n_rows)
    for i in range(indptr.shape[0] - 1):
        if w[i] != 0.0:
            col_axpy(indptr, indices, data, i, w[i], out)
    return out
