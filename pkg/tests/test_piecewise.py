import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from blitzws.engine import EngineConfig, solve
from blitzws.piecewise import (FULL, BandConstraints, GroupNormConstraints, HalfSpace, HalfSpaceConstraints,
                               HingeLosses, LinearPiece, PiecewiseProblem, PiecewiseTerm, QuadraticPsi,
                               ScaledQuadraticPsi, SparseColumnMatrix, ZeroPiece, evaluate_full, evaluate_relaxed,
                               partition_index, reduce_at_solution, reduce_problem, step_to_ball, step_to_bound)
from blitzws.problems import build_pmn, build_svm_primal
from blitzws.solvers import HildrethSolver

seeds = st.integers(0, 2**31 - 1)


def random_sparse(rng, n, m, density=0.4):
    A = rng.normal(size=(n, m)) * (rng.random((n, m)) < density)
    A[rng.integers(0, n, size=m), np.arange(m)] = rng.normal(size=m) + 3.0
    return A


# ---------------------------------------------------------------------------
# sparse storage


@given(seeds)
def test_matrix_products_match_dense(seed):
    rng = np.random.default_rng(seed)
    n, m = rng.integers(1, 30, size=2)
    A = random_sparse(rng, n, m)
    M = SparseColumnMatrix.from_dense(A)
    x, w = rng.normal(size=n), rng.normal(size=m)
    assert np.allclose(M.rmatvec(x), A.T @ x, rtol=1e-12, atol=1e-12)
    assert np.allclose(M.matvec(w), A @ w, rtol=1e-12, atol=1e-12)
    assert np.allclose(M.norms, np.linalg.norm(A, axis=0), rtol=1e-12)
    assert np.array_equal(M.nnz, np.count_nonzero(A, axis=0))
    assert np.array_equal(M.to_dense(), A)


def test_from_columns_and_column_access():
    M = SparseColumnMatrix.from_columns(4, [[(0, 1.0), (3, -2.0)], [], [(2, 0.5)]])
    assert M.shape == (4, 3)
    assert list(M.nnz) == [2, 0, 1]
    rows, vals = M.column(0)
    assert list(rows) == [0, 3] and list(vals) == [1.0, -2.0]
    assert M.norms[0] == pytest.approx(np.sqrt(5.0), rel=1e-15)
    assert np.array_equal(M.dense_column(2), [0, 0, 0.5, 0])


def test_matrix_rejects_unsorted_rows():
    with pytest.raises(ValueError):
        SparseColumnMatrix(3, [0, 2], [2, 1], [1.0, 1.0])
    with pytest.raises(ValueError):
        SparseColumnMatrix(3, [0, 2], [1, 1], [1.0, 1.0])
    with pytest.raises(ValueError):
        SparseColumnMatrix(2, [0, 1], [5], [1.0])


def test_select_scale_transpose(rng):
    A = random_sparse(rng, 6, 5)
    M = SparseColumnMatrix.from_dense(A)
    assert np.array_equal(M.select([4, 1]).to_dense(), A[:, [4, 1]])
    f = rng.random(5) + 0.5
    assert np.allclose(M.scale_columns(f).to_dense(), A * f)
    assert np.array_equal(M.transpose().to_dense(), A.T)


# ---------------------------------------------------------------------------
# evaluation


def test_pmn_value_at_feasible_and_infeasible_points():
    A = np.array([[1.0, 0.0], [0.0, 1.0]])
    pmn = build_pmn(A, np.array([1.0, 1.0]), np.zeros(2))
    x = np.array([0.3, -0.4])
    assert evaluate_full(pmn.problem, x) == 0.5 * float(x @ x)
    assert evaluate_full(pmn.problem, np.array([1.5, 0.0])) == np.inf


def test_svm_value_when_every_margin_is_two(rng):
    X = rng.normal(size=(8, 3))
    x = rng.normal(size=3)
    labels = np.sign(X @ x)
    # rescale rows so b_i <a_i, x> = 2 for every i
    X = X * (2.0 / (labels * (X @ x)))[:, None]
    svm = build_svm_primal(X, labels, C=1.0)
    assert evaluate_full(svm.problem, x) == pytest.approx(0.5 * float(x @ x), rel=1e-14)


def test_dimension_mismatch_is_rejected():
    pmn = build_pmn(np.eye(2), np.ones(2), np.zeros(2))
    with pytest.raises(ValueError):
        evaluate_full(pmn.problem, np.zeros(3))


def test_relaxed_all_full_equals_full(rng):
    A = random_sparse(rng, 5, 12)
    y0 = rng.normal(size=5)
    pmn = build_pmn(A, A.T @ y0 + 1.0, y0)
    full = np.full(12, FULL)
    for _ in range(20):
        x = y0 + 0.1 * rng.normal(size=5)
        assert evaluate_relaxed(pmn.problem, full, x) == evaluate_full(pmn.problem, x)


def test_relaxed_pmn_with_empty_working_set_is_plain_quadratic(rng):
    A = random_sparse(rng, 4, 7)
    pmn = build_pmn(A, np.ones(7), np.zeros(4))
    zero = np.zeros(7, dtype=np.int64)
    x = 10.0 * rng.normal(size=4)  # violates constraints, which are relaxed away
    assert evaluate_relaxed(pmn.problem, zero, x) == pytest.approx(0.5 * float(x @ x), rel=1e-15)


def test_relaxed_svm_with_all_loss_pieces_is_affine_plus_quadratic(rng):
    X = rng.normal(size=(10, 4))
    labels = np.where(rng.random(10) < 0.5, -1.0, 1.0)
    C = 0.7
    svm = build_svm_primal(X, labels, C)
    asg = np.zeros(10, dtype=np.int64)
    a_star = -C * (labels[:, None] * X).sum(0)
    for _ in range(10):
        x = rng.normal(size=4)
        expect = 0.5 * x @ x + a_star @ x + C * 10
        assert evaluate_relaxed(svm.problem, asg, x) == pytest.approx(expect, rel=1e-12)


def test_fixing_a_nonlinear_piece_is_rejected():
    pmn = build_pmn(np.eye(2), np.ones(2), np.zeros(2))
    with pytest.raises(ValueError):
        pmn.problem.relaxed(np.array([1, FULL]))


# ---------------------------------------------------------------------------
# partition rule


def test_hinge_partition_examples():
    X = np.array([[1.0, 0.0]])
    term = build_svm_primal(X, np.array([1.0]), 1.0).problem.terms[0]
    assert partition_index(term, np.array([0.5, 0.0])) == 0
    assert partition_index(term, np.array([1.0, 0.0])) == 0  # boundary goes to the lowest index
    assert partition_index(term, np.array([1.5, 0.0])) == 1


def test_indicator_partition_feasible_point():
    term = build_pmn(np.eye(2), np.ones(2), np.zeros(2)).problem.terms[0]
    assert partition_index(term, np.array([0.2, 5.0])) == 0
    assert partition_index(term, np.array([2.0, 0.0])) == 1


def test_partition_requires_covering_pieces():
    hs = HalfSpace(np.array([1.0]), 0.0)
    with pytest.raises(ValueError):
        partition_index(PiecewiseTerm(((ZeroPiece(), hs),)), np.array([1.0]))


def _mixed_blocks(rng, n):
    A = random_sparse(rng, n, 6)
    B = random_sparse(rng, n, 5)
    G = random_sparse(rng, n, 7)
    H = random_sparse(rng, n, 4)
    labels = np.where(rng.random(4) < 0.5, -1.0, 1.0)
    x_ref = rng.normal(size=n)
    return [HalfSpaceConstraints(SparseColumnMatrix.from_dense(A), A.T @ x_ref + rng.normal(size=6)),
            BandConstraints(SparseColumnMatrix.from_dense(B), 1.0 + rng.random()),
            GroupNormConstraints(SparseColumnMatrix.from_dense(G), [0, 2, 5, 7], 1.0 + rng.random()),
            HingeLosses(SparseColumnMatrix.from_dense(H), labels, 0.5 + rng.random())]


@given(seeds)
@settings(max_examples=40)
def test_piece_dispatch_matches_block_evaluation(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 6))
    for blk in _mixed_blocks(rng, n):
        terms = blk.terms()
        for _ in range(5):
            x = rng.normal(size=n)
            vals = blk.values(x)
            parts = blk.partition(x)
            for i, term in enumerate(terms):
                k = partition_index(term, x)
                assert k == parts[i]
                v = term(x)
                if np.isinf(vals[i]):
                    assert v == np.inf
                else:
                    assert v == pytest.approx(vals[i], rel=1e-12, abs=1e-12)


@given(seeds)
@settings(max_examples=30)
def test_relaxed_value_matches_term_sum(seed):
    rng = np.random.default_rng(seed)
    n = 4
    X = rng.normal(size=(15, n))
    labels = np.where(rng.random(15) < 0.5, -1.0, 1.0)
    problem = build_svm_primal(X, labels, 0.9).problem
    asg = rng.integers(-1, 2, size=15)
    terms = problem.terms
    for _ in range(100):
        x = 2 * rng.normal(size=n)
        expect = problem.psi.value(x)
        for i, term in enumerate(terms):
            expect += term(x) if asg[i] == FULL else term.pieces[asg[i]][0](x)
        assert evaluate_relaxed(problem, asg, x) == pytest.approx(expect, rel=1e-10, abs=1e-10)


@given(seeds)
@settings(max_examples=30)
def test_affine_minorants_stay_below_their_terms(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 6))
    for blk in _mixed_blocks(rng, n):
        mult = rng.random(blk.zero_multipliers().shape) * 3.0
        if isinstance(blk, HalfSpaceConstraints):
            pass  # any nonnegative multiplier
        elif isinstance(blk, BandConstraints):
            mult = mult - 1.5
        elif isinstance(blk, GroupNormConstraints):
            mult = rng.normal(size=mult.shape)
        elif isinstance(blk, HingeLosses):
            mult = np.minimum(mult, blk.C)
        for _ in range(10):
            x = 3 * rng.normal(size=n)
            vals = blk.values(x)
            for i in range(blk.size):
                g, c = blk.term_minorant(mult, i)
                assert float(g @ x) + c <= vals[i] + 1e-10
            assert blk.minorant_value(mult, x) <= vals.sum() + 1e-9


def test_gamma_normalization_rescales_objective(rng):
    c = rng.normal(size=3)
    psi = ScaledQuadraticPsi(c, gamma=4.0)
    X = rng.normal(size=(5, 3))
    labels = np.where(rng.random(5) < 0.5, -1.0, 1.0)
    hinge = HingeLosses(SparseColumnMatrix.from_dense(X.T), labels, 2.0)
    problem = PiecewiseProblem(psi, [hinge])
    assert problem.psi.gamma == pytest.approx(1.0)
    x = rng.normal(size=3)
    raw = 2.0 * float((x - c) @ (x - c)) + 2.0 * np.maximum(0, 1 - labels * (X @ x)).sum()
    assert problem.value(x) == pytest.approx(raw / 4.0, rel=1e-13)
    with pytest.raises(ValueError):
        PiecewiseProblem(ScaledQuadraticPsi(c, gamma=0.0), [])


# ---------------------------------------------------------------------------
# steps to the boundary


def test_step_to_bound_closed_form():
    # one constraint x1 <= 1 from (0, 0) toward (2, 0)
    assert step_to_bound(np.array([0.0]), np.array([2.0]), upper=np.array([1.0])) == pytest.approx(0.5, rel=1e-12)
    assert step_to_bound(np.array([0.0]), np.array([-2.0]), upper=np.array([1.0])) == np.inf
    assert step_to_bound(np.array([0.0]), np.array([-4.0]), lower=np.array([-1.0])) == pytest.approx(0.25, rel=1e-12)
    # steps longer than one are reported too
    assert step_to_bound(np.array([0.0]), np.array([0.1]), upper=np.array([1.0])) == pytest.approx(10.0, rel=1e-12)


def test_step_to_ball_closed_form():
    # |p + a q| <= 1 with p = 0, q = (3, 4): alpha = 0.2
    a = step_to_ball(np.array([0.0]), np.array([0.0]), np.array([25.0]), 1.0)
    assert a == pytest.approx(0.2, rel=1e-12)
    a = step_to_ball(np.array([0.0]), np.array([0.0]), np.array([0.25]), 1.0)
    assert a == pytest.approx(2.0, rel=1e-12)


@given(seeds)
@settings(max_examples=40)
def test_max_step_reaches_the_boundary(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 6))
    for blk in _mixed_blocks(rng, n)[:3]:
        # a strictly feasible start point: scale until inside
        y = 0.01 * rng.normal(size=n)
        if not np.all(np.isfinite(blk.values(y))):
            continue
        d = rng.normal(size=n) * 10
        alpha = blk.max_step(y, d)
        if not np.isfinite(alpha):
            assert np.all(np.isfinite(blk.values(y + 1e3 * d)))
            continue
        assert np.all(np.isfinite(blk.values(y + alpha * d)))
        assert not np.all(np.isfinite(blk.values(y + 1.001 * alpha * d)))


# ---------------------------------------------------------------------------
# reduction at the solution


def test_reduce_with_all_flags_is_identity():
    pmn = build_pmn(np.eye(2), np.ones(2), np.zeros(2))
    assert reduce_at_solution(pmn.problem, np.zeros(2), np.ones(2, dtype=bool)) is pmn.problem


def test_reduce_two_constraint_pmn_keeps_the_minimizer():
    # min 0.5|x - c|^2 with x1 <= 1 (active) and x2 <= 5 (inactive)
    A = np.eye(2)
    b = np.array([1.0, 5.0])
    c = np.array([3.0, 0.0])
    pmn = build_pmn(A, b, np.zeros(2), center=c)
    x_star, _ = oracles.min_norm_point(A, b, c)
    reduced = reduce_at_solution(pmn.problem, x_star, np.array([True, False]))
    assert reduced.m == 1
    x_red, _ = oracles.min_norm_point(A[:, :1], b[:1], c)
    assert np.allclose(x_red, x_star, atol=1e-8)
    # the reduced problem has the same value as the full one near x_star
    assert reduced.value(x_star) == pytest.approx(pmn.problem.value(x_star), abs=1e-9)


@given(seeds)
@settings(max_examples=15)
def test_reduced_problem_shares_the_minimizer(seed):
    rng = np.random.default_rng(seed)
    n, m = int(rng.integers(2, 11)), int(rng.integers(2, 21))
    A = random_sparse(rng, n, m, 0.7)
    y0 = rng.normal(size=n)
    b = A.T @ y0 + rng.exponential(size=m)
    c = y0 + 3 * rng.normal(size=n)
    pmn = build_pmn(A, b, y0, center=c)
    x_star, _ = oracles.min_norm_point(A, b, c)
    flags = np.abs(A.T @ x_star - b) <= 1e-6 * (1 + np.abs(b))
    reduced = reduce_at_solution(pmn.problem, x_star, flags)
    assert reduced.m == int(flags.sum())
    if reduced.m == 0:
        x_red = c
    else:
        res = solve(reduced, HildrethSolver(reduced), y0, EngineConfig(rel_tol=1e-12, clock="work"))
        x_red = res.y
    assert np.max(np.abs(x_red - x_star)) <= 1e-6


def test_svm_reduction_reproduces_solution(rng):
    X = rng.normal(size=(30, 4))
    labels = np.where(X @ rng.normal(size=4) + 0.5 * rng.normal(size=30) >= 0, 1.0, -1.0)
    C = 1.0
    svm = build_svm_primal(X, labels, C)
    x_star, _ = oracles.linear_svm(X, labels, C)
    margins = labels * (X @ x_star)
    flags = np.abs(margins - 1.0) <= 1e-6
    reduced = reduce_at_solution(svm.problem, x_star, flags)
    # pieces of non-boundary terms: loss piece for margin violators, zero piece otherwise
    violators = (margins < 1) & ~flags
    g = -C * (labels[violators, None] * X[violators]).sum(0)
    import cvxpy as cp

    x = cp.Variable(4)
    Xb, yb = X[flags], labels[flags]
    obj = 0.5 * cp.sum_squares(x) + g @ x + C * cp.sum(cp.pos(1 - cp.multiply(yb, Xb @ x)))
    cp.Problem(cp.Minimize(obj)).solve(solver=cp.CLARABEL)
    assert np.allclose(x.value, x_star, atol=1e-6)
    assert reduced.value(x_star) == pytest.approx(svm.problem.value(x_star), rel=1e-9)


def test_reduce_problem_rejects_nonlinear_fix():
    pmn = build_pmn(np.eye(2), np.ones(2), np.zeros(2))
    with pytest.raises(ValueError):
        reduce_problem(pmn.problem, np.array([1, FULL]))


def test_linear_piece_is_exact():
    g = np.array([1.5, -2.0])
    piece = LinearPiece(g, 0.25)
    assert piece(np.array([2.0, 1.0])) == 1.5 * 2 - 2.0 + 0.25
