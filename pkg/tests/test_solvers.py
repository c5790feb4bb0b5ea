import cvxpy as cp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from instances import group_instance, l1_instance, pmn_instance, svm_instance
from blitzws.piecewise import FULL
from blitzws.problems import build_l1_dual, build_pmn
from blitzws.solvers import (LowerBoundModel, SolverBudget, WarmStart, certified_eps, group_block_update,
                             minimize_lower_bound, solve_subproblem)

seeds = st.integers(0, 2**31 - 1)


def warm_start(adapter, solver):
    lb = solver.initial_certificate().complete()
    f0 = adapter.problem.value(adapter.y0)
    return WarmStart(lb.minimizer, adapter.y0, lb.min_value, f0 - lb.min_value, f0)


def full(problem):
    return np.full(problem.m, FULL, dtype=np.int64)


# ---------------------------------------------------------------------------
# lower-bound models


def test_minimizer_is_anchor_when_gradients_cancel():
    pmn = build_pmn(np.eye(2), np.ones(2), np.zeros(2))
    z = np.array([0.3, -0.2])
    lb = LowerBoundModel(pmn.problem, z, 0.0, np.zeros(2), [np.zeros(2)])
    assert np.array_equal(minimize_lower_bound(lb), z)


def test_minimizer_steps_against_total_gradient():
    pmn = build_pmn(np.eye(2), np.ones(2), np.zeros(2))
    lb = LowerBoundModel(pmn.problem, np.zeros(2), 0.7, np.array([1.0, 0.0]), [np.zeros(2)]).complete()
    assert np.allclose(lb.minimizer, [-1.0, 0.0])
    assert lb.min_value == pytest.approx(lb.value(np.zeros(2)) - 0.5)


def test_certified_eps_takes_the_worse_condition():
    warm = WarmStart(np.zeros(2), np.ones(2), 0.0, 2.0)
    z = np.array([1.0, 0.0])  # half squared distance 0.5
    assert certified_eps(0.2, 0.5, warm, z) == pytest.approx(0.1)  # progress 0.5 -> second term 0
    assert certified_eps(0.2, 0.25, warm, z) == pytest.approx(0.5)
    assert certified_eps(0.0, -1.0, warm, np.zeros(2)) == np.inf


def test_budget_validation():
    with pytest.raises(ValueError):
        SolverBudget(1.0)
    with pytest.raises(ValueError):
        SolverBudget(-0.1)
    with pytest.raises(ValueError):
        SolverBudget(0.1, wall_limit=0.0)


# ---------------------------------------------------------------------------
# single updates against independent oracles


@given(seeds)
@settings(max_examples=30)
def test_lasso_coordinate_update_matches_grid(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(15, 6))
    y = rng.normal(size=15)
    lam = float(rng.uniform(0.1, 3.0))
    ad = build_l1_dual(X, y, "squared", lam, fit_intercept=False)
    s = ad.make_solver()
    s.w[:] = rng.normal(size=6)
    s.pred = X @ s.w
    j = int(rng.integers(0, 6))
    r = X @ s.w - y - X[:, j] * s.w[j]
    grid = np.linspace(-10, 10, 200_001)
    obj = 0.5 * ((r[:, None] + np.outer(X[:, j], grid)) ** 2).sum(0) + lam * np.abs(grid)
    best = grid[np.argmin(obj)]
    s.run_pass([np.array([j])])
    assert s.w[j] == pytest.approx(best, abs=2e-4)
    # the closed form is the soft threshold
    c = -X[:, j] @ r
    soft = np.sign(c) * max(abs(c) - lam, 0) / (X[:, j] @ X[:, j])
    assert s.w[j] == pytest.approx(soft, rel=1e-10, abs=1e-12)


def test_dca_keeps_dual_in_box(rng):
    X, y, C, ad = svm_instance(7, C=0.3)
    s = ad.make_solver()
    ws = s.ws_indices(full(ad.problem))
    for _ in range(20):
        s.run_pass(ws)
        assert np.all(s.alpha >= 0) and np.all(s.alpha <= C)
    assert np.allclose(s.w, X.T @ (s.alpha * y))


def test_group_shrink_closed_form_matches_bisection(rng):
    # orthogonal columns of equal norm: H = e I
    Q, _ = np.linalg.qr(rng.normal(size=(6, 3)))
    Ag = 2.0 * Q
    H = Ag.T @ Ag
    evals, evecs = np.linalg.eigh(H)
    c = rng.normal(size=3) * 5
    lam = 0.5 * np.linalg.norm(c)
    got = group_block_update(c, evals, evecs, lam)
    # oracle: bisection on mu for w = c / (e + mu), mu |w| = lam
    lo, hi = 0.0, 1e6
    for _ in range(300):
        mu = 0.5 * (lo + hi)
        lo, hi = (mu, hi) if mu * np.linalg.norm(c / (4.0 + mu)) < lam else (lo, mu)
    assert np.allclose(got, c / (4.0 + 0.5 * (lo + hi)), atol=1e-8)
    assert np.array_equal(group_block_update(c, evals, evecs, 2 * np.linalg.norm(c)), np.zeros(3))


@given(seeds)
@settings(max_examples=15)
def test_group_block_update_matches_convex_solver(seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(1, 5))
    Ag = rng.normal(size=(8, k))
    H = Ag.T @ Ag
    evals, evecs = np.linalg.eigh(H)
    c = rng.normal(size=k) * 3
    lam = float(rng.uniform(0.05, 1.0)) * np.linalg.norm(c)
    w = cp.Variable(k)
    cp.Problem(cp.Minimize(0.5 * cp.quad_form(w, cp.psd_wrap(H)) - c @ w + lam * cp.norm(w))).solve(
        solver=cp.CLARABEL)
    got = group_block_update(c, evals, evecs, lam)

    def f(v):
        return 0.5 * v @ H @ v - c @ v + lam * np.linalg.norm(v)

    assert f(got) <= f(w.value) + 1e-10
    # stationarity: H w - c + lam w / |w| = 0 (the norm of c exceeds lam, so w != 0)
    resid = H @ got - c + lam * got / np.linalg.norm(got)
    assert np.linalg.norm(resid) <= 1e-8 * (1 + np.linalg.norm(c))


def test_exact_solve_on_two_constraints_matches_projection():
    A = np.array([[1.0, 0.5], [0.2, 1.0], [0.0, 0.3]])
    b = np.array([1.0, 1.0])
    c = np.array([2.0, 2.0, 1.0])
    pmn = build_pmn(A, b, np.zeros(3), center=c)
    s = pmn.make_solver()
    s.interior = pmn.y0.copy()
    res = solve_subproblem(s, full(pmn.problem), warm_start(pmn, s), SolverBudget(0.0))
    x_ref, _ = oracles.min_norm_point(A, b, c)
    assert res.sub_gap == 0.0
    assert np.allclose(res.z, res.x, atol=1e-12)
    assert np.allclose(res.z, x_ref, atol=1e-8)


def test_pass_limit_sets_flag():
    _, _, _, ad = l1_instance(3)
    s = ad.make_solver()
    res = solve_subproblem(s, full(ad.problem), warm_start(ad, s), SolverBudget(0.0, max_passes=1))
    assert res.passes == 1
    assert res.hit_pass_limit


# ---------------------------------------------------------------------------
# pass-level properties for every solver


def all_adapters(seed):
    yield pmn_instance(seed, 20, 60)[-1]
    yield l1_instance(seed, "squared")[-1]
    yield l1_instance(seed, "logistic")[-1]
    yield l1_instance(seed, "huber")[-1]
    yield group_instance(seed)[-1]
    yield svm_instance(seed)[-1]


def _objective(ad, s):
    """The quantity each solver's pass should never make worse (smaller is better)."""
    if ad.kind == "pmn":
        return -s.certificate().min_value
    if ad.kind == "svm":
        return -s.dual_value()
    return s.primal_value()


@given(seeds)
@settings(max_examples=10)
def test_passes_never_worsen_the_solver_objective(seed):
    for ad in all_adapters(seed):
        s = ad.make_solver()
        ws = s.ws_indices(full(ad.problem))
        prev = _objective(ad, s)
        for _ in range(15):
            s.run_pass(ws)
            cur = _objective(ad, s)
            assert cur <= prev + 1e-12 * (1 + abs(prev))
            prev = cur


@given(seeds)
@settings(max_examples=10)
def test_certificates_lower_bound_the_relaxed_objective(seed):
    rng = np.random.default_rng(seed)
    for ad in all_adapters(seed):
        problem = ad.problem
        s = ad.make_solver()
        # a random working set; fixed terms get their piece at y0, which must be linear
        part = problem.partition(ad.y0)
        linear = np.concatenate([np.asarray(b.pieces_linear)[p] & ~b.permanent
                                 for b, p in zip(problem.blocks, problem.split(part))])
        asg = np.where(linear & (rng.random(problem.m) < 0.5), part, FULL).astype(np.int64)
        s.pin(asg)
        s.begin(asg, [ad.y0])
        ws = s.ws_indices(asg)
        rel = problem.relaxed(asg)
        for _ in range(3):
            for _ in range(3):
                s.run_pass(ws)
            lb = s.certificate().complete()
            z, ftz = s.feasible_point(lb.minimizer, 0)
            assert lb.min_value <= ftz + 1e-9 * (1 + abs(ftz))
            for _ in range(100):
                p = z + rng.normal(size=problem.n) * rng.choice([1e-3, 1e-1, 1.0])
                if not np.isfinite(rel.value(p)):
                    p = ad.y0 + rng.uniform() * (z - ad.y0)
                assert lb.value(p) <= rel.value(p) + 1e-9 * (1 + abs(rel.value(p)))


@given(seeds)
@settings(max_examples=5)
def test_solvers_are_deterministic_and_resumable(seed):
    for ad in all_adapters(seed):
        a, b = ad.make_solver(), ad.make_solver()
        ws = a.ws_indices(full(ad.problem))
        for _ in range(6):
            a.run_pass(ws)
        for _ in range(3):
            b.run_pass(ws)
        b.certificate()  # emitting a certificate must not perturb the state
        for _ in range(3):
            b.run_pass(ws)
        la, lb_ = a.certificate(), b.certificate()
        assert np.array_equal(la.anchor, lb_.anchor)
        assert la.min_value == lb_.min_value
        assert all(np.array_equal(u, v) for u, v in zip(la.mults, lb_.mults))


def test_subproblem_on_svm_matches_reference():
    X, y, C, ad = svm_instance(11, C=1.0)
    s = ad.make_solver()
    res = solve_subproblem(s, full(ad.problem), warm_start(ad, s), SolverBudget(1e-10))
    w_ref, val = oracles.linear_svm(X, y, C)
    assert ad.primal_objective(res.z) == pytest.approx(val, rel=1e-7)
    assert np.allclose(res.z, w_ref, atol=1e-4)


def test_group_solver_matches_reference():
    X, y, groups, lam, ad = group_instance(5)
    s = ad.make_solver()
    res = solve_subproblem(s, full(ad.problem), warm_start(ad, s), SolverBudget(1e-10))
    _, _, val = oracles.group_lasso(ad.A.to_dense(), y, ad.group_ptr, lam)
    assert -res.lb.min_value == pytest.approx(val, rel=1e-7)
