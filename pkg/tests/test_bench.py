import json

import numpy as np
import pytest

from blitzws.bench import (ARMS, ConvergenceLog, ReferenceSolveError, RunConfig, build_task, load_task,
                           reference_optimum, run_arm, run_benchmark)
from blitzws.fixtures import FixtureSizes, make_fixture
from blitzws.io import PreprocessOptions, preprocess
from blitzws.problems import LAMBDA_RATIOS, compute_lambda_max

SMALL = FixtureSizes(n_examples=60, n_features=150, n_groups=10, leaves=4)


@pytest.fixture(scope="module")
def lasso_fixture(tmp_path_factory):
    return make_fixture("lasso", 3, SMALL, tmp_path_factory.mktemp("fx"))


def test_run_config_validation():
    RunConfig("lasso", lam_ratio=0.02)
    RunConfig("svm", C=1.0)
    RunConfig("grouplasso", active_groups=0.1)
    bad = [dict(task="ridge", lam=1.0), dict(task="lasso"), dict(task="lasso", lam=1.0, lam_ratio=0.2),
           dict(task="lasso", lam_ratio=1.5), dict(task="svm"), dict(task="svm", C=-1.0),
           dict(task="lasso", lam=1.0, arm="fast"), dict(task="lasso", active_groups=0.1),
           dict(task="grouplasso", active_groups=0.0)]
    for kw in bad:
        with pytest.raises(ValueError):
            RunConfig(**kw)
    assert LAMBDA_RATIOS == (0.2, 0.02, 0.002)


def test_lambda_ratio_preset_resolves(lasso_fixture):
    task = load_task(RunConfig("lasso", data=lasso_fixture.files["data"], lam_ratio=0.02))
    pre = preprocess(lasso_fixture.X, PreprocessOptions())
    assert task.param == pytest.approx(0.02 * compute_lambda_max(pre.matrix, lasso_fixture.y, "squared"), rel=1e-12)
    explicit = load_task(RunConfig("lasso", data=lasso_fixture.files["data"], lam=task.param))
    assert explicit.param == task.param


def test_convergence_log_round_trip(tmp_path):
    clog = ConvergenceLog()
    clog.add(t=1, wall_seconds=0.5, rel_subopt=1.0, ws_size=3, xi=0.1, eps=0.5, screened_count=0, work=10)
    clog.add(t=2, wall_seconds=0.5, rel_subopt=0.1, ws_size=4, xi=None, eps=None, screened_count=1, work=20)
    walls = [r["wall_seconds"] for r in clog.records]
    assert walls[1] > walls[0]
    assert list(clog.records[0]) == ["t", "wall_seconds", "rel_subopt", "ws_size", "xi", "eps", "screened_count",
                                     "work"]
    p = tmp_path / "log.jsonl"
    clog.write(p)
    again = ConvergenceLog.read(p)
    assert again.records == clog.records
    assert clog.first_reaching(0.5)["t"] == 2 and clog.first_reaching(1e-3) is None
    assert np.array_equal(clog.rel_subopt(), [1.0, 0.1])


def test_reference_is_cached(lasso_fixture, tmp_path):
    task = build_task("lasso", lasso_fixture.X, lasso_fixture.y, lam_ratio=0.2)
    ref = reference_optimum(task, tmp_path)
    files = list(tmp_path.glob("ref_*.json"))
    assert len(files) == 1
    data = json.loads(files[0].read_text())
    assert data["value"] == ref and data["gap"] <= 1e-9 * (1 + abs(ref))
    data["value"] = 123.0
    files[0].write_text(json.dumps(data))
    assert reference_optimum(task, tmp_path) == 123.0


def test_reference_failure_is_reported(lasso_fixture):
    task = build_task("lasso", lasso_fixture.X, lasso_fixture.y, lam_ratio=0.002)
    with pytest.raises(ReferenceSolveError, match="relative gap"):
        reference_optimum(task, time_limit=1e-9)


@pytest.mark.parametrize("kind, kw", [("lasso", dict(lam_ratio=0.02)), ("logreg", dict(lam_ratio=0.2)),
                                      ("svm", dict(C=1.0)), ("grouplasso", dict(active_groups=0.1))])
def test_every_arm_reaches_the_reference(kind, kw):
    fx = make_fixture("group" if kind == "grouplasso" else kind, 4, SMALL)
    task = build_task(kind, fx.X, fx.y, groups=fx.groups, **kw)
    ref = reference_optimum(task)
    for arm in ARMS:
        clog, summary = run_arm(task, arm, ref, 1e-6, time_limit=60)
        assert summary.reached, summary.as_row()
        walls = [r["wall_seconds"] for r in clog.records]
        assert np.all(np.diff(walls) > 0)
        rel = clog.rel_subopt()
        # best-so-far logging makes every arm's curve nonincreasing
        assert np.all(np.diff(rel) <= 0)
        if arm.startswith("plain+"):
            counts = [r["screened_count"] for r in clog.records]
            assert np.all(np.diff(counts) >= 0)


def test_run_benchmark_writes_log_and_summary(lasso_fixture, tmp_path):
    out = tmp_path / "run" / "log.jsonl"
    cfg = RunConfig("lasso", data=lasso_fixture.files["data"], lam_ratio=0.2, arm="plain+screen", out=str(out),
                    cache_dir=str(tmp_path / "cache"))
    clog, summary = run_benchmark(cfg)
    assert summary.reached
    assert ConvergenceLog.read(out).records == clog.records
    saved = json.loads(out.with_suffix(".summary.json").read_text())
    assert saved["arm"] == "plain+screen" and saved["screened"] == summary.screened
