"""Deterministic synthetic datasets.

Every generator draws from ``numpy.random.default_rng(seed)`` only, so a
seed reproduces the same bytes on disk.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .io import write_libsvm
from .piecewise import SparseColumnMatrix

KINDS = ("lasso", "logreg", "group", "svm")


@dataclass
class FixtureSizes:
    n_examples: int = 200
    n_features: int = 1000
    density: float = 0.1  # fraction of nonzero design entries
    support: float = 0.1  # fraction of features (or groups) with nonzero truth
    noise: float = 0.1
    n_groups: int = 50  # group fixture: number of trees
    leaves: int = 8  # group fixture: leaves per tree
    margin: float = 0.5  # svm fixture


@dataclass
class Fixture:
    kind: str
    seed: int
    sizes: FixtureSizes
    X: SparseColumnMatrix  # examples x features
    y: np.ndarray
    truth: np.ndarray
    groups: np.ndarray | None = None
    files: dict = field(default_factory=dict)


def _sparse_gaussian(rng, n, m, density) -> SparseColumnMatrix:
    mask = rng.random((n, m)) < density
    vals = rng.standard_normal((n, m))
    # every column gets at least one entry so no feature is identically zero
    empty = np.flatnonzero(~mask.any(axis=0))
    mask[rng.integers(0, n, size=len(empty)), empty] = True
    return SparseColumnMatrix.from_scipy(sp.csc_matrix(np.where(mask, vals, 0.0)))


def _planted(rng, m, frac):
    k = max(1, int(round(frac * m)))
    truth = np.zeros(m)
    idx = np.sort(rng.choice(m, size=k, replace=False))
    truth[idx] = rng.choice([-1.0, 1.0], size=k) * (1.0 + rng.random(k))
    return truth


def lasso_data(seed: int, sizes: FixtureSizes | None = None):
    s = sizes or FixtureSizes()
    rng = np.random.default_rng(seed)
    X = _sparse_gaussian(rng, s.n_examples, s.n_features, s.density)
    truth = _planted(rng, s.n_features, s.support)
    y = X.matvec(truth) + s.noise * rng.standard_normal(s.n_examples)
    return X, y, truth


def logreg_data(seed: int, sizes: FixtureSizes | None = None):
    X, z, truth = lasso_data(seed, sizes)
    y = np.where(z >= 0, 1.0, -1.0)
    return X, y, truth


def group_data(seed: int, sizes: FixtureSizes | None = None):
    """Each group is a tree: an example lands in exactly one leaf, so columns within a group are orthogonal."""
    s = sizes or FixtureSizes()
    rng = np.random.default_rng(seed)
    n, G, L = s.n_examples, s.n_groups, s.leaves
    leaf = rng.integers(0, L, size=(n, G))
    rows = np.repeat(np.arange(n), G)
    cols = (np.arange(G)[None, :] * L + leaf).ravel()
    vals = 1.0 + rng.random(n * G)  # leaf values, positive
    X = SparseColumnMatrix.from_scipy(sp.csc_matrix((vals, (rows, cols)), shape=(n, G * L)))
    groups = np.repeat(np.arange(G), L)
    k = max(1, int(round(s.support * G)))
    active = np.sort(rng.choice(G, size=k, replace=False))
    truth = np.zeros(G * L)
    for g in active:
        truth[g * L:(g + 1) * L] = rng.standard_normal(L)
    y = X.matvec(truth) + s.noise * rng.standard_normal(n)
    return X, y, truth, groups


def svm_data(seed: int, sizes: FixtureSizes | None = None):
    """Linearly separable with a margin: examples too close to the planted hyperplane are pushed out."""
    s = sizes or FixtureSizes()
    rng = np.random.default_rng(seed)
    X = _sparse_gaussian(rng, s.n_examples, s.n_features, s.density)
    truth = rng.standard_normal(s.n_features)
    truth /= np.linalg.norm(truth)
    score = X.matvec(truth)
    y = np.where(score >= 0, 1.0, -1.0)
    short = np.abs(score) < s.margin
    if np.any(short):
        # add a bias feature carrying the missing margin for the short examples
        extra = np.where(short, y * (s.margin - np.abs(score)), 0.0)
        X = SparseColumnMatrix.from_scipy(sp.hstack([X.to_scipy(), sp.csc_matrix(extra[:, None])], format="csc"))
        truth = np.append(truth, 1.0)
    return X, y, truth


def make_fixture(kind: str, seed: int, sizes: FixtureSizes | None = None, out_dir=None) -> Fixture:
    """Generate a dataset and, if ``out_dir`` is given, write ``<kind>_<seed>.svm`` plus a manifest."""
    s = sizes or FixtureSizes()
    groups = None
    if kind == "lasso":
        X, y, truth = lasso_data(seed, s)
    elif kind == "logreg":
        X, y, truth = logreg_data(seed, s)
    elif kind == "group":
        X, y, truth, groups = group_data(seed, s)
    elif kind == "svm":
        X, y, truth = svm_data(seed, s)
    else:
        raise ValueError(f"unknown fixture kind {kind!r}; choose from {KINDS}")
    fx = Fixture(kind, seed, s, X, y, truth, groups)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        stem = f"{kind}_{seed}"
        data_path = out / f"{stem}.svm"
        write_libsvm(data_path, X, y)
        fx.files["data"] = str(data_path)
        if groups is not None:
            gpath = out / f"{stem}.groups"
            gpath.write_text("\n".join(str(int(g)) for g in groups) + "\n")
            fx.files["groups"] = str(gpath)
        manifest = {"kind": kind, "seed": seed, "sizes": asdict(s), "n_examples": X.n_rows,
                    "n_features": X.n_cols, "nnz": int(X.nnz.sum()),
                    "support": np.flatnonzero(truth).tolist(),
                    "files": {k: Path(v).name for k, v in fx.files.items()}}
        mpath = out / f"{stem}.json"
        mpath.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        fx.files["manifest"] = str(mpath)
    return fx


def read_groups(path) -> np.ndarray:
    return np.array([int(t) for t in Path(path).read_text().split()], dtype=np.int64)
