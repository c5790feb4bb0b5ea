"""libsvm text format and feature preprocessing.

A libsvm line reads ``<label> <idx>:<val> <idx>:<val> ...`` with 1-based,
strictly increasing feature indices.  Examples become matrix rows and
features become columns, so the returned matrix is the design matrix of a
regression (one column per feature).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .piecewise import SparseColumnMatrix

log = logging.getLogger(__name__)


class LibsvmParseError(ValueError):
    def __init__(self, path, lineno: int, msg: str):
        self.path = str(path)
        self.lineno = lineno
        super().__init__(f"{path}:{lineno}: {msg}")


def _parse_number(tok: str, path, lineno: int, what: str) -> float:
    try:
        v = float(tok)
    except ValueError:
        raise LibsvmParseError(path, lineno, f"non-numeric {what} {tok!r}") from None
    if not np.isfinite(v):
        raise LibsvmParseError(path, lineno, f"non-finite {what} {tok!r}")
    return v


def parse_libsvm_lines(lines, path="<text>", n_features: int | None = None):
    """Parse an iterable of libsvm lines into (matrix, labels)."""
    labels: list[float] = []
    rows: list[int] = []
    cols: list[int] = []
    vals: list[float] = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        toks = line.split()
        labels.append(_parse_number(toks[0], path, lineno, "label"))
        prev = 0
        row = len(labels) - 1
        for tok in toks[1:]:
            idx_s, sep, val_s = tok.partition(":")
            if not sep:
                raise LibsvmParseError(path, lineno, f"expected idx:value, got {tok!r}")
            try:
                idx = int(idx_s)
            except ValueError:
                raise LibsvmParseError(path, lineno, f"non-integer index {idx_s!r}") from None
            if idx < 1:
                raise LibsvmParseError(path, lineno, f"index {idx} is not 1-based")
            if idx <= prev:
                raise LibsvmParseError(path, lineno, f"index {idx} does not increase (previous {prev})")
            prev = idx
            rows.append(row)
            cols.append(idx - 1)
            vals.append(_parse_number(val_s, path, lineno, "value"))
    if not labels:
        raise LibsvmParseError(path, 0, "no examples found")
    width = (max(cols) + 1) if cols else 0
    if n_features is not None:
        if n_features < width:
            raise ValueError(f"data has {width} features but n_features={n_features}")
        width = n_features
    mat = sp.csc_matrix((np.asarray(vals, float), (np.asarray(rows), np.asarray(cols))),
                        shape=(len(labels), width))
    mat.sort_indices()
    return SparseColumnMatrix.from_scipy(mat), np.asarray(labels, float)


def read_libsvm(path, n_features: int | None = None):
    path = Path(path)
    with path.open() as fh:
        return parse_libsvm_lines(fh, path, n_features)


def format_libsvm(matrix: SparseColumnMatrix, labels) -> str:
    """Text in libsvm format; values use the shortest repr that round-trips exactly."""
    csr = matrix.to_scipy().tocsr()
    csr.sort_indices()
    out = []
    for r, lab in enumerate(np.asarray(labels, float)):
        lo, hi = csr.indptr[r], csr.indptr[r + 1]
        lab_s = repr(float(lab))
        if lab_s.endswith(".0"):
            lab_s = lab_s[:-2]
        parts = [lab_s] + [f"{j + 1}:{float(v)!r}" for j, v in zip(csr.indices[lo:hi], csr.data[lo:hi])]
        out.append(" ".join(parts))
    return "\n".join(out) + "\n"


def write_libsvm(path, matrix: SparseColumnMatrix, labels) -> None:
    if matrix.n_rows != len(labels):
        raise ValueError("one label per row is required")
    Path(path).write_text(format_libsvm(matrix, labels))


# ---------------------------------------------------------------------------
# preprocessing


@dataclass
class PreprocessOptions:
    standardize: bool = True
    min_nnz: int = 10
    add_bias: bool = False


@dataclass
class Preprocessed:
    """The processed matrix plus what is needed to map weights back."""

    matrix: SparseColumnMatrix
    kept: np.ndarray  # original index of each kept column
    scale: np.ndarray  # processed column j = original column kept[j] * scale[j]
    n_original: int
    has_bias: bool = False

    def original_weights(self, w) -> np.ndarray:
        """Weights on the original (unscaled, unpruned) features; a bias column is dropped."""
        w = np.asarray(w, float)
        k = len(self.kept)
        out = np.zeros(self.n_original)
        out[self.kept] = w[:k] * self.scale
        return out


def column_variances(matrix: SparseColumnMatrix) -> np.ndarray:
    n = matrix.n_rows
    if matrix.n_cols == 0:
        return np.zeros(0)
    sums = np.add.reduceat(matrix.data, matrix.indptr[:-1]) if len(matrix.data) else np.zeros(matrix.n_cols)
    sums = np.where(matrix.nnz > 0, sums, 0.0)
    return np.maximum(matrix.sq_norms / n - (sums / n) ** 2, 0.0)


def preprocess(matrix: SparseColumnMatrix, options: PreprocessOptions | None = None) -> Preprocessed:
    """Drop sparse and constant columns, then scale each column to unit variance.

    Scaling does not center, so sparsity is preserved.
    """
    opts = options or PreprocessOptions()
    var = column_variances(matrix)
    keep = matrix.nnz >= opts.min_nnz
    const = var <= 1e-12 * np.maximum(matrix.sq_norms / max(matrix.n_rows, 1), 1e-300)
    if np.any(keep & const):
        log.warning("dropping %d zero-variance column(s)", int(np.sum(keep & const)))
    keep &= ~const
    kept = np.flatnonzero(keep)
    out = matrix.select(kept)
    scale = np.ones(len(kept))
    if opts.standardize and len(kept):
        scale = 1.0 / np.sqrt(var[kept])
        out = out.scale_columns(scale)
    if opts.add_bias:
        ones = sp.csc_matrix(np.ones((out.n_rows, 1)))
        out = SparseColumnMatrix.from_scipy(sp.hstack([out.to_scipy(), ones], format="csc"))
    return Preprocessed(out, kept, scale, matrix.n_cols, opts.add_bias)
