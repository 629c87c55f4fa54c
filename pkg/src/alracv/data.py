"""Datasets, synthetic generators and file loaders.

A :class:`Dataset` holds a covariate matrix ``X`` (dense ``ndarray`` or
``scipy.sparse`` CSR) and a response vector ``y``.  Sparse inputs stay sparse
through every product in the pipeline; only ``D x K`` sketch factors are
dense.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .exceptions import AcvError, DomainError
from .families import get_family

POISSON_LOG_MEAN_CAP = 30.0


def make_rng(seed):
    """Counter-based generator so every stream is addressable by its seed."""
    return np.random.Generator(np.random.Philox(int(seed)))


@dataclass(frozen=True, eq=False)
class Dataset:
    X: object
    y: np.ndarray
    row_norms: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        X = self.X
        if sp.issparse(X):
            X = sp.csr_matrix(X, dtype=float)
            X.sum_duplicates()
            values = X.data
        else:
            X = np.ascontiguousarray(np.atleast_2d(np.asarray(X, dtype=float)))
            values = X
        y = np.asarray(self.y, dtype=float).ravel()
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise ValueError(f"X must be a non-empty 2-d matrix, got shape {X.shape}")
        if y.shape[0] != X.shape[0]:
            raise ValueError(f"y has {y.shape[0]} entries but X has {X.shape[0]} rows")
        if not np.all(np.isfinite(values)) or not np.all(np.isfinite(y)):
            raise ValueError("dataset contains non-finite entries")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        if sp.issparse(X):
            sq = np.asarray(X.multiply(X).sum(axis=1)).ravel()
        else:
            sq = np.einsum("ij,ij->i", X, X)
        object.__setattr__(self, "row_norms", np.sqrt(sq))

    @property
    def N(self) -> int:
        return self.X.shape[0]

    @property
    def D(self) -> int:
        return self.X.shape[1]

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self.X)

    @property
    def sq_row_norms(self) -> np.ndarray:
        return self.row_norms**2

    def dense(self) -> np.ndarray:
        return self.X.toarray() if self.is_sparse else self.X

    def row(self, n) -> np.ndarray:
        if self.is_sparse:
            return self.X[n].toarray().ravel()
        return self.X[n]

    def take(self, rows) -> "Dataset":
        rows = np.asarray(rows, dtype=int)
        return Dataset(self.X[rows], self.y[rows])

    def drop(self, n) -> "Dataset":
        keep = np.ones(self.N, dtype=bool)
        keep[n] = False
        return self.take(np.flatnonzero(keep))


def gram_weighted(X, w, scale=1.0):
    """Dense ``scale * X^T diag(w) X``."""
    if sp.issparse(X):
        G = (X.T @ sp.diags(w) @ X).toarray()
    else:
        G = X.T @ (w[:, None] * X)
    G *= scale
    return 0.5 * (G + G.T)


# ----------------------------------------------------------------------
# synthetic data
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for approximately low-rank GLM data.

    Columns ``0..rank-1`` are standard normal and the remaining columns have
    standard deviation ``tail_std`` (0 gives exactly rank-``rank`` data).
    """

    family_kind: str
    N: int
    D: int
    rank: int
    tail_std: float = 0.0
    theta_star_seed: int = 0
    data_seed: int = 1
    rotate: bool = False

    def __post_init__(self):
        if not 1 <= self.rank <= self.D:
            raise ValueError("rank must satisfy 1 <= rank <= D")
        if self.tail_std < 0:
            raise ValueError("tail_std must be nonnegative")
        if self.N < 1:
            raise ValueError("N must be positive")


def _draw_rows(rng, n, spec):
    X = np.empty((n, spec.D))
    X[:, : spec.rank] = rng.standard_normal((n, spec.rank))
    if spec.D > spec.rank:
        X[:, spec.rank :] = spec.tail_std * rng.standard_normal((n, spec.D - spec.rank))
    return X


def gen_synthetic(spec: SyntheticSpec):
    """Draw ``(Dataset, theta_star)`` following ``spec``."""
    family = get_family(spec.family_kind)
    theta_star = make_rng(spec.theta_star_seed).standard_normal(spec.D)
    rng = make_rng(spec.data_seed)
    X = _draw_rows(rng, spec.N, spec)
    if spec.rotate:
        Q, R = np.linalg.qr(rng.standard_normal((spec.D, spec.D)))
        Q *= np.sign(np.diag(R))
        X = X @ Q.T
    z = X @ theta_star
    if family.kind == "poisson":
        for n in np.flatnonzero(z > POISSON_LOG_MEAN_CAP):
            for _ in range(100):
                row = _draw_rows(rng, 1, spec)
                if spec.rotate:
                    row = row @ Q.T
                if row[0] @ theta_star <= POISSON_LOG_MEAN_CAP:
                    X[n] = row[0]
                    z[n] = row[0] @ theta_star
                    break
            else:
                raise AcvError(f"row {n}: Poisson log-mean exceeds {POISSON_LOG_MEAN_CAP} after 100 redraws")
        y = rng.poisson(np.exp(z)).astype(float)
    elif family.kind == "logistic":
        p = 1.0 / (1.0 + np.exp(-z))
        y = np.where(rng.random(spec.N) < p, 1.0, -1.0)
    else:
        y = z + rng.standard_normal(spec.N)
    return Dataset(X, y), theta_star


# ----------------------------------------------------------------------
# file formats
# ----------------------------------------------------------------------


def _map_labels(y, family, source):
    if family is None:
        return y
    family = get_family(family)
    if family.kind == "logistic":
        uniq = set(np.unique(y).tolist())
        if uniq <= {0.0, 1.0}:
            y = 2.0 * y - 1.0
    try:
        family.check_response(y)
    except DomainError as exc:
        raise DomainError(f"{source}: {exc}", index=exc.index) from None
    return y


def _fmt(v):
    v = float(v)
    return str(int(v)) if v.is_integer() and abs(v) < 2**53 else repr(v)


def load_libsvm(path, family=None, n_features=None) -> Dataset:
    """Read a libsvm/svmlight file (``label idx:val ...``, 1-based indices)."""
    labels, indptr, indices, values = [], [0], [], []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            try:
                labels.append(float(parts[0]))
                for tok in parts[1:]:
                    idx, val = tok.split(":")
                    idx = int(idx)
                    if idx < 1:
                        raise ValueError(f"feature index {idx} < 1")
                    indices.append(idx - 1)
                    values.append(float(val))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: malformed libsvm line ({exc})") from None
            indptr.append(len(indices))
    if not labels:
        raise ValueError(f"{path}: no data lines")
    width = max(indices, default=-1) + 1
    if n_features is not None:
        if n_features < width:
            raise ValueError(f"{path}: feature index {width} exceeds n_features={n_features}")
        width = n_features
    X = sp.csr_matrix(
        (np.asarray(values, dtype=float), np.asarray(indices, dtype=np.int64), np.asarray(indptr)),
        shape=(len(labels), max(width, 1)),
    )
    X.sort_indices()
    y = _map_labels(np.asarray(labels), family, path)
    return Dataset(X, y)


def save_libsvm(dataset: Dataset, path):
    X = sp.csr_matrix(dataset.X)
    X.sort_indices()
    with open(path, "w") as fh:
        for n in range(X.shape[0]):
            lo, hi = X.indptr[n], X.indptr[n + 1]
            feats = " ".join(f"{j + 1}:{_fmt(v)}" for j, v in zip(X.indices[lo:hi], X.data[lo:hi]) if v != 0)
            fh.write(f"{_fmt(dataset.y[n])} {feats}".rstrip() + "\n")


def load_csv(path, label_column=0, family=None) -> Dataset:
    """Read a dense CSV with a header row; ``label_column`` is an index or a name."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise ValueError(f"{path}: expected a header and at least one data row")
    header, body = rows[0], rows[1:]
    if isinstance(label_column, str) and not label_column.lstrip("-").isdigit():
        if label_column not in header:
            raise ValueError(f"{path}: no column named {label_column!r}")
        label_column = header.index(label_column)
    label_column = int(label_column)
    try:
        data = np.array([[float(v) for v in r] for r in body if r])
    except ValueError as exc:
        raise ValueError(f"{path}: non-numeric entry ({exc})") from None
    y = _map_labels(data[:, label_column], family, path)
    X = np.delete(data, label_column, axis=1)
    return Dataset(X, y)


def load_dataset(path, family=None, label_column=0) -> Dataset:
    """Dispatch on extension: ``.csv`` is CSV, anything else libsvm."""
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    if str(path).lower().endswith(".csv"):
        return load_csv(path, label_column=label_column, family=family)
    return load_libsvm(path, family=family)


# ----------------------------------------------------------------------
# preprocessing used for the real-data recipes
# ----------------------------------------------------------------------


def _column_nnz(X):
    if sp.issparse(X):
        return np.asarray((X != 0).sum(axis=0)).ravel()
    return np.count_nonzero(X, axis=0)


def _top_by_count(counts, k):
    # most nonzeros first, ties broken by lower index
    order = np.lexsort((np.arange(counts.size), -counts))
    return np.sort(order[:k])


def select_dense_features(dataset: Dataset, D_keep: int) -> Dataset:
    """Keep the ``D_keep`` columns with the most nonzeros."""
    if D_keep > dataset.D:
        raise ValueError("D_keep exceeds the number of columns")
    cols = _top_by_count(_column_nnz(dataset.X), D_keep)
    X = dataset.X[:, cols]
    return Dataset(X, dataset.y)


def subsample_rows(dataset: Dataset, N_keep: int, seed) -> Dataset:
    """Uniform row subsample without replacement (rows kept in file order)."""
    if N_keep > dataset.N:
        raise ValueError("N_keep exceeds the number of rows")
    rows = np.sort(make_rng(seed).choice(dataset.N, size=N_keep, replace=False))
    return dataset.take(rows)


def pairwise_expand(dataset: Dataset, D_keep: int) -> Dataset:
    """Append the ``D_keep`` least-sparse pairwise products to the original columns.

    Candidates are ``x_i * x_j`` for ``i <= j``.  Nonzero counts for every
    pair are found from the binary sparsity pattern before any product
    column is materialized.
    """
    X = sp.csr_matrix(dataset.X)
    pattern = X.copy()
    pattern.data = (pattern.data != 0).astype(float)
    counts = (pattern.T @ pattern).toarray()
    iu, ju = np.triu_indices(dataset.D)
    pair_counts = counts[iu, ju]
    nz = np.flatnonzero(pair_counts > 0)
    chosen = nz[_top_by_count(pair_counts[nz], min(D_keep, nz.size))]
    Xc = X.tocsc()
    cols = [Xc[:, iu[k]].multiply(Xc[:, ju[k]]) for k in chosen]
    products = sp.hstack(cols, format="csr") if cols else sp.csr_matrix((dataset.N, 0))
    out = sp.hstack([products, X], format="csr")
    if not dataset.is_sparse:
        out = out.toarray()
    return Dataset(out, dataset.y)
