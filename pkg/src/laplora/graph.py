"""Sparse matrices and the graph container.

Everything here is float64 and immutable once built.  ``SparseMatrix`` is a
plain CSR triple; products are delegated to :mod:`scipy.sparse`, whose CSR
kernel walks each row in stored (ascending column) order, so results are
bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import ShapeError, ValidationError

__all__ = [
    "SparseMatrix",
    "GraphDataset",
    "symmetrize",
    "adjacency",
    "degrees",
    "normalized_laplacian",
    "propagation_operator",
    "spmm",
]


@dataclass(frozen=True, eq=False)
class SparseMatrix:
    """Compressed sparse row matrix with sorted, duplicate-free rows."""

    n_rows: int
    n_cols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        offs = np.ascontiguousarray(self.row_offsets, dtype=np.int64)
        cols = np.ascontiguousarray(self.col_indices, dtype=np.int64)
        vals = np.ascontiguousarray(self.values, dtype=np.float64)
        if offs.shape != (self.n_rows + 1,):
            raise ShapeError("row_offsets must have length n_rows + 1")
        if cols.shape != vals.shape or cols.ndim != 1:
            raise ShapeError("col_indices and values must be 1-d and of equal length")
        if offs[0] != 0 or offs[-1] != len(vals) or np.any(np.diff(offs) < 0):
            raise ValidationError("row_offsets must be non-decreasing from 0 to nnz")
        if len(cols) and (cols.min() < 0 or cols.max() >= self.n_cols):
            raise ValidationError("column index out of range")
        # strictly increasing columns inside every row
        if len(cols) > 1:
            step = np.diff(cols)
            row_start = np.zeros(len(cols), dtype=bool)
            row_start[offs[1:-1][offs[1:-1] < len(cols)]] = True
            if np.any((step <= 0) & ~row_start[1:]):
                raise ValidationError("columns must be strictly increasing within each row")
        for name, arr in (("row_offsets", offs), ("col_indices", cols), ("values", vals)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def shape(self):
        return (self.n_rows, self.n_cols)

    @property
    def nnz(self):
        return len(self.values)

    @classmethod
    def from_scipy(cls, mat) -> "SparseMatrix":
        csr = sp.csr_matrix(mat, dtype=np.float64)
        csr.sum_duplicates()
        csr.sort_indices()
        return cls(csr.shape[0], csr.shape[1], csr.indptr, csr.indices, csr.data)

    @classmethod
    def from_dense(cls, dense) -> "SparseMatrix":
        dense = np.asarray(dense, dtype=np.float64)
        if dense.ndim != 2:
            raise ShapeError("expected a 2-d array")
        return cls.from_scipy(sp.csr_matrix(dense))

    @classmethod
    def identity(cls, n: int) -> "SparseMatrix":
        return cls(n, n, np.arange(n + 1), np.arange(n), np.ones(n))

    @cached_property
    def _csr(self) -> sp.csr_matrix:
        return sp.csr_matrix(
            (self.values, self.col_indices, self.row_offsets), shape=self.shape, copy=False
        )

    def to_scipy(self) -> sp.csr_matrix:
        """Read-only scipy view sharing this matrix's buffers."""
        return self._csr

    def to_dense(self) -> np.ndarray:
        return self.to_scipy().toarray()

    def transpose(self) -> "SparseMatrix":
        return SparseMatrix.from_scipy(self.to_scipy().T)

    def diagonal(self) -> np.ndarray:
        return self.to_scipy().diagonal()


@dataclass(frozen=True, eq=False)
class GraphDataset:
    """Node-classification graph: undirected edges, features, labels, splits."""

    n_nodes: int
    edges: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    train_mask: np.ndarray
    val_mask: np.ndarray
    test_mask: np.ndarray
    name: str = "graph"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.n_nodes
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        edges = symmetrize(edges, n)
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] != n:
            raise ShapeError(f"features must be {n} x F, got {feats.shape}")
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.shape != (n,):
            raise ShapeError(f"labels must have length {n}")
        if n and labels.min() < 0:
            raise ValidationError("labels must be non-negative")
        masks = []
        for name in ("train_mask", "val_mask", "test_mask"):
            m = np.asarray(getattr(self, name), dtype=bool)
            if m.shape != (n,):
                raise ShapeError(f"{name} must have length {n}")
            masks.append(m)
        if np.any(masks[0] & masks[1]) or np.any(masks[0] & masks[2]) or np.any(masks[1] & masks[2]):
            raise ValidationError("train/val/test masks overlap")
        for name, arr in zip(
            ("edges", "features", "labels", "train_mask", "val_mask", "test_mask"),
            [edges, feats, labels, *masks],
        ):
            arr = np.array(arr, copy=True)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> int:
        if "n_classes" in self.meta:
            return int(self.meta["n_classes"])
        return int(self.labels.max()) + 1 if self.n_nodes else 0


def symmetrize(edges, n: int) -> np.ndarray:
    """Canonical undirected edge list: pairs ``(u, v)`` with ``u <= v``, sorted, unique."""
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if len(e) and (e.min() < 0 or e.max() >= n):
        raise IndexError(f"edge endpoint out of range for n={n}")
    lo = np.minimum(e[:, 0], e[:, 1])
    hi = np.maximum(e[:, 0], e[:, 1])
    pairs = np.unique(np.stack([lo, hi], axis=1), axis=0)
    return pairs.reshape(-1, 2)


def adjacency(dataset: GraphDataset, self_loops: bool = False) -> SparseMatrix:
    """Binary symmetric adjacency, optionally with ``A + I``."""
    n = dataset.n_nodes
    e = dataset.edges
    off = e[:, 0] != e[:, 1]
    rows = np.concatenate([e[:, 0], e[off, 1]])
    cols = np.concatenate([e[:, 1], e[off, 0]])
    a = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n)).tocsr()
    a.sum_duplicates()
    a.data[:] = 1.0
    if self_loops:
        a = (a + sp.identity(n, format="csr")).tocsr()
        a.data[:] = 1.0
    return SparseMatrix.from_scipy(a)


def degrees(adj: SparseMatrix) -> np.ndarray:
    return np.asarray(adj.to_scipy().sum(axis=1)).ravel()


def normalized_laplacian(dataset: GraphDataset, self_loops: bool = False) -> SparseMatrix:
    """``L = I - D^{-1/2} A D^{-1/2}``.

    Degree-zero nodes keep ``L_ii = 1`` and an otherwise empty row.  With
    ``self_loops=True`` the adjacency is replaced by ``A + I`` first.
    """
    adj = adjacency(dataset, self_loops=self_loops).to_scipy()
    deg = np.asarray(adj.sum(axis=1)).ravel()
    inv_sqrt = np.zeros_like(deg)
    nz = deg > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(deg[nz])
    coo = adj.tocoo()
    # same expression for (i,j) and (j,i), so the result is exactly symmetric
    vals = -(inv_sqrt[coo.row] * coo.data * inv_sqrt[coo.col])
    n = dataset.n_nodes
    lap = sp.coo_matrix(
        (np.concatenate([vals, np.ones(n)]),
         (np.concatenate([coo.row, np.arange(n)]), np.concatenate([coo.col, np.arange(n)]))),
        shape=(n, n),
    ).tocsr()
    lap.sum_duplicates()
    return SparseMatrix.from_scipy(lap)


def propagation_operator(lap: SparseMatrix) -> SparseMatrix:
    """``S = I - L``; explicit zeros on the diagonal are kept in the pattern."""
    if lap.n_rows != lap.n_cols:
        raise ShapeError(f"propagation operator needs a square Laplacian, got {lap.shape}")
    n = lap.n_rows
    coo = lap.to_scipy().tocoo()
    # coo -> csr sums duplicates but, unlike csr arithmetic, keeps zeros
    s = sp.coo_matrix(
        (np.concatenate([-coo.data, np.ones(n)]),
         (np.concatenate([coo.row, np.arange(n)]), np.concatenate([coo.col, np.arange(n)]))),
        shape=(n, n),
    ).tocsr()
    s.sum_duplicates()
    s.sort_indices()
    return SparseMatrix(n, n, s.indptr, s.indices, s.data)


def spmm(mat: SparseMatrix, x) -> np.ndarray:
    """Sparse times dense."""
    x = np.asarray(x, dtype=np.float64)
    vec = x.ndim == 1
    if vec:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] != mat.n_cols:
        raise ShapeError(f"cannot multiply {mat.shape} by {x.shape}")
    out = mat.to_scipy() @ x
    out = np.asarray(out, dtype=np.float64)
    return out[:, 0] if vec else out
