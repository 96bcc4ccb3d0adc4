"""Smallest eigenpairs of a normalized Laplacian, and their on-disk cache.

The solver is a block Lanczos iteration with full reorthogonalization run on
the shifted operator ``2I - L``: the spectrum of ``L`` sits in ``[0, 2]``, so
the smallest eigenvalues of ``L`` become the largest, best separated ones of
the shift and no factorization is needed.

Converged Ritz pairs are locked and deflated; unconverged ones are kept
across restarts (thick restart).  A single Krylov sequence only ever sees
one direction per eigenspace, so once ``k`` pairs are locked the solver keeps
restarting from fresh random blocks until a restart turns up nothing below
the current ``k``-th eigenvalue.  That is what recovers repeated eigenvalues,
e.g. the zero eigenvalue of a graph with many connected components.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    ConvergenceError,
    FormatError,
    ParameterError,
    ShapeError,
    StaleCacheError,
)
from .graph import SparseMatrix

__all__ = ["EigenBasis", "partial_eigen", "save_eigen_cache", "load_eigen_cache", "check_basis"]

MAGIC = b"LLRA"
VERSION = 1
_HEADER = struct.Struct("<4sIQII")


@dataclass(frozen=True, eq=False)
class EigenBasis:
    """``k`` smallest eigenpairs, eigenvalues ascending, columns orthonormal."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    graph_hash: int = 0

    def __post_init__(self):
        vals = np.ascontiguousarray(self.eigenvalues, dtype=np.float64).reshape(-1)
        vecs = np.asarray(self.eigenvectors, dtype=np.float64)
        if vecs.ndim != 2 or vecs.shape[1] != len(vals):
            raise ShapeError(f"eigenvectors must be N x {len(vals)}, got {vecs.shape}")
        vals.setflags(write=False)
        vecs = np.array(vecs, copy=True)
        vecs.setflags(write=False)
        object.__setattr__(self, "eigenvalues", vals)
        object.__setattr__(self, "eigenvectors", vecs)
        object.__setattr__(self, "graph_hash", int(self.graph_hash) & 0xFFFFFFFFFFFFFFFF)

    @property
    def k(self) -> int:
        return len(self.eigenvalues)

    @property
    def n(self) -> int:
        return self.eigenvectors.shape[0]

    def truncate(self, k: int) -> "EigenBasis":
        return EigenBasis(self.eigenvalues[:k], self.eigenvectors[:, :k], self.graph_hash)


def _orthonormalize(block, bases, rng, limit, refill):
    """Orthonormalize the columns of ``block`` against ``bases`` and each other.

    Columns that collapse (already in the span) are dropped, or swapped for
    random directions when ``refill`` is set.  At most ``limit`` columns are
    returned.
    """
    n = block.shape[0]
    out = []
    tries = 0
    cols = [block[:, j].copy() for j in range(block.shape[1])]
    while cols and len(out) < limit:
        v = cols.pop(0)
        ref = np.linalg.norm(v)
        for _ in range(2):
            for b in bases:
                if b.shape[1]:
                    v -= b @ (b.T @ v)
            for u in out:
                v -= u * (u @ v)
        nv = np.linalg.norm(v)
        if ref > 0 and nv > 1e-10 * ref:
            out.append(v / nv)
        elif refill and tries < 4 * block.shape[1] + 8:
            tries += 1
            cols.append(rng.standard_normal(n))
    if not out:
        return np.zeros((n, 0))
    return np.stack(out, axis=1)


def _fix_signs(vecs: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


def partial_eigen(
    lap: SparseMatrix,
    k: int,
    tol: float = 1e-8,
    max_iter: int | None = None,
    seed: int = 0,
    graph_hash: int = 0,
    block_size: int | None = None,
) -> EigenBasis:
    """Compute the ``k`` smallest eigenpairs of the symmetric matrix ``lap``.

    Every returned pair satisfies ``||L u - lam u|| <= tol * max(1, lam)``.
    ``max_iter`` bounds the number of restarts (default ``10 * k``).  Raises
    :class:`ConvergenceError` carrying the worst residual when it runs out.
    """
    n = lap.n_rows
    if lap.n_cols != n:
        raise ShapeError("partial_eigen needs a square matrix")
    if k < 1 or k > n:
        raise ParameterError(f"k must lie in [1, n={n}], got {k}")
    max_iter = 10 * k if max_iter is None else int(max_iter)
    # accept at a tenth of the contract so the final check has headroom
    accept_tol = 0.1 * tol
    a = lap.to_scipy()
    rng = np.random.default_rng(seed)
    b = block_size or min(k, 8)
    basis_cap = max(2 * k + 2 * b, 20 + b)

    def shifted(x):
        return 2.0 * x - a @ x

    locked = np.zeros((n, 0))
    locked_vals = np.zeros(0)
    q = np.zeros((n, 0))
    w = np.zeros((n, 0))
    pending = None
    verifying = False
    worst = np.inf
    done = False

    for _ in range(max_iter):
        avail = n - locked.shape[1]
        if avail == 0:
            done = True
            break
        cap = min(basis_cap, avail)
        if q.shape[1] == 0 or pending is None:
            q = np.zeros((n, 0))
            w = np.zeros((n, 0))
            pending = rng.standard_normal((n, min(b, cap)))
        while q.shape[1] < cap:
            new = _orthonormalize(pending, [locked, q], rng, cap - q.shape[1], refill=True)
            if new.shape[1] == 0:
                break
            mnew = shifted(new)
            q = np.hstack([q, new])
            w = np.hstack([w, mnew])
            pending = mnew

        h = q.T @ w
        h = 0.5 * (h + h.T)
        theta, v = np.linalg.eigh(h)
        order = np.argsort(-theta, kind="stable")
        theta = theta[order]
        v = v[:, order]
        lam = 2.0 - theta
        y = q @ v
        my = w @ v
        resid = my - y * theta
        res = np.linalg.norm(resid, axis=0)
        ok = res <= accept_tol * np.maximum(1.0, np.abs(lam))

        n_conv = 0
        while n_conv < len(lam) and ok[n_conv]:
            n_conv += 1
        if locked.shape[1] >= k:
            kth = np.sort(locked_vals)[k - 1]
            # only pairs strictly below the current k-th eigenvalue matter now
            n_new = 0
            while n_new < n_conv and lam[n_new] < kth - tol:
                n_new += 1
            if n_conv > 0 and n_new == 0:
                done = True
                break
            n_conv = n_new
        if n_conv:
            locked = np.hstack([locked, y[:, :n_conv]])
            locked_vals = np.concatenate([locked_vals, lam[:n_conv]])
        want = k - locked.shape[1]
        if want <= 0 and not verifying:
            verifying = True
        if verifying and n_conv:
            # restart from scratch: a fresh random block may hold missed copies
            q = np.zeros((n, 0))
            pending = None
            continue
        n_keep = min(len(lam) - n_conv, max(want, 1) + b, max(cap // 2, 1))
        if n_keep <= 0:
            q = np.zeros((n, 0))
            pending = None
            continue
        keep = slice(n_conv, n_conv + n_keep)
        worst = float(res[n_conv]) if n_conv < len(res) else 0.0
        q = y[:, keep]
        w = my[:, keep]
        pending = resid[:, n_conv : n_conv + min(b, n_keep)]
        if np.linalg.norm(pending) == 0.0:
            pending = None

    if not done and locked.shape[1] < k:
        raise ConvergenceError(
            f"found {locked.shape[1]} of {k} eigenpairs after {max_iter} restarts", worst
        )
    if not done:
        raise ConvergenceError(
            f"could not confirm the {k} smallest eigenvalues after {max_iter} restarts", worst
        )

    # Rayleigh-Ritz on the locked span sorts the pairs and cleans up clusters
    idx = np.argsort(locked_vals, kind="stable")[:k]
    span = locked[:, idx]
    h = span.T @ (a @ span)
    h = 0.5 * (h + h.T)
    vals, rot = np.linalg.eigh(h)
    vecs = _fix_signs(span @ rot)
    basis = EigenBasis(vals, vecs, graph_hash)
    residuals = check_basis(lap, basis)
    bad = residuals > tol * np.maximum(1.0, np.abs(vals))
    if np.any(bad):
        raise ConvergenceError("final residual check failed", float(residuals.max()))
    return basis


def check_basis(lap: SparseMatrix, basis: EigenBasis) -> np.ndarray:
    """Per-pair residual norms ``||L u_i - lam_i u_i||``."""
    u = basis.eigenvectors
    r = lap.to_scipy() @ u - u * basis.eigenvalues
    return np.linalg.norm(r, axis=0)


def save_eigen_cache(basis: EigenBasis, path) -> None:
    n, k = basis.eigenvectors.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, basis.graph_hash, n, k))
        fh.write(basis.eigenvalues.astype("<f8").tobytes())
        fh.write(np.asarray(basis.eigenvectors, dtype="<f8").tobytes(order="F"))


def load_eigen_cache(path, expected_hash: int | None) -> EigenBasis:
    """Read a cache file; ``expected_hash=None`` skips the staleness check."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, ghash, n, k = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    expected_len = _HEADER.size + 8 * (k + n * k)
    if len(raw) != expected_len:
        raise FormatError(f"{path}: expected {expected_len} bytes, found {len(raw)}")
    if expected_hash is not None and ghash != (int(expected_hash) & 0xFFFFFFFFFFFFFFFF):
        raise StaleCacheError(
            f"{path}: cache built for graph {ghash:016x}, current graph is {int(expected_hash):016x}"
        )
    off = _HEADER.size
    vals = np.frombuffer(raw, dtype="<f8", count=k, offset=off).astype(np.float64)
    vecs = np.frombuffer(raw, dtype="<f8", count=n * k, offset=off + 8 * k)
    vecs = vecs.reshape((n, k), order="F").astype(np.float64)
    return EigenBasis(vals, vecs, ghash)
