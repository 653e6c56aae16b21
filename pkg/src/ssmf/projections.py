"""Euclidean projections onto the probability simplex and its sparse subsets.

All functions accept 1-D arrays; the ``*_rows`` variants project every row
of a 2-D array independently and are what the solvers use.

Ties in the sort are broken by original index (lowest first), so the
support chosen by :func:`project_sparse_simplex` is deterministic.
"""

from __future__ import annotations

import itertools
from functools import lru_cache
from math import comb

import numpy as np

from .errors import InvalidDimensions, InvalidInput, InvalidSparsity, InvalidSupport, OracleTooLarge

ORACLE_MAX_N = 20


def _check_vector(y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 1:
        raise InvalidDimensions(f"expected a vector, got shape {y.shape}")
    if y.size == 0:
        raise InvalidDimensions("cannot project an empty vector")
    if not np.all(np.isfinite(y)):
        raise InvalidInput("vector contains non-finite entries")
    return y


def _check_sparsity(s, n: int) -> int:
    if isinstance(s, bool) or int(s) != s or not 1 <= int(s) <= n:
        raise InvalidSparsity(f"sparsity level must satisfy 1 <= s <= {n}, got {s}")
    return int(s)


def project_sparse_simplex_rows(Y: np.ndarray, s: int) -> np.ndarray:
    """Row-wise projection onto {z >= 0, sum z = 1, ||z||_0 <= s}.

    For each row: sort descending, keep the ``s`` largest entries, find the
    largest j <= s with u_j - (u_1 + ... + u_j - 1)/j > 0, shift the kept
    entries by the resulting threshold and clip at zero.
    """
    Y = np.asarray(Y, dtype=np.float64)
    k, n = Y.shape
    order = np.argsort(-Y, axis=1, kind="stable")[:, :s]
    u = np.take_along_axis(Y, order, axis=1)
    cs = np.cumsum(u, axis=1)
    j = np.arange(1, s + 1, dtype=np.float64)
    cond = u - (cs - 1.0) / j > 0
    # j = 1 always passes, so rho >= 1
    rho = np.max(np.where(cond, np.arange(1, s + 1), 1), axis=1)
    beta = (cs[np.arange(k), rho - 1] - 1.0) / rho
    vals = np.maximum(u - beta[:, None], 0.0)
    vals /= vals.sum(axis=1, keepdims=True)
    Z = np.zeros_like(Y)
    np.put_along_axis(Z, order, vals, axis=1)
    return Z


def project_simplex_rows(Y: np.ndarray) -> np.ndarray:
    Y = np.asarray(Y, dtype=np.float64)
    return project_sparse_simplex_rows(Y, Y.shape[1])


def project_simplex(y) -> np.ndarray:
    y = _check_vector(y)
    return project_sparse_simplex_rows(y[None, :], y.size)[0]


def project_sparse_simplex(y, s: int) -> np.ndarray:
    y = _check_vector(y)
    s = _check_sparsity(s, y.size)
    return project_sparse_simplex_rows(y[None, :], s)[0]


def check_support(support, n: int) -> np.ndarray:
    """Validate a 0-based support set: strictly increasing indices in range."""
    idx = np.asarray(support)
    if idx.ndim != 1 or idx.size == 0 or not np.issubdtype(idx.dtype, np.integer):
        raise InvalidSupport(f"support must be a non-empty list of integer indices, got {support!r}")
    if idx[0] < 0 or idx[-1] >= n or np.any(np.diff(idx) <= 0):
        raise InvalidSupport(f"support must be strictly increasing indices in [0, {n}), got {idx.tolist()}")
    return idx


def project_masked_simplex(y, support) -> np.ndarray:
    """Projection onto vectors supported on ``support`` whose entries there lie on the simplex."""
    y = _check_vector(y)
    idx = check_support(support, y.size)
    z = np.zeros_like(y)
    z[idx] = project_simplex(y[idx])
    return z


def brute_force_sparse_projection(y, s: int) -> np.ndarray:
    """Reference solution by enumerating every support of size ``s``.

    Among minimizers the lexicographically smallest support wins. Only for
    tiny ``n``: cost is C(n, s) simplex projections.
    """
    y = _check_vector(y)
    n = y.size
    if n > ORACLE_MAX_N:
        raise OracleTooLarge(f"n={n} exceeds oracle limit {ORACLE_MAX_N} ({comb(n, s)} supports)")
    s = _check_sparsity(s, n)
    supports = _supports(n, s)
    ys = y[supports]
    zs = project_simplex_rows(ys)
    # distance to y: on-support part plus the mass of y dropped off the support
    dist = 0.5 * (np.sum((zs - ys) ** 2, axis=1) + float(y @ y) - np.sum(ys * ys, axis=1))
    k = int(np.argmin(dist))
    z = np.zeros_like(y)
    z[supports[k]] = zs[k]
    return z


@lru_cache(maxsize=None)
def _supports(n: int, s: int) -> np.ndarray:
    """All size-``s`` subsets of ``range(n)`` in lexicographic order, one per row."""
    return np.array(list(itertools.combinations(range(n), s)), dtype=np.intp).reshape(-1, s)
