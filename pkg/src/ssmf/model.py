"""Problem instance, factor pair with cached residual, objective and gradients.

The residual ``R = V - W H`` is kept up to date by the row-update helpers and
is the single source for the objective, both partial gradients and the
"leave-one-row-out" matrix ``U_t = R + W[:, t] h_t^T``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dense import RandomSource, as_matrix
from .errors import InvalidDimensions, InvalidIndex, InvalidInput, InvalidSparsity
from .projections import project_simplex_rows, project_sparse_simplex_rows

DEFAULT_DELTA1 = 1e-5
DEFAULT_DELTA2 = 1e-6
DEFAULT_C = 10.0

ROW_SUM_TOL = 1e-12       # simplex membership of W and H rows
INPUT_ROW_SUM_TOL = 1e-9  # V rows accepted as-is
RENORMALIZE_TOL = 1e-6    # V rows rescaled when off by at most this much
UPDATE_ROW_SUM_TOL = 1e-9 # rows handed to apply_*_row_update


def normalize_stochastic(V, exact_tol=INPUT_ROW_SUM_TOL, renorm_tol=RENORMALIZE_TOL) -> np.ndarray:
    """Validate that ``V`` is row-stochastic, rescaling rows with small rounding error."""
    V = as_matrix(V, name="V")
    if np.any(V < 0):
        i, j = np.argwhere(V < 0)[0]
        raise InvalidInput(f"V is not row-stochastic: entry ({i}, {j}) = {float(V[i, j])!r} is negative")
    sums = V.sum(axis=1)
    err = np.abs(sums - 1.0)
    bad = np.flatnonzero(err > renorm_tol)
    if bad.size:
        i = bad[0]
        raise InvalidInput(
            f"V is not row-stochastic: row {i} sums to {float(sums[i])!r} "
            f"(|sum - 1| = {err[i]:.3g} exceeds {renorm_tol:g}; {bad.size} bad rows)"
        )
    fix = err > exact_tol
    if np.any(fix):
        V = V.copy()
        V[fix] /= sums[fix, None]
    return V


@dataclass(frozen=True, eq=False)
class SsmfProblem:
    """Factor ``V`` (m x n, row-stochastic) as ``W H`` with rank ``r`` and row sparsity ``s``."""

    V: np.ndarray
    r: int
    s: int
    delta1: float = DEFAULT_DELTA1
    delta2: float = DEFAULT_DELTA2
    c: float = DEFAULT_C
    check_rank: bool = True

    def __post_init__(self):
        V = normalize_stochastic(self.V)
        V.setflags(write=False)
        object.__setattr__(self, "V", V)
        m, n = V.shape
        if self.r < 1 or (self.check_rank and self.r >= min(m, n)):
            raise InvalidDimensions(f"rank r={self.r} must satisfy 1 <= r < min(m, n) = {min(m, n)}")
        if not 1 <= self.s <= n:
            raise InvalidSparsity(f"sparsity s={self.s} must satisfy 1 <= s <= n = {n}")
        for name in ("delta1", "delta2", "c"):
            val = getattr(self, name)
            if not (val > 0 and math.isfinite(val)):
                raise InvalidInput(f"{name} must be positive, got {val!r}")

    @property
    def m(self) -> int:
        return self.V.shape[0]

    @property
    def n(self) -> int:
        return self.V.shape[1]

    @property
    def v_norm(self) -> float:
        return float(np.linalg.norm(self.V))


class FactorPair:
    """Current iterate ``(W, H)`` together with the residual ``R = V - W H``."""

    __slots__ = ("W", "H", "R")

    def __init__(self, W: np.ndarray, H: np.ndarray, R: np.ndarray):
        self.W = W
        self.H = H
        self.R = R

    @classmethod
    def from_factors(cls, V, W, H) -> "FactorPair":
        V = np.asarray(V, dtype=np.float64)
        W = np.array(W, dtype=np.float64)
        H = np.array(H, dtype=np.float64)
        if W.ndim != 2 or H.ndim != 2 or W.shape[1] != H.shape[0] or (W.shape[0], H.shape[1]) != V.shape:
            raise InvalidDimensions(f"W {W.shape} and H {H.shape} do not factor V {V.shape}")
        return cls(W, H, V - W @ H)

    def copy(self) -> "FactorPair":
        return FactorPair(self.W.copy(), self.H.copy(), self.R.copy())

    def product(self, V) -> np.ndarray:
        """``W H`` recovered from the cached residual."""
        return V - self.R

    def refresh(self, V) -> None:
        """Rebuild the residual from scratch, discarding accumulated drift."""
        self.R = V - self.W @ self.H


@dataclass(frozen=True)
class FeasibilityReport:
    max_row_sum_err: float
    min_entry: float
    max_l0: int

    def ok(self, s: int, tol: float = ROW_SUM_TOL) -> bool:
        return self.max_row_sum_err <= tol and self.min_entry >= 0.0 and self.max_l0 <= s


def _check_dims(p: SsmfProblem, x: FactorPair) -> None:
    if x.W.shape != (p.m, p.r) or x.H.shape != (p.r, p.n) or x.R.shape != (p.m, p.n):
        raise InvalidDimensions(
            f"factor pair W{x.W.shape} H{x.H.shape} R{x.R.shape} inconsistent with "
            f"problem m={p.m}, n={p.n}, r={p.r}"
        )


def objective_f(p: SsmfProblem, x: FactorPair) -> float:
    """Half the squared Frobenius norm of the cached residual."""
    _check_dims(p, x)
    return 0.5 * float(np.sum(x.R * x.R))


def check_feasibility(p: SsmfProblem, x: FactorPair) -> FeasibilityReport:
    W, H = x.W, x.H
    row_err = max(float(np.max(np.abs(W.sum(axis=1) - 1.0))), float(np.max(np.abs(H.sum(axis=1) - 1.0))))
    min_entry = min(float(W.min()), float(H.min()))
    max_l0 = int(np.max(np.count_nonzero(H, axis=1)))
    return FeasibilityReport(row_err, min_entry, max_l0)


def extended_objective_F(p: SsmfProblem, x: FactorPair) -> float:
    """Objective plus indicator terms: ``inf`` when (W, H) leaves the feasible set."""
    if not check_feasibility(p, x).ok(p.s):
        return math.inf
    return objective_f(p, x)


def _row_index(i, bound: int, what: str) -> int:
    if isinstance(i, bool) or not 0 <= int(i) < bound:
        raise InvalidIndex(f"{what} index {i} out of range [0, {bound})")
    return int(i)


def grad_w_row(p: SsmfProblem, x: FactorPair, i: int) -> np.ndarray:
    """Gradient of f in row ``i`` of W, ``H (H^T w_i - v_i) = -H R_i^T``."""
    _check_dims(p, x)
    i = _row_index(i, p.m, "W row")
    return -(x.H @ x.R[i])


def grad_h_row(p: SsmfProblem, x: FactorPair, t: int) -> np.ndarray:
    """Gradient of f in row ``t`` of H, ``-(U_t^T - h_t W_t^T) W_t = -R^T W_t``."""
    _check_dims(p, x)
    t = _row_index(t, p.r, "H row")
    return -(x.R.T @ x.W[:, t])


def phi_row(p: SsmfProblem, x: FactorPair, i: int, w) -> float:
    """Objective as a function of W row ``i`` alone (other rows and H fixed)."""
    i = _row_index(i, p.m, "W row")
    res = x.R[i] + (x.W[i] - np.asarray(w)) @ x.H
    return 0.5 * float(res @ res)


def psi_row(p: SsmfProblem, x: FactorPair, t: int, h) -> float:
    """Objective as a function of H row ``t`` alone (W and other rows fixed)."""
    t = _row_index(t, p.r, "H row")
    res = x.R + np.outer(x.W[:, t], x.H[t] - np.asarray(h))
    return 0.5 * float(np.sum(res * res))


def _check_simplex_row(v, length: int, what: str) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (length,):
        raise InvalidInput(f"{what} must have length {length}, got shape {v.shape}")
    if not np.all(np.isfinite(v)) or np.any(v < 0) or abs(v.sum() - 1.0) > UPDATE_ROW_SUM_TOL:
        raise InvalidInput(f"{what} is not on the probability simplex")
    return v


def apply_w_row_update(x: FactorPair, i: int, new_w) -> None:
    m, r = x.W.shape
    i = _row_index(i, m, "W row")
    new_w = _check_simplex_row(new_w, r, "new W row")
    delta = x.W[i] - new_w
    if np.any(delta):
        x.R[i] += delta @ x.H
        x.W[i] = new_w


def apply_h_row_update(x: FactorPair, t: int, new_h, s: int | None = None) -> None:
    r, n = x.H.shape
    t = _row_index(t, r, "H row")
    new_h = _check_simplex_row(new_h, n, "new H row")
    if s is not None and np.count_nonzero(new_h) > s:
        raise InvalidInput(f"new H row has {np.count_nonzero(new_h)} nonzeros, more than s={s}")
    delta = x.H[t] - new_h
    cols = np.flatnonzero(delta)
    if cols.size:
        x.R[:, cols] += np.outer(x.W[:, t], delta[cols])
        x.H[t] = new_h


def init_random_feasible(p: SsmfProblem, src: RandomSource) -> FactorPair:
    """Random starting point: projected uniform rows for W, sparse-projected rows for H."""
    W = project_simplex_rows(src.uniform(p.m, p.r))
    H = project_sparse_simplex_rows(src.uniform(p.r, p.n), p.s)
    return FactorPair.from_factors(p.V, W, H)


def residual_drift(p: SsmfProblem, x: FactorPair) -> float:
    """``||R - (V - W H)||_F``, the error accumulated by incremental updates."""
    return float(np.linalg.norm(x.R - (p.V - x.W @ x.H)))
