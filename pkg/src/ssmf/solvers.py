"""Row-wise update algorithm and PALM baseline for sparse stochastic factorization.

Both solvers share the stopping rule

    ||W_k H_k - W_{k-1} H_{k-1}||_F / ||W_{k-1} H_{k-1}||_F <= tol

and record one :class:`IterRecord` per outer iteration (index 0 holds the
starting point). The row-wise solver updates W row by row with a
Barzilai-Borwein-like projected step guarded by a sufficient-decrease test
(falling back to the Lipschitz step), then sweeps the rows of H in order,
taking the exact row minimizer when it decreases enough and a proximal
gradient step otherwise.
"""

from __future__ import annotations

import csv
import enum
import math
import time
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .dense import spectral_norm_sym
from .errors import InvalidInput, NumericalBreakdown
from .model import (
    FactorPair,
    FeasibilityReport,
    SsmfProblem,
    check_feasibility,
    objective_f,
)
from .projections import (
    project_simplex,
    project_simplex_rows,
    project_sparse_simplex,
    project_sparse_simplex_rows,
)

# relative slack used in every sufficient-decrease comparison
DECREASE_SLACK = 1e-12
NOT_APPLICABLE_GAP = 1e-14


class Algorithm(str, enum.Enum):
    ROWWISE = "rowwise"
    PALM = "palm"


class StopReason(str, enum.Enum):
    TOLERANCE = "tolerance"
    MAX_ITER = "max_iter"


class WStep(enum.IntEnum):
    BB = 0
    LIPSCHITZ = 1


class HStep(enum.IntEnum):
    EXACT_AM = 0
    PROX_GRAD = 1
    SKIPPED_ZERO_COLUMN = 2


class Diagnostic(str, enum.Enum):
    SUFFICIENT_DECREASE = "sufficient_decrease"
    SUBGRADIENT_BOUND = "subgradient_bound"
    GAP_SUM = "gap_sum"


@dataclass(frozen=True)
class SolverConfig:
    """Run parameters. ``delta1``, ``delta2`` and ``c`` default to the problem's values."""

    algorithm: Algorithm = Algorithm.ROWWISE
    tol: float = 1e-5
    max_iter: int = 4000
    delta1: Optional[float] = None
    delta2: Optional[float] = None
    c: Optional[float] = None
    diagnostics: frozenset = frozenset()
    seed: int = 0
    # keep full iterates in the trace (memory heavy; for diagnostics and tests)
    keep_iterates: bool = False

    def __post_init__(self):
        object.__setattr__(self, "algorithm", Algorithm(self.algorithm))
        object.__setattr__(self, "diagnostics", frozenset(Diagnostic(d) for d in self.diagnostics))
        if not self.tol > 0:
            raise InvalidInput(f"tol must be positive, got {self.tol}")
        if self.max_iter < 1:
            raise InvalidInput(f"max_iter must be >= 1, got {self.max_iter}")
        for name in ("delta1", "delta2", "c"):
            val = getattr(self, name)
            if val is not None and not val > 0:
                raise InvalidInput(f"{name} must be positive, got {val}")

    def params(self, p: SsmfProblem) -> tuple[float, float, float]:
        return (
            p.delta1 if self.delta1 is None else self.delta1,
            p.delta2 if self.delta2 is None else self.delta2,
            p.c if self.c is None else self.c,
        )


@dataclass
class IterRecord:
    k: int
    F_value: float
    rel_change: float
    rel_residual: float
    wall_time: float
    feasibility: FeasibilityReport
    dW2: float = 0.0                      # ||W_k - W_{k-1}||_F^2
    dH2: float = 0.0                      # ||H_k - H_{k-1}||_F^2
    step_kind_w: Optional[np.ndarray] = None
    step_kind_h: Optional[np.ndarray] = None
    decrease_slack: Optional[float] = None
    subgrad_ratio: Optional[float] = None
    W: Optional[np.ndarray] = field(default=None, repr=False)
    H: Optional[np.ndarray] = field(default=None, repr=False)

    def fingerprint(self) -> tuple:
        """Every field except wall time, for bit-level trace comparison."""
        kinds = tuple(
            None if a is None else a.tobytes() for a in (self.step_kind_w, self.step_kind_h)
        )
        return (
            self.k, self.F_value, self.rel_change, self.rel_residual, self.feasibility,
            self.dW2, self.dH2, kinds, self.decrease_slack, self.subgrad_ratio,
        )


@dataclass
class SolveResult:
    final: FactorPair
    trace: list
    stop_reason: StopReason
    iterations: int

    @property
    def rel_residual(self) -> float:
        return self.trace[-1].rel_residual

    @property
    def F_value(self) -> float:
        return self.trace[-1].F_value


class WRowStep(NamedTuple):
    new_w: np.ndarray
    kind: WStep
    mu: float
    decrease: float
    threshold: float


class HRowStep(NamedTuple):
    new_h: np.ndarray
    kind: HStep
    alpha: float
    decrease: float
    threshold: float


def lipschitz_w(H: np.ndarray) -> float:
    """``||H H^T||_2`` by power iteration, or the bound ``||H||_1`` if it fails to converge."""
    est = spectral_norm_sym(H @ H.T)
    if est.converged:
        return est.value
    return float(np.max(np.abs(H).sum(axis=0)))


def _accept(decrease: float, threshold: float, base: float, moved: bool) -> bool:
    if not moved:
        return True
    return decrease - threshold >= DECREASE_SLACK * (1.0 + abs(base))


# ---------------------------------------------------------------------------
# single-row updates


def update_w_row(p: SsmfProblem, x: FactorPair, i: int, cfg: SolverConfig = SolverConfig(),
                 lipschitz: Optional[float] = None) -> WRowStep:
    """Proposed new value of W row ``i`` with H held fixed (x is not modified)."""
    delta1, _, c = cfg.params(p)
    H = x.H
    res = x.R[i]
    w = x.W[i]
    g = -(H @ res)
    gn2 = float(g @ g)
    if gn2 == 0.0:
        return WRowStep(w.copy(), WStep.BB, c, 0.0, 0.0)
    hg = g @ H
    hg2 = float(hg @ hg)
    mu = min(c, gn2 / hg2) if hg2 > 0 else c
    wbar = project_simplex(w - mu * g)
    d = w - wbar
    dh = d @ H
    # phi(w) - phi(wbar), expanded to avoid cancellation
    dec = -float(res @ dh) - 0.5 * float(dh @ dh)
    thr = 0.5 * delta1 * float(d @ d)
    if _accept(dec, thr, 0.5 * float(res @ res), bool(np.any(d))):
        return WRowStep(wbar, WStep.BB, mu, dec, thr)
    if lipschitz is None:
        lipschitz = lipschitz_w(H)
    mu = 1.0 / (lipschitz + delta1)
    wnew = project_simplex(w - mu * g)
    d = w - wnew
    dh = d @ H
    dec = -float(res @ dh) - 0.5 * float(dh @ dh)
    return WRowStep(wnew, WStep.LIPSCHITZ, mu, dec, 0.5 * delta1 * float(d @ d))


def exact_h_row(p: SsmfProblem, x: FactorPair, t: int) -> Optional[np.ndarray]:
    """Minimizer of the objective over H row ``t`` on the sparse simplex (None for a zero W column).

    With ``U_t = R + W[:, t] h_t^T`` the row objective is an isotropic quadratic
    centred at ``U_t^T w / ||w||^2``, so the minimizer is its sparse projection.
    """
    wt = x.W[:, t]
    nw2 = float(wt @ wt)
    if nw2 == 0.0:
        return None
    g = -(x.R.T @ wt)
    return project_sparse_simplex(x.H[t] - g / nw2, p.s)


def update_h_row(p: SsmfProblem, x: FactorPair, t: int, cfg: SolverConfig = SolverConfig(),
                 f_value: Optional[float] = None) -> HRowStep:
    """Proposed new value of H row ``t`` given the current (partially swept) iterate."""
    _, delta2, _ = cfg.params(p)
    wt = x.W[:, t]
    h = x.H[t]
    nw2 = float(wt @ wt)
    if nw2 == 0.0:
        return HRowStep(h.copy(), HStep.SKIPPED_ZERO_COLUMN, 1.0, 0.0, 0.0)
    g = -(x.R.T @ wt)
    hbar = exact_h_row(p, x, t)
    d = hbar - h
    dd = float(d @ d)
    dec = -float(g @ d) - 0.5 * nw2 * dd
    thr = 0.5 * delta2 * dd
    if f_value is None:
        f_value = 0.5 * float(np.sum(x.R * x.R))
    if _accept(dec, thr, f_value, dd > 0):
        return HRowStep(hbar, HStep.EXACT_AM, 1.0 / nw2, dec, thr)
    nu = 1.0 / (nw2 + delta2)
    hnew = project_sparse_simplex(h - nu * g, p.s)
    d = hnew - h
    dd = float(d @ d)
    dec = -float(g @ d) - 0.5 * nw2 * dd
    return HRowStep(hnew, HStep.PROX_GRAD, nu, dec, 0.5 * delta2 * dd)


# ---------------------------------------------------------------------------
# sweeps


class _SweepInfo(NamedTuple):
    kinds_w: np.ndarray
    kinds_h: np.ndarray
    mu: np.ndarray
    alpha: np.ndarray
    min_slack: float


def _w_sweep(p: SsmfProblem, x: FactorPair, delta1: float, c: float):
    """All W rows at once. Rows are independent at fixed H, so this equals m calls of update_w_row."""
    V, W, H, R = p.V, x.W, x.H, x.R
    m = W.shape[0]
    G = -(R @ H.T)
    gn2 = np.einsum("ij,ij->i", G, G)
    HG = G @ H
    hg2 = np.einsum("ij,ij->i", HG, HG)
    with np.errstate(divide="ignore", invalid="ignore"):
        mu = np.where(hg2 > 0, np.minimum(c, gn2 / np.where(hg2 > 0, hg2, 1.0)), c)
    moving = gn2 > 0
    Wbar = W.copy()
    if np.any(moving):
        Wbar[moving] = project_simplex_rows(W[moving] - mu[moving, None] * G[moving])
    D = W - Wbar
    DH = D @ H
    dec = -np.einsum("ij,ij->i", R, DH) - 0.5 * np.einsum("ij,ij->i", DH, DH)
    thr = 0.5 * delta1 * np.einsum("ij,ij->i", D, D)
    phi = 0.5 * np.einsum("ij,ij->i", R, R)
    moved = np.any(D != 0, axis=1)
    accept = ~moved | (dec - thr >= DECREASE_SLACK * (1.0 + phi))
    kinds = np.zeros(m, dtype=np.int8)
    Wnew = Wbar
    if not np.all(accept):
        rej = ~accept
        L = lipschitz_w(H)
        mu_l = 1.0 / (L + delta1)
        mu[rej] = mu_l
        Wnew[rej] = project_simplex_rows(W[rej] - mu_l * G[rej])
        kinds[rej] = WStep.LIPSCHITZ
        D = W - Wnew
        DH = D @ H
        dec = -np.einsum("ij,ij->i", R, DH) - 0.5 * np.einsum("ij,ij->i", DH, DH)
        thr = 0.5 * delta1 * np.einsum("ij,ij->i", D, D)
    slack = float(np.min(dec - thr)) if m else 0.0
    x.W = Wnew
    x.R = V - Wnew @ H
    return kinds, mu, slack


def _h_sweep(p: SsmfProblem, x: FactorPair, delta2: float):
    """Gauss-Seidel pass over the rows of H; each row sees the rows updated before it."""
    r = x.H.shape[0]
    s = p.s
    W, H, R = x.W, x.H, x.R
    kinds = np.zeros(r, dtype=np.int8)
    alpha = np.ones(r)
    min_slack = math.inf
    f_value = 0.5 * float(np.einsum("ij,ij->", R, R))
    col_norms = np.einsum("ij,ij->j", W, W)
    for t in range(r):
        nw2 = float(col_norms[t])
        if nw2 == 0.0:
            kinds[t] = HStep.SKIPPED_ZERO_COLUMN
            min_slack = min(min_slack, 0.0)
            continue
        wt = W[:, t]
        h = H[t]
        g = -(wt @ R)
        hbar = project_sparse_simplex_rows((h - g / nw2)[None, :], s)[0]
        d = hbar - h
        dd = float(d @ d)
        dec = -float(g @ d) - 0.5 * nw2 * dd
        thr = 0.5 * delta2 * dd
        if dd == 0.0 or dec - thr >= DECREASE_SLACK * (1.0 + f_value):
            alpha[t] = 1.0 / nw2
            new_h = hbar
        else:
            nu = 1.0 / (nw2 + delta2)
            new_h = project_sparse_simplex_rows((h - nu * g)[None, :], s)[0]
            kinds[t] = HStep.PROX_GRAD
            alpha[t] = nu
            d = new_h - h
            dd = float(d @ d)
            dec = -float(g @ d) - 0.5 * nw2 * dd
            thr = 0.5 * delta2 * dd
        min_slack = min(min_slack, dec - thr)
        cols = np.flatnonzero(d)
        if cols.size:
            R[:, cols] -= np.outer(wt, d[cols])
            H[t] = new_h
            f_value -= dec
    return kinds, alpha, min_slack


# ---------------------------------------------------------------------------
# drivers


def _record(p, x, k, rel_change, t0, cfg, **extra) -> IterRecord:
    F = objective_f(p, x)
    rec = IterRecord(
        k=k,
        F_value=F,
        rel_change=rel_change,
        rel_residual=math.sqrt(2.0 * F) / p.v_norm,
        wall_time=time.perf_counter() - t0,
        feasibility=check_feasibility(p, x),
        **extra,
    )
    if cfg.keep_iterates:
        rec.W = x.W.copy()
        rec.H = x.H.copy()
    return rec


def _check_init(p: SsmfProblem, init: FactorPair) -> None:
    if init.W.shape != (p.m, p.r) or init.H.shape != (p.r, p.n):
        raise InvalidInput(f"initial factors W{init.W.shape}, H{init.H.shape} do not match the problem")
    if not check_feasibility(p, init).ok(p.s):
        raise InvalidInput("initial factor pair is infeasible")


def _solve(p: SsmfProblem, init: FactorPair, cfg: SolverConfig, step) -> SolveResult:
    _check_init(p, init)
    x = FactorPair.from_factors(p.V, init.W, init.H)
    t0 = time.perf_counter()
    trace = [_record(p, x, 0, math.nan, t0, cfg)]
    v_norm2 = v_spectral_norm(p.V) if Diagnostic.SUBGRADIENT_BOUND in cfg.diagnostics else None
    stop = StopReason.MAX_ITER
    k = 0
    for k in range(1, cfg.max_iter + 1):
        W_prev, H_prev, R_prev = x.W.copy(), x.H.copy(), x.R.copy()
        extra = step(x)
        prod_prev = np.linalg.norm(p.V - R_prev)
        diff = np.linalg.norm(R_prev - x.R)
        rel_change = float(diff / prod_prev) if prod_prev > 0 else (0.0 if diff == 0 else math.inf)
        dW2 = float(np.sum((x.W - W_prev) ** 2))
        dH2 = float(np.sum((x.H - H_prev) ** 2))
        if Diagnostic.SUBGRADIENT_BOUND in cfg.diagnostics and "mu" in extra:
            extra["subgrad_ratio"] = diagnostic_subgradient_bound(
                p, FactorPair(W_prev, H_prev, R_prev), x, StepSizes(extra["mu"], extra["alpha"]),
                delta1=cfg.params(p)[0], delta2=cfg.params(p)[1], v_norm2=v_norm2,
            )
        extra.pop("mu", None)
        extra.pop("alpha", None)
        if Diagnostic.SUFFICIENT_DECREASE not in cfg.diagnostics:
            extra.pop("decrease_slack", None)
        rec = _record(p, x, k, rel_change, t0, cfg, dW2=dW2, dH2=dH2, **extra)
        trace.append(rec)
        if not math.isfinite(rec.F_value):
            raise NumericalBreakdown(f"non-finite objective at iteration {k}", trace)
        if rel_change <= cfg.tol:
            stop = StopReason.TOLERANCE
            break
    return SolveResult(final=x, trace=trace, stop_reason=stop, iterations=k)


def solve_rowwise(p: SsmfProblem, init: FactorPair, cfg: SolverConfig = SolverConfig()) -> SolveResult:
    delta1, delta2, c = cfg.params(p)

    def step(x):
        kinds_w, mu, slack_w = _w_sweep(p, x, delta1, c)
        kinds_h, alpha, slack_h = _h_sweep(p, x, delta2)
        return dict(step_kind_w=kinds_w, step_kind_h=kinds_h, mu=mu, alpha=alpha,
                    decrease_slack=min(slack_w, slack_h))

    return _solve(p, init, cfg, step)


def solve_palm(p: SsmfProblem, init: FactorPair, cfg: SolverConfig = SolverConfig()) -> SolveResult:
    delta1, delta2, _ = cfg.params(p)
    V = p.V

    def step(x):
        W, H = x.W, x.H
        f0 = 0.5 * float(np.einsum("ij,ij->", x.R, x.R))
        mu = 1.0 / (float(np.sum(H * H)) + delta1)
        W_new = project_simplex_rows(W + mu * (x.R @ H.T))
        R_mid = V - W_new @ H
        f1 = 0.5 * float(np.einsum("ij,ij->", R_mid, R_mid))
        nu = 1.0 / (float(np.sum(W_new * W_new)) + delta2)
        H_new = project_sparse_simplex_rows(H + nu * (W_new.T @ R_mid), p.s)
        x.W, x.H = W_new, H_new
        x.R = V - W_new @ H_new
        f2 = 0.5 * float(np.einsum("ij,ij->", x.R, x.R))
        slack = min(
            f0 - f1 - 0.5 * delta1 * float(np.sum((W_new - W) ** 2)),
            f1 - f2 - 0.5 * delta2 * float(np.sum((H_new - H) ** 2)),
        )
        return dict(decrease_slack=slack)

    return _solve(p, init, cfg, step)


def solve(p: SsmfProblem, init: FactorPair, cfg: SolverConfig = SolverConfig()) -> SolveResult:
    if cfg.algorithm is Algorithm.PALM:
        return solve_palm(p, init, cfg)
    return solve_rowwise(p, init, cfg)


# ---------------------------------------------------------------------------
# convergence diagnostics


class StepSizes(NamedTuple):
    mu: np.ndarray      # W-row step sizes of the iteration
    alpha: np.ndarray   # H-row step sizes: 1 (zero column), 1/||W_t||^2 (exact), nu (prox)


def v_spectral_norm(V: np.ndarray) -> float:
    m, n = V.shape
    gram = V @ V.T if m <= n else V.T @ V
    est = spectral_norm_sym(gram, tol=1e-12, max_iter=5000)
    return math.sqrt(est.value)


def subgradient_constant(m: int, r: int, v_norm2: float, delta1: float, delta2: float) -> float:
    """The constant bounding ||(A, B)||_F^2 / ||iterate gap||_F^2."""
    return max(
        2.0 * (delta1 + 2.0 * r) ** 2,
        2.0 * (v_norm2 + 2.0 * math.sqrt(m * r)) ** 2 + (2.0 * m + delta2) ** 2 * r * (r + 1) / 2.0,
    )


def subgradient_elements(p: SsmfProblem, x_prev: FactorPair, x_next: FactorPair,
                         steps: StepSizes) -> tuple[np.ndarray, np.ndarray]:
    """The pair (A, B) in the limiting subdifferential at the new iterate, rebuilt from scratch."""
    V = p.V
    Wp, Hp = x_prev.W, x_prev.H
    Wn, Hn = x_next.W, x_next.H
    R_prev = V - Wp @ Hp
    R_next = V - Wn @ Hn
    A = -(R_next @ Hn.T) + (R_prev @ Hp.T) - (Wn - Wp) / np.asarray(steps.mu)[:, None]
    grad_h_next = -(Wn.T @ R_next)
    B = np.empty_like(Hn)
    R_mix = V - Wn @ Hp
    for t in range(Hn.shape[0]):
        g_mix = -(Wn[:, t] @ R_mix)
        dh = Hn[t] - Hp[t]
        B[t] = grad_h_next[t] - g_mix - dh / steps.alpha[t]
        R_mix -= np.outer(Wn[:, t], dh)
    return A, B


def diagnostic_subgradient_bound(p: SsmfProblem, x_prev: FactorPair, x_next: FactorPair,
                                 steps: StepSizes, delta1: Optional[float] = None,
                                 delta2: Optional[float] = None,
                                 v_norm2: Optional[float] = None) -> Optional[float]:
    """``||(A, B)||_F / (sqrt(const) * ||gap||_F)``; should never exceed 1.

    Returns ``None`` when the iterate gap is below 1e-14 (ratio undefined).
    """
    delta1 = p.delta1 if delta1 is None else delta1
    delta2 = p.delta2 if delta2 is None else delta2
    gap = math.sqrt(float(np.sum((x_next.W - x_prev.W) ** 2) + np.sum((x_next.H - x_prev.H) ** 2)))
    if gap <= NOT_APPLICABLE_GAP:
        return None
    if v_norm2 is None:
        v_norm2 = v_spectral_norm(p.V)
    A, B = subgradient_elements(p, x_prev, x_next, steps)
    const = subgradient_constant(p.m, p.r, v_norm2, delta1, delta2)
    return math.sqrt(float(np.sum(A * A) + np.sum(B * B))) / (math.sqrt(const) * gap)


class GapSum(NamedTuple):
    lhs: float
    rhs: float
    rhs_tight: float


def diagnostic_gap_sum(gaps, F0: float, delta1: float, delta2: float,
                       F_final: Optional[float] = None) -> GapSum:
    """Sum of squared iterate gaps against ``(2/min(delta1, delta2)) * F0``.

    ``gaps`` are squared gaps ``||(W_{k+1}, H_{k+1}) - (W_k, H_k)||_F^2``.
    ``rhs_tight`` uses ``F0 - F_final`` instead of ``F0`` when given.
    """
    lhs = float(np.sum(np.asarray(list(gaps), dtype=np.float64)))
    scale = 2.0 / min(delta1, delta2)
    rhs = scale * F0
    tight = rhs if F_final is None else scale * (F0 - F_final)
    return GapSum(lhs, rhs, tight)


def trace_gaps(trace) -> list:
    return [rec.dW2 + rec.dH2 for rec in trace[1:]]


def monotone_violations(trace, delta1: float, delta2: float, rel_slack: float = 1e-12) -> list:
    """Iterations where ``F_k - F_{k+1} < (d1/2)||dW||^2 + (d2/2)||dH||^2 - slack``."""
    F0 = trace[0].F_value
    out = []
    for prev, cur in zip(trace, trace[1:]):
        need = 0.5 * delta1 * cur.dW2 + 0.5 * delta2 * cur.dH2 - rel_slack * (1.0 + F0)
        if prev.F_value - cur.F_value < need:
            out.append(cur.k)
    return out


# ---------------------------------------------------------------------------
# trace export

TRACE_COLUMNS = ("k", "F", "rel_change", "rel_residual", "wall_time")


def write_trace_csv(path, trace) -> None:
    """One row per record. Diagnostic columns appear only when some record carries them."""
    extra = [name for name in ("decrease_slack", "subgrad_ratio")
             if any(getattr(rec, name) is not None for rec in trace)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_COLUMNS + tuple(extra))
        for rec in trace:
            row = [rec.k, repr(rec.F_value), repr(rec.rel_change), repr(rec.rel_residual),
                   f"{rec.wall_time:.6f}"]
            for name in extra:
                val = getattr(rec, name)
                row.append("" if val is None else repr(val))
            writer.writerow(row)
