"""Batch harness for the recovery experiments (success rates, residual/time tables).

Every trial draws its data from a source derived from ``(base_seed, protocol,
grid point, trial index)``, so aggregate results do not depend on execution
order or on how many worker processes run the trials. Within a trial all
algorithms start from the same ``(V, W0, H0)``.
"""

from __future__ import annotations

import dataclasses
import enum
import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .data import SyntheticSpec, gen_synthetic
from .dense import RandomSource
from .errors import InvalidSpec, SsmfError
from .model import DEFAULT_C, DEFAULT_DELTA1, DEFAULT_DELTA2, SsmfProblem, init_random_feasible
from .solvers import Algorithm, SolverConfig, diagnostic_gap_sum, monotone_violations, solve, trace_gaps


class Protocol(str, enum.Enum):
    EX1 = "ex1"
    EX2 = "ex2"
    EX3 = "ex3"
    MNIST = "mnist"


_PROTOCOL_CODE = {Protocol.EX1: 1, Protocol.EX2: 2, Protocol.EX3: 3, Protocol.MNIST: 4}
_GRID_NAME = {Protocol.EX1: "s", Protocol.EX2: "s", Protocol.EX3: "j", Protocol.MNIST: "s"}


@dataclass(frozen=True)
class ExperimentSpec:
    protocol: Protocol
    grid: tuple
    trials: int = 20
    tol: float = 1e-5
    max_iter: int = 4000
    algorithms: tuple = (Algorithm.PALM, Algorithm.ROWWISE)
    base_seed: int = 0
    success_threshold: float = 0.01
    m: int = 400
    n: int = 200
    r: int = 15
    ts: Optional[int] = None  # fixed true sparsity (Ex2, Ex3); Ex1 uses ts = s
    s: Optional[int] = None   # fixed prescribed sparsity (Ex3)
    delta1: float = DEFAULT_DELTA1
    delta2: float = DEFAULT_DELTA2
    c: float = DEFAULT_C
    workers: int = 1
    keep_traces: bool = False

    def __post_init__(self):
        object.__setattr__(self, "protocol", Protocol(self.protocol))
        object.__setattr__(self, "grid", tuple(int(g) for g in self.grid))
        object.__setattr__(self, "algorithms", tuple(Algorithm(a) for a in self.algorithms))
        if self.trials < 1:
            raise InvalidSpec("trials must be >= 1")
        if not self.grid:
            raise InvalidSpec("grid must not be empty")
        if not self.algorithms:
            raise InvalidSpec("at least one algorithm is required")

    def solver_config(self, algorithm) -> SolverConfig:
        return SolverConfig(algorithm=algorithm, tol=self.tol, max_iter=self.max_iter,
                            delta1=self.delta1, delta2=self.delta2, c=self.c)


def table1_spec(**kw) -> ExperimentSpec:
    kw.setdefault("grid", (10, 20, 30, 40, 50))
    return ExperimentSpec(Protocol.EX1, **kw)


def table2_spec(**kw) -> ExperimentSpec:
    kw.setdefault("grid", (30, 31, 32, 33, 34, 35))
    kw.setdefault("ts", 30)
    return ExperimentSpec(Protocol.EX2, **kw)


def table3_spec(**kw) -> ExperimentSpec:
    kw.setdefault("grid", (1, 2, 3, 4, 5))
    kw.setdefault("ts", 15)
    kw.setdefault("s", 20)
    kw.setdefault("max_iter", 6000)
    return ExperimentSpec(Protocol.EX3, **kw)


def mnist_spec(**kw) -> ExperimentSpec:
    kw.setdefault("grid", (50, 60))
    kw.setdefault("r", 196)
    kw.setdefault("tol", 1e-3)
    kw.setdefault("max_iter", 5000)
    kw.setdefault("trials", 1)
    return ExperimentSpec(Protocol.MNIST, **kw)


@dataclass
class TrialResult:
    algorithm: str
    grid: int
    trial: int
    rel_residual: float
    iterations: int
    stop_reason: str
    wall_time: float
    success: bool
    all_feasible: bool
    trace_digest: str
    error: Optional[str] = None
    # sum of squared iterate gaps and its bound (2 / min(delta1, delta2)) * F0
    gap_sum: float = 0.0
    gap_bound: float = 0.0
    monotone_violations: int = 0
    trace: Optional[list] = field(default=None, repr=False, compare=False)


@dataclass
class ReportRow:
    algorithm: str
    grid: int
    success_count: int
    trials: int
    success_rate: float
    mean_ct_s: float
    mean_res: float


@dataclass
class ExperimentReport:
    protocol: str
    grid_name: str
    rows: list
    trials: list = field(default_factory=list)

    def row(self, algorithm, grid) -> ReportRow:
        algorithm = Algorithm(algorithm).value
        for row in self.rows:
            if row.algorithm == algorithm and row.grid == grid:
                return row
        raise KeyError((algorithm, grid))

    def to_dict(self) -> dict:
        return {
            "protocol": self.protocol,
            "grid_name": self.grid_name,
            "rows": [dataclasses.asdict(r) for r in self.rows],
            "trials": [
                {k: v for k, v in dataclasses.asdict(t).items() if k != "trace"} for t in self.trials
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentReport":
        return cls(
            protocol=d["protocol"],
            grid_name=d["grid_name"],
            rows=[ReportRow(**r) for r in d["rows"]],
            trials=[TrialResult(**t) for t in d.get("trials", [])],
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentReport":
        return cls.from_dict(json.loads(text))

    def format_table(self) -> str:
        """Aligned text table: one line per grid point, probability and time per algorithm."""
        algorithms = []
        for row in self.rows:
            if row.algorithm not in algorithms:
                algorithms.append(row.algorithm)
        grids = sorted({row.grid for row in self.rows})
        by_key = {(row.algorithm, row.grid): row for row in self.rows}
        mnist = self.protocol == Protocol.MNIST.value
        head = [self.grid_name]
        for alg in algorithms:
            head += [f"{alg} res.", f"{alg} ct."] if mnist else [f"{alg} prob.", f"{alg} ct."]
        lines = [head]
        for g in grids:
            cells = [str(g)]
            for alg in algorithms:
                row = by_key.get((alg, g))
                if row is None:
                    cells += ["-", "-"]
                elif mnist:
                    cells += [f"{row.mean_res:.4f}", f"{row.mean_ct_s:.3f}"]
                else:
                    cells += [format_rate(row.success_rate), f"{row.mean_ct_s:.3f}"]
            lines.append(cells)
        widths = [max(len(line[i]) for line in lines) for i in range(len(head))]
        return "\n".join("  ".join(c.rjust(w) for c, w in zip(line, widths)) for line in lines) + "\n"


def format_rate(rate: float) -> str:
    return f"{100.0 * rate:.1f}%"


def trace_digest(trace) -> str:
    h = hashlib.sha256()
    for rec in trace:
        h.update(repr(rec.fingerprint()).encode())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# trial execution


def _sources(spec: ExperimentSpec, grid_value: int, trial: int):
    code = _PROTOCOL_CODE[spec.protocol]
    if spec.protocol is Protocol.EX2:
        # V is shared by the whole table, the start point varies per trial only
        return (RandomSource.derived(spec.base_seed, code, 0),
                RandomSource.derived(spec.base_seed, code, 1, trial))
    src = RandomSource.derived(spec.base_seed, code, grid_value, trial)
    return src, src


def _instance(spec: ExperimentSpec, grid_value: int, trial: int):
    data_src, init_src = _sources(spec, grid_value, trial)
    if spec.protocol is Protocol.EX1:
        syn = SyntheticSpec(spec.m, spec.n, spec.r, grid_value)
        s = grid_value
    elif spec.protocol is Protocol.EX2:
        syn = SyntheticSpec(spec.m, spec.n, spec.r, spec.ts)
        s = grid_value
    elif spec.protocol is Protocol.EX3:
        syn = SyntheticSpec(200 * grid_value, 100 * grid_value, spec.r, spec.ts)
        s = spec.s
    else:
        raise InvalidSpec(f"protocol {spec.protocol.value} has no synthetic instance")
    V = gen_synthetic(syn, data_src).V
    p = SsmfProblem(V, spec.r, s, spec.delta1, spec.delta2, spec.c)
    return p, init_random_feasible(p, init_src)


def _run_one(spec: ExperimentSpec, p: SsmfProblem, x0, algorithm, grid_value, trial) -> TrialResult:
    try:
        res = solve(p, x0, spec.solver_config(algorithm))
    except SsmfError as exc:
        return TrialResult(Algorithm(algorithm).value, grid_value, trial, float("nan"), 0, "error",
                           0.0, False, False, "", error=str(exc))
    return _trial_result(spec, p, res, algorithm, grid_value, trial)


def _trial_result(spec: ExperimentSpec, p: SsmfProblem, res, algorithm, grid_value, trial) -> TrialResult:
    gaps = diagnostic_gap_sum(trace_gaps(res.trace), res.trace[0].F_value, spec.delta1, spec.delta2)
    return TrialResult(
        algorithm=Algorithm(algorithm).value,
        grid=grid_value,
        trial=trial,
        rel_residual=res.rel_residual,
        iterations=res.iterations,
        stop_reason=res.stop_reason.value,
        wall_time=res.trace[-1].wall_time,
        success=bool(res.rel_residual < spec.success_threshold),
        all_feasible=all(rec.feasibility.ok(p.s) for rec in res.trace),
        trace_digest=trace_digest(res.trace),
        trace=res.trace if spec.keep_traces else None,
        gap_sum=gaps.lhs,
        gap_bound=gaps.rhs,
        monotone_violations=len(monotone_violations(res.trace, spec.delta1, spec.delta2)),
    )


def run_trial(spec: ExperimentSpec, grid_value: int, trial: int) -> list:
    """Every algorithm of ``spec`` on one freshly generated instance."""
    p, x0 = _instance(spec, grid_value, trial)
    return [_run_one(spec, p, x0, alg, grid_value, trial) for alg in spec.algorithms]


def _run_trial_args(args):
    return run_trial(*args)


def aggregate(spec: ExperimentSpec, results: list) -> ExperimentReport:
    results = sorted(results, key=lambda t: (spec.grid.index(t.grid), t.algorithm, t.trial))
    rows = []
    for g in spec.grid:
        for alg in spec.algorithms:
            sel = [t for t in results if t.grid == g and t.algorithm == alg.value]
            if not sel:
                continue
            ok = [t for t in sel if t.success]
            finite_res = [t.rel_residual for t in sel if np.isfinite(t.rel_residual)]
            rows.append(ReportRow(
                algorithm=alg.value,
                grid=g,
                success_count=len(ok),
                trials=len(sel),
                success_rate=len(ok) / len(sel),
                mean_ct_s=float(np.mean([t.wall_time for t in ok])) if ok else 0.0,
                mean_res=float(np.mean(finite_res)) if finite_res else float("inf"),
            ))
    return ExperimentReport(spec.protocol.value, _GRID_NAME[spec.protocol], rows, results)


def run_experiment(spec: ExperimentSpec) -> ExperimentReport:
    jobs = [(spec, g, t) for g in spec.grid for t in range(spec.trials)]
    workers = spec.workers if spec.workers > 0 else (os.cpu_count() or 1)
    results = []
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for batch in pool.map(_run_trial_args, jobs):
                results.extend(batch)
    else:
        for job in jobs:
            results.extend(run_trial(*job))
    return aggregate(spec, results)


def run_table1(spec: Optional[ExperimentSpec] = None) -> ExperimentReport:
    spec = spec or table1_spec()
    if spec.protocol is not Protocol.EX1:
        raise InvalidSpec("run_table1 needs protocol ex1")
    return run_experiment(spec)


def run_table2(spec: Optional[ExperimentSpec] = None) -> ExperimentReport:
    spec = spec or table2_spec()
    if spec.protocol is not Protocol.EX2 or spec.ts is None:
        raise InvalidSpec("run_table2 needs protocol ex2 with a true sparsity ts")
    return run_experiment(spec)


def run_table3(spec: Optional[ExperimentSpec] = None) -> ExperimentReport:
    spec = spec or table3_spec()
    if spec.protocol is not Protocol.EX3 or spec.ts is None or spec.s is None:
        raise InvalidSpec("run_table3 needs protocol ex3 with ts and s")
    return run_experiment(spec)


def run_mnist(spec: ExperimentSpec, V: np.ndarray) -> tuple[ExperimentReport, dict]:
    """Both algorithms on the image matrix for each sparsity level in the grid.

    Returns the report and a dict mapping ``(algorithm, s)`` to the trace of
    the first trial.
    """
    if spec.protocol is not Protocol.MNIST:
        raise InvalidSpec("run_mnist needs protocol mnist")
    code = _PROTOCOL_CODE[spec.protocol]
    results, traces = [], {}
    for s in spec.grid:
        p = SsmfProblem(V, spec.r, s, spec.delta1, spec.delta2, spec.c)
        for trial in range(spec.trials):
            x0 = init_random_feasible(p, RandomSource.derived(spec.base_seed, code, s, trial))
            for alg in spec.algorithms:
                res = solve(p, x0, spec.solver_config(alg))
                results.append(_trial_result(spec, p, res, alg, s, trial))
                if trial == 0:
                    traces[(alg.value, s)] = res.trace
    return aggregate(spec, results), traces


def emit_report(report: ExperimentReport, path) -> tuple[Path, Path]:
    """Write ``<path>`` as JSON and a sibling ``.txt`` with the aligned table."""
    path = Path(path)
    txt = path.with_suffix(".txt")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(report.to_json(), encoding="utf-8")
        txt.write_text(report.format_table(), encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write report to {path}: {exc}") from exc
    return path, txt
