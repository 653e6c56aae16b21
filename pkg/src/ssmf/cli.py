"""Command-line entry point: ``ssmf <subcommand> [options]``.

Settings are resolved as command-line flag, then ``--config`` file
(``key = value`` lines, ``#`` comments), then built-in default.

Exit status: 0 on success, 1 on usage or data errors, 2 when ``solve``
stops at the iteration limit without meeting the tolerance.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .data import MNIST_HELP, SyntheticSpec, build_mnist_matrix, gen_synthetic, load_mnist
from .dense import RandomSource, read_csv_matrix, read_matrix, write_csv_matrix
from .errors import SsmfError
from .experiments import (
    emit_report,
    mnist_spec,
    run_mnist,
    run_table1,
    run_table2,
    run_table3,
    table1_spec,
    table2_spec,
    table3_spec,
)
from .model import DEFAULT_C, DEFAULT_DELTA1, DEFAULT_DELTA2, SsmfProblem, init_random_feasible
from .projections import project_sparse_simplex_rows
from .solvers import Algorithm, SolverConfig, StopReason, solve, write_trace_csv

log = logging.getLogger("ssmf")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_MAX_ITER = 2

# built-in defaults; commands that need a different tol / max_iter set them below
DEFAULTS = {
    "algorithm": "rowwise",
    "r": None,
    "s": None,
    "tol": 1e-5,
    "max_iter": 4000,
    "delta1": DEFAULT_DELTA1,
    "delta2": DEFAULT_DELTA2,
    "c": DEFAULT_C,
    "seed": 0,
    "trials": 20,
    "threads": 0,
    "m": 400,
    "n": 200,
    "ts": None,
    "grid": None,
    "mnist_dir": None,
    "input": None,
    "output": None,
    "out_dir": ".",
    "verbose": False,
}
COMMAND_DEFAULTS = {
    "synth": {"r": 15, "ts": 30},
    "table3": {"max_iter": 6000},
    "mnist": {"tol": 1e-3, "max_iter": 5000, "r": 196, "trials": 1},
}
_TYPES = {
    "algorithm": str, "r": int, "s": int, "tol": float, "max_iter": int, "delta1": float,
    "delta2": float, "c": float, "seed": int, "trials": int, "threads": int, "m": int,
    "n": int, "ts": int, "grid": str, "mnist_dir": str, "input": str, "output": str,
    "out_dir": str, "verbose": lambda v: str(v).lower() in ("1", "true", "yes", "on"),
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# argument parsing


def _add_common(p: argparse.ArgumentParser) -> None:
    S = argparse.SUPPRESS
    p.add_argument("--config", metavar="FILE", default=S,
                   help="key=value file; its settings sit between the flags and the defaults")
    p.add_argument("--seed", type=int, default=S, help="base random seed (default 0)")
    p.add_argument("--threads", type=int, default=S,
                   help="worker processes for independent trials, 0 = one per CPU (default 0)")
    p.add_argument("-v", "--verbose", action="store_true", default=S, help="log progress to stderr")


def _add_solver(p: argparse.ArgumentParser, tol="1e-5", max_iter="4000") -> None:
    S = argparse.SUPPRESS
    p.add_argument("--tol", type=float, default=S,
                   help=f"stop when the relative change of W H drops to this (default {tol}, "
                        "the setting of the synthetic recovery experiments)")
    p.add_argument("--max-iter", dest="max_iter", type=int, default=S,
                   help=f"iteration limit (default {max_iter}, the synthetic experiment setting)")
    p.add_argument("--delta1", type=float, default=S,
                   help=f"W proximal weight (default {DEFAULT_DELTA1:g}, the published experiment value)")
    p.add_argument("--delta2", type=float, default=S,
                   help=f"H proximal weight (default {DEFAULT_DELTA2:g}, the published experiment value)")
    p.add_argument("--c", type=float, default=S,
                   help=f"cap on the trial W step (default {DEFAULT_C:g}, the published experiment value)")


def _add_table(p: argparse.ArgumentParser, grid_help: str) -> None:
    S = argparse.SUPPRESS
    p.add_argument("--grid", default=S, help=grid_help)
    p.add_argument("--trials", type=int, default=S,
                   help="random trials per grid point (default 20; the original study used 100)")
    p.add_argument("-o", "--output", default=S, help="report JSON path; a .txt table is written next to it")


def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    parser = _Parser(prog="ssmf", description="Sparse stochastic matrix factorization V ~ W H.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("solve", help="factor a row-stochastic matrix")
    p.add_argument("-i", "--input", default=S, help="V as CSV or SSMF binary")
    p.add_argument("--r", type=int, default=S, help="inner rank (required)")
    p.add_argument("--s", type=int, default=S, help="max nonzeros per row of H (required)")
    p.add_argument("--algorithm", choices=[a.value for a in Algorithm], default=S,
                   help="rowwise (default) or palm")
    p.add_argument("--out-dir", dest="out_dir", default=S,
                   help="directory for W.csv, H.csv, trace.csv, summary.json (default .)")
    _add_solver(p)
    _add_common(p)

    p = sub.add_parser("synth", help="generate a planted instance V = W H")
    p.add_argument("--m", type=int, default=S, help="rows of V (default 400)")
    p.add_argument("--n", type=int, default=S, help="columns of V (default 200)")
    p.add_argument("--r", type=int, default=S, help="inner rank (default 15)")
    p.add_argument("--ts", type=int, default=S, help="support size of each planted H row (default 30)")
    p.add_argument("--out-dir", dest="out_dir", default=S,
                   help="directory for V.csv, W_true.csv, H_true.csv (default .)")
    _add_common(p)

    p = sub.add_parser("table1", help="success rates, fresh instance per trial, s = ts")
    _add_table(p, "comma-separated sparsity levels (default 10,20,30,40,50)")
    _add_solver(p)
    _add_common(p)

    p = sub.add_parser("table2", help="success rates, one fixed instance (ts=30), varying s")
    _add_table(p, "comma-separated sparsity levels (default 30,...,35)")
    p.add_argument("--ts", type=int, default=S, help="planted support size (default 30)")
    _add_solver(p)
    _add_common(p)

    p = sub.add_parser("table3", help="success rates for growing sizes 200j x 100j (ts=15, s=20)")
    _add_table(p, "comma-separated size multipliers j (default 1,2,3,4,5)")
    _add_solver(p, max_iter="6000")
    _add_common(p)

    p = sub.add_parser("mnist", help="factor 800 images of the digit 3")
    p.add_argument("--mnist-dir", dest="mnist_dir", default=S,
                   help="directory holding train-images-idx3-ubyte[.gz] and train-labels-idx1-ubyte[.gz]")
    p.add_argument("--grid", default=S, help="comma-separated sparsity levels (default 50,60)")
    p.add_argument("--r", type=int, default=S, help="inner rank (default 196)")
    p.add_argument("--trials", type=int, default=S, help="random starts per level (default 1)")
    p.add_argument("--out-dir", dest="out_dir", default=S,
                   help="directory for mnist.json, mnist.txt and trace CSVs (default .)")
    _add_solver(p, tol="1e-3", max_iter="5000")
    _add_common(p)

    p = sub.add_parser("project", help="project vectors onto the s-sparse simplex")
    p.add_argument("-i", "--input", default=S, help="CSV with one vector per row (or a single column)")
    p.add_argument("--s", type=int, default=S, help="sparsity level (default: vector length)")
    p.add_argument("-o", "--output", default=S, help="output CSV (default stdout)")
    _add_common(p)
    return parser


def read_config(path) -> dict:
    """Parse a ``key = value`` file into typed settings."""
    out = {}
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror or exc}") from None
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _TYPES:
            raise UsageError(f"{path}:{lineno}: unknown setting {key!r}")
        try:
            out[key] = _TYPES[key](value)
        except ValueError:
            raise UsageError(f"{path}:{lineno}: bad value {value!r} for {key}") from None
    return out


def resolve(args: argparse.Namespace) -> dict:
    flags = vars(args).copy()
    command = flags.pop("command")
    cfg = dict(DEFAULTS)
    cfg.update(COMMAND_DEFAULTS.get(command, {}))
    config_path = flags.pop("config", None)
    if config_path is not None:
        cfg.update(read_config(config_path))
    cfg.update(flags)
    cfg["command"] = command
    return cfg


def _grid(cfg: dict):
    if cfg["grid"] is None:
        return None
    try:
        return tuple(int(tok) for tok in str(cfg["grid"]).split(",") if tok.strip())
    except ValueError:
        raise UsageError(f"--grid must be comma-separated integers, got {cfg['grid']!r}") from None


def _workers(cfg: dict) -> int:
    threads = cfg["threads"]
    if threads < 0:
        raise UsageError("--threads must be >= 0")
    return threads if threads > 0 else (os.cpu_count() or 1)


def _require(cfg: dict, *keys) -> None:
    for key in keys:
        if cfg.get(key) is None:
            raise UsageError(f"--{key.replace('_', '-')} is required for {cfg['command']}")


def _solver_config(cfg: dict) -> SolverConfig:
    return SolverConfig(algorithm=cfg["algorithm"], tol=cfg["tol"], max_iter=cfg["max_iter"],
                        delta1=cfg["delta1"], delta2=cfg["delta2"], c=cfg["c"], seed=cfg["seed"])


# ---------------------------------------------------------------------------
# commands


def cmd_solve(cfg: dict) -> int:
    _require(cfg, "input", "r", "s")
    V = read_matrix(cfg["input"])
    try:
        p = SsmfProblem(V, cfg["r"], cfg["s"], cfg["delta1"], cfg["delta2"], cfg["c"])
    except SsmfError as exc:
        raise SsmfError(f"{cfg['input']}: {exc}") from None
    x0 = init_random_feasible(p, RandomSource(cfg["seed"]))
    res = solve(p, x0, _solver_config(cfg))
    if cfg["verbose"]:
        for rec in res.trace:
            log.info("k=%d F=%.6e rel_change=%.3e rel_residual=%.3e", rec.k, rec.F_value,
                     rec.rel_change, rec.rel_residual)
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    write_csv_matrix(out / "W.csv", res.final.W)
    write_csv_matrix(out / "H.csv", res.final.H)
    write_trace_csv(out / "trace.csv", res.trace)
    summary = {
        "algorithm": Algorithm(cfg["algorithm"]).value,
        "m": p.m, "n": p.n, "r": p.r, "s": p.s, "seed": cfg["seed"],
        "final_F": res.F_value,
        "rel_residual": res.rel_residual,
        "iterations": res.iterations,
        "stop_reason": res.stop_reason.value,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    print(json.dumps(summary))
    return EXIT_OK if res.stop_reason is StopReason.TOLERANCE else EXIT_MAX_ITER


def cmd_synth(cfg: dict) -> int:
    _require(cfg, "r", "ts")
    spec = SyntheticSpec(cfg["m"], cfg["n"], cfg["r"], cfg["ts"], cfg["seed"])
    inst = gen_synthetic(spec)
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    write_csv_matrix(out / "V.csv", inst.V)
    write_csv_matrix(out / "W_true.csv", inst.W_true)
    write_csv_matrix(out / "H_true.csv", inst.H_true)
    print(out / "V.csv")
    return EXIT_OK


def _table(cfg: dict, factory, runner, default_name: str) -> int:
    kw = dict(trials=cfg["trials"], tol=cfg["tol"], max_iter=cfg["max_iter"], base_seed=cfg["seed"],
              delta1=cfg["delta1"], delta2=cfg["delta2"], c=cfg["c"], workers=_workers(cfg))
    grid = _grid(cfg)
    if grid is not None:
        kw["grid"] = grid
    if cfg["command"] == "table2" and cfg["ts"] is not None:
        kw["ts"] = cfg["ts"]
    report = runner(factory(**kw))
    path = cfg["output"] or default_name
    emit_report(report, path)
    sys.stdout.write(report.format_table())
    return EXIT_OK


def cmd_table1(cfg: dict) -> int:
    return _table(cfg, table1_spec, run_table1, "table1.json")


def cmd_table2(cfg: dict) -> int:
    return _table(cfg, table2_spec, run_table2, "table2.json")


def cmd_table3(cfg: dict) -> int:
    return _table(cfg, table3_spec, run_table3, "table3.json")


def cmd_mnist(cfg: dict) -> int:
    if cfg["mnist_dir"] is None:
        raise UsageError(f"--mnist-dir is required. {MNIST_HELP}")
    images, labels = load_mnist(cfg["mnist_dir"])
    V = build_mnist_matrix(images, labels)
    kw = dict(trials=cfg["trials"], tol=cfg["tol"], max_iter=cfg["max_iter"], base_seed=cfg["seed"],
              delta1=cfg["delta1"], delta2=cfg["delta2"], c=cfg["c"], r=cfg["r"])
    grid = _grid(cfg)
    if grid is not None:
        kw["grid"] = grid
    report, traces = run_mnist(mnist_spec(**kw), V)
    out = Path(cfg["out_dir"])
    emit_report(report, out / "mnist.json")
    for (alg, s), trace in traces.items():
        write_trace_csv(out / f"trace_{alg}_s{s}.csv", trace)
    sys.stdout.write(report.format_table())
    return EXIT_OK


def cmd_project(cfg: dict) -> int:
    _require(cfg, "input")
    Y = read_csv_matrix(cfg["input"])
    column = Y.shape[1] == 1 and Y.shape[0] > 1
    if column:
        Y = Y.T
    s = Y.shape[1] if cfg["s"] is None else cfg["s"]
    if not 1 <= s <= Y.shape[1]:
        raise UsageError(f"--s must lie in [1, {Y.shape[1]}], got {s}")
    Z = project_sparse_simplex_rows(Y, s)
    if column:
        Z = Z.T
    if cfg["output"] is None:
        for row in Z:
            print(",".join(repr(float(v)) for v in row))
    else:
        write_csv_matrix(cfg["output"], Z)
    return EXIT_OK


COMMANDS = {
    "solve": cmd_solve,
    "synth": cmd_synth,
    "table1": cmd_table1,
    "table2": cmd_table2,
    "table3": cmd_table3,
    "mnist": cmd_mnist,
    "project": cmd_project,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve(args)
        logging.basicConfig(level=logging.INFO if cfg["verbose"] else logging.WARNING,
                            format="%(message)s", stream=sys.stderr)
        return COMMANDS[cfg["command"]](cfg)
    except (UsageError, SsmfError, OSError) as exc:
        msg = str(exc)
        if isinstance(exc, OSError) and getattr(exc, "filename", None) and exc.filename not in msg:
            msg = f"{exc.filename}: {msg}"
        print(f"ssmf: error: {msg}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
