"""Dense linear algebra helpers, seeded randomness and matrix file formats.

Matrices are plain ``numpy.ndarray`` objects of dtype float64 (row-major).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import InvalidDimensions, InvalidInput, TruncatedFile, BadMagic

BINARY_MAGIC = b"SSMF"
RNG_ALGORITHM = "PCG64"


def as_matrix(a, name="matrix") -> np.ndarray:
    """Coerce ``a`` to a finite 2-D float64 array."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise InvalidDimensions(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInput(f"{name} contains non-finite entries")
    return arr


def matmul(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise InvalidDimensions(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def frobenius_norm(a) -> float:
    a = np.asarray(a, dtype=np.float64)
    return float(np.sqrt(np.sum(a * a)))


class SpectralEstimate(NamedTuple):
    value: float
    converged: bool
    iterations: int


def spectral_norm_sym(a, tol: float = 1e-8, max_iter: int = 500) -> SpectralEstimate:
    """Largest eigenvalue of a symmetric PSD matrix by power iteration.

    Starts from the normalized all-ones vector and stops once successive
    Rayleigh quotients agree to ``tol * max(1, value)``. If ``max_iter`` is
    exhausted the best estimate is returned with ``converged=False``.

    The all-ones start is never orthogonal to the top eigenvector of an
    entrywise nonnegative matrix (such as ``H H^T``); for general PSD input
    that start can miss the top eigenvalue.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvalidDimensions(f"expected a square matrix, got shape {a.shape}")
    n = a.shape[0]
    if n == 0:
        return SpectralEstimate(0.0, True, 0)
    x = np.full(n, 1.0 / np.sqrt(n))
    theta = -np.inf
    best = 0.0
    perturbed = False
    for it in range(1, max_iter + 1):
        y = a @ x
        ynorm = np.linalg.norm(y)
        if ynorm == 0.0:
            if perturbed or not np.any(a):
                # A is zero or annihilates every start we try: lambda_max = 0 on PSD input
                return SpectralEstimate(0.0, True, it)
            x = x.copy()
            x[0] += 1e-3
            x /= np.linalg.norm(x)
            perturbed = True
            continue
        new_theta = float(x @ y)
        best = max(best, new_theta)
        if abs(new_theta - theta) <= tol * max(1.0, abs(new_theta)):
            return SpectralEstimate(best, True, it)
        theta = new_theta
        x = y / ynorm
    return SpectralEstimate(best, False, max_iter)


@dataclass
class RandomSource:
    """Seeded generator with a fixed, named bit-generator algorithm.

    A source is single-owner. Parallel trials should each build their own
    source from a derived seed.
    """

    seed: int
    algorithm: str = RNG_ALGORITHM
    _gen: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        if self.algorithm != RNG_ALGORITHM:
            raise InvalidInput(f"unsupported generator {self.algorithm!r}")
        if not 0 <= int(self.seed) < 2**64:
            raise InvalidInput("seed must be an unsigned 64-bit integer")
        self._gen = np.random.Generator(np.random.PCG64(int(self.seed)))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def uniform(self, rows: int, cols: int) -> np.ndarray:
        return self._gen.random((rows, cols))

    def choice(self, n: int, size: int) -> np.ndarray:
        """Uniformly random subset of ``range(n)`` of the given size, sorted."""
        return np.sort(self._gen.choice(n, size=size, replace=False))

    @classmethod
    def derived(cls, *keys: int) -> "RandomSource":
        """Source whose seed is a deterministic hash of integer keys.

        Used for per-trial streams so results never depend on execution order.
        """
        ss = np.random.SeedSequence([int(k) for k in keys])
        return cls(int(ss.generate_state(1, dtype=np.uint64)[0]))


def rand_uniform_matrix(src: RandomSource, rows: int, cols: int) -> np.ndarray:
    if rows < 1 or cols < 1:
        raise InvalidDimensions(f"rows and cols must be >= 1, got {rows}x{cols}")
    return src.uniform(rows, cols)


# ---------------------------------------------------------------------------
# file formats


def read_csv_matrix(path) -> np.ndarray:
    path = Path(path)
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append([float(tok) for tok in line.split(",")])
            except ValueError as exc:
                raise InvalidInput(f"{path}:{lineno}: malformed number ({exc})") from None
    if not rows:
        raise InvalidInput(f"{path}: no data")
    width = len(rows[0])
    for lineno, row in enumerate(rows, 1):
        if len(row) != width:
            raise InvalidDimensions(f"{path}: row {lineno} has {len(row)} columns, expected {width}")
    return as_matrix(rows, name=str(path))


def write_csv_matrix(path, a) -> None:
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    with open(path, "w", encoding="utf-8") as fh:
        for row in a:
            fh.write(",".join(repr(float(v)) for v in row))
            fh.write("\n")


def read_binary_matrix(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 12:
        raise TruncatedFile(f"{path}: header too short")
    if data[:4] != BINARY_MAGIC:
        raise BadMagic(f"{path}: expected magic {BINARY_MAGIC!r}, got {data[:4]!r}")
    rows, cols = struct.unpack("<II", data[4:12])
    need = 12 + 8 * rows * cols
    if len(data) < need:
        raise TruncatedFile(f"{path}: payload has {len(data) - 12} bytes, expected {need - 12}")
    return np.frombuffer(data, dtype="<f8", count=rows * cols, offset=12).reshape(rows, cols).astype(np.float64)


def write_binary_matrix(path, a) -> None:
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    rows, cols = a.shape
    with open(path, "wb") as fh:
        fh.write(BINARY_MAGIC)
        fh.write(struct.pack("<II", rows, cols))
        fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def read_matrix(path) -> np.ndarray:
    """Read a matrix, picking the binary format when the magic matches."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == BINARY_MAGIC:
        return read_binary_matrix(path)
    return read_csv_matrix(path)
