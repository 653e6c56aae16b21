"""Synthetic planted instances and MNIST ingestion."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .dense import RandomSource
from .errors import BadMagic, InvalidLabel, InvalidSpec, NotEnoughSamples, TruncatedFile
from .projections import project_masked_simplex, project_simplex_rows

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
}
MNIST_HELP = (
    "MNIST files not found. Download train-images-idx3-ubyte.gz and "
    "train-labels-idx1-ubyte.gz from http://yann.lecun.com/exdb/mnist/ (or a mirror), "
    "place them (gzipped or not) in one directory and pass it with --mnist-dir."
)


@dataclass(frozen=True)
class SyntheticSpec:
    m: int
    n: int
    r: int
    ts: int
    seed: int = 0

    def __post_init__(self):
        if min(self.m, self.n, self.r) < 1 or self.r >= min(self.m, self.n):
            raise InvalidSpec(f"need 1 <= r < min(m, n), got m={self.m}, n={self.n}, r={self.r}")
        if not 1 <= self.ts <= self.n:
            raise InvalidSpec(f"need 1 <= ts <= n, got ts={self.ts}, n={self.n}")


class SyntheticInstance(NamedTuple):
    V: np.ndarray
    W_true: np.ndarray
    H_true: np.ndarray


def gen_synthetic(spec: SyntheticSpec, src: RandomSource | None = None) -> SyntheticInstance:
    """Planted factorization ``V = W H`` with stochastic W and sparse stochastic H.

    W rows are simplex projections of uniform draws. Each H row gets a
    uniformly random support of size ``ts`` filled with uniform values and
    projected onto the simplex restricted to that support.
    """
    if src is None:
        src = RandomSource(spec.seed)
    W = project_simplex_rows(src.uniform(spec.m, spec.r))
    H = np.zeros((spec.r, spec.n))
    for t in range(spec.r):
        support = src.choice(spec.n, spec.ts)
        y = np.zeros(spec.n)
        y[support] = src.uniform(1, spec.ts)[0]
        H[t] = project_masked_simplex(y, support)
    V = W @ H
    err = np.max(np.abs(V.sum(axis=1) - 1.0))
    if err > 1e-12:
        raise InvalidSpec(f"generated V rows deviate from stochastic by {err:.3g}")
    return SyntheticInstance(V, W, H)


# ---------------------------------------------------------------------------
# IDX


@dataclass(frozen=True)
class IdxImageSet:
    count: int
    rows: int
    cols: int
    pixels: np.ndarray  # uint8, shape (count, rows, cols)


def _header(data: bytes, magic: int, ndims: int, what: str) -> tuple[int, ...]:
    size = 4 * (1 + ndims)
    if len(data) < 4:
        raise TruncatedFile(f"{what}: file too short for a header")
    (got,) = struct.unpack(">I", data[:4])
    if got != magic:
        raise BadMagic(f"{what}: magic 0x{got:08x}, expected 0x{magic:08x}")
    if len(data) < size:
        raise TruncatedFile(f"{what}: file too short for a header")
    return struct.unpack(">" + "I" * ndims, data[4:size])


def parse_idx_images(data: bytes) -> IdxImageSet:
    count, rows, cols = _header(data, IDX_IMAGES_MAGIC, 3, "IDX images")
    need = count * rows * cols
    payload = data[16:]
    if len(payload) < need:
        raise TruncatedFile(f"IDX images: payload has {len(payload)} bytes, expected {need}")
    pixels = np.frombuffer(payload, dtype=np.uint8, count=need).reshape(count, rows, cols)
    return IdxImageSet(count, rows, cols, pixels)


def parse_idx_labels(data: bytes) -> np.ndarray:
    (count,) = _header(data, IDX_LABELS_MAGIC, 1, "IDX labels")
    payload = data[8:]
    if len(payload) < count:
        raise TruncatedFile(f"IDX labels: payload has {len(payload)} bytes, expected {count}")
    labels = np.frombuffer(payload, dtype=np.uint8, count=count)
    if np.any(labels > 9):
        raise InvalidLabel(f"IDX labels: value {int(labels.max())} outside 0-9")
    return labels


def _read_maybe_gz(directory: Path, stem: str) -> bytes:
    for name in (stem, stem + ".gz", stem.replace("-idx", ".idx")):
        path = directory / name
        if path.exists():
            if path.suffix == ".gz":
                with gzip.open(path, "rb") as fh:
                    return fh.read()
            return path.read_bytes()
    raise FileNotFoundError(f"{directory / stem}[.gz] not found. {MNIST_HELP}")


def load_mnist(directory) -> tuple[IdxImageSet, np.ndarray]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"MNIST directory {directory} does not exist. {MNIST_HELP}")
    images = parse_idx_images(_read_maybe_gz(directory, MNIST_FILES["train_images"]))
    labels = parse_idx_labels(_read_maybe_gz(directory, MNIST_FILES["train_labels"]))
    return images, labels


def build_mnist_matrix(images: IdxImageSet, labels, digit: int = 3, count: int = 800,
                       crop: int = 4, order: str = "C") -> np.ndarray:
    """Stack the first ``count`` images of ``digit`` as normalized rows.

    Each image is center-cropped by ``crop`` pixels on every side, flattened
    (``order="C"`` row-major, ``"F"`` column-major) and scaled to sum to one. Images that are blank after the crop
    are skipped.
    """
    labels = np.asarray(labels)
    if labels.shape[0] != images.count:
        raise InvalidSpec(f"{labels.shape[0]} labels for {images.count} images")
    if 2 * crop >= min(images.rows, images.cols):
        raise InvalidSpec(f"crop {crop} too large for {images.rows}x{images.cols} images")
    if order not in ("C", "F"):
        raise InvalidSpec(f"order must be 'C' or 'F', got {order!r}")
    rows = []
    for idx in np.flatnonzero(labels == digit):
        img = images.pixels[idx, crop:images.rows - crop, crop:images.cols - crop]
        vec = img.reshape(-1, order=order).astype(np.float64)
        total = vec.sum()
        if total == 0:
            continue
        rows.append(vec / total)
        if len(rows) == count:
            break
    if len(rows) < count:
        raise NotEnoughSamples(f"only {len(rows)} usable images of digit {digit}, need {count}")
    return np.vstack(rows)
