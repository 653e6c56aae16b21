import gzip
import struct

import numpy as np
import pytest

from ssmf.data import (
    IdxImageSet,
    SyntheticSpec,
    build_mnist_matrix,
    gen_synthetic,
    load_mnist,
    parse_idx_images,
    parse_idx_labels,
)
from ssmf.dense import RandomSource
from ssmf.errors import BadMagic, InvalidLabel, InvalidSpec, NotEnoughSamples, TruncatedFile


def idx_images(pixels: np.ndarray) -> bytes:
    count, rows, cols = pixels.shape
    return struct.pack(">IIII", 0x803, count, rows, cols) + pixels.astype(np.uint8).tobytes()


def idx_labels(labels) -> bytes:
    return struct.pack(">II", 0x801, len(labels)) + bytes(labels)


def test_synthetic_rows_stochastic_and_sparse():
    inst = gen_synthetic(SyntheticSpec(400, 200, 15, 30, seed=1))
    assert np.max(np.abs(inst.V.sum(axis=1) - 1)) <= 1e-12
    assert np.count_nonzero(inst.H_true, axis=1).max() <= 30
    assert np.max(np.abs(inst.W_true.sum(axis=1) - 1)) <= 1e-12
    assert inst.W_true.min() >= 0 and inst.H_true.min() >= 0
    assert np.array_equal(inst.V, inst.W_true @ inst.H_true)


def test_synthetic_rank_bounded():
    inst = gen_synthetic(SyntheticSpec(50, 40, 5, 8, seed=2))
    sv = np.linalg.svd(inst.V, compute_uv=False)
    assert sv[5] <= 1e-10


def test_synthetic_deterministic():
    a = gen_synthetic(SyntheticSpec(30, 20, 4, 5, seed=7))
    b = gen_synthetic(SyntheticSpec(30, 20, 4, 5, seed=7))
    c = gen_synthetic(SyntheticSpec(30, 20, 4, 5), RandomSource(7))
    assert np.array_equal(a.V, b.V) and np.array_equal(a.V, c.V)


@pytest.mark.parametrize("kw", [dict(m=10, n=5, r=5, ts=2), dict(m=10, n=5, r=2, ts=6),
                                dict(m=10, n=5, r=2, ts=0), dict(m=0, n=5, r=2, ts=2)])
def test_synthetic_spec_validation(kw):
    with pytest.raises(InvalidSpec):
        SyntheticSpec(**kw)


def test_parse_images_fixture():
    pixels = np.arange(8, dtype=np.uint8).reshape(2, 2, 2)
    imgs = parse_idx_images(idx_images(pixels))
    assert (imgs.count, imgs.rows, imgs.cols) == (2, 2, 2)
    assert imgs.pixels.tobytes() == bytes(range(8))


def test_parse_images_errors():
    pixels = np.zeros((2, 2, 2), dtype=np.uint8)
    data = idx_images(pixels)
    with pytest.raises(BadMagic):
        parse_idx_images(struct.pack(">I", 0x801) + data[4:])
    with pytest.raises(TruncatedFile):
        parse_idx_images(data[:-1])
    with pytest.raises(TruncatedFile):
        parse_idx_images(data[:10])


def test_parse_labels():
    assert parse_idx_labels(idx_labels([3, 7])).tolist() == [3, 7]
    assert parse_idx_labels(idx_labels([])).tolist() == []
    with pytest.raises(InvalidLabel):
        parse_idx_labels(idx_labels([1, 12]))
    with pytest.raises(BadMagic):
        parse_idx_labels(struct.pack(">II", 0x803, 0))
    with pytest.raises(TruncatedFile):
        parse_idx_labels(idx_labels([1, 2])[:-1])


def synthetic_digits(count=12, seed=0):
    src = RandomSource(seed)
    pixels = (src.uniform(count * 28, 28) * 255).astype(np.uint8).reshape(count, 28, 28)
    labels = np.array([3, 1] * (count // 2), dtype=np.uint8)
    return IdxImageSet(count, 28, 28, pixels), labels


def test_build_mnist_matrix_shape_and_rows():
    images, labels = synthetic_digits()
    V = build_mnist_matrix(images, labels, digit=3, count=4)
    assert V.shape == (4, 400)
    assert np.max(np.abs(V.sum(axis=1) - 1)) <= 1e-12
    # row-major flattening of the 20x20 center crop of image 0
    crop = images.pixels[0, 4:24, 4:24].astype(float)
    assert np.allclose(V[0], crop.reshape(-1) / crop.sum(), atol=1e-15)


def test_build_mnist_matrix_column_major():
    images, labels = synthetic_digits()
    V = build_mnist_matrix(images, labels, digit=3, count=2, order="F")
    crop = images.pixels[0, 4:24, 4:24].astype(float)
    assert np.allclose(V[0], crop.T.reshape(-1) / crop.sum(), atol=1e-15)
    with pytest.raises(InvalidSpec):
        build_mnist_matrix(images, labels, count=1, order="K")


def test_build_mnist_matrix_skips_blank():
    images, labels = synthetic_digits()
    images.pixels[0, 4:24, 4:24] = 0
    V = build_mnist_matrix(images, labels, digit=3, count=2)
    crop = images.pixels[2, 4:24, 4:24].astype(float)
    assert np.allclose(V[0], crop.reshape(-1) / crop.sum(), atol=1e-15)


def test_build_mnist_matrix_not_enough():
    images, labels = synthetic_digits()
    with pytest.raises(NotEnoughSamples):
        build_mnist_matrix(images, labels, digit=3, count=7)
    with pytest.raises(InvalidSpec):
        build_mnist_matrix(images, labels[:-1], count=1)
    with pytest.raises(InvalidSpec):
        build_mnist_matrix(images, labels, count=1, crop=14)


def test_load_mnist_gz_and_plain(tmp_path):
    images, labels = synthetic_digits(4)
    with gzip.open(tmp_path / "train-images-idx3-ubyte.gz", "wb") as fh:
        fh.write(idx_images(images.pixels))
    (tmp_path / "train-labels-idx1-ubyte").write_bytes(idx_labels(labels.tolist()))
    got_images, got_labels = load_mnist(tmp_path)
    assert np.array_equal(got_images.pixels, images.pixels)
    assert got_labels.tolist() == labels.tolist()


def test_load_mnist_missing(tmp_path):
    with pytest.raises(FileNotFoundError, match="Download"):
        load_mnist(tmp_path / "nowhere")
    with pytest.raises(FileNotFoundError, match="train-images"):
        load_mnist(tmp_path)
