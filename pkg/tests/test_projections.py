import itertools

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ssmf.dense import RandomSource
from ssmf.errors import InvalidDimensions, InvalidInput, InvalidSparsity, InvalidSupport, OracleTooLarge
from ssmf.projections import (
    brute_force_sparse_projection,
    project_masked_simplex,
    project_simplex,
    project_simplex_rows,
    project_sparse_simplex,
    project_sparse_simplex_rows,
)


def bisection_simplex(y, iters=200):
    """Simplex projection via bisection on the threshold of sum(max(y - b, 0)) = 1."""
    y = np.asarray(y, dtype=float)
    lo, hi = y.min() - 1.0, y.max()
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if np.maximum(y - mid, 0).sum() > 1.0:
            lo = mid
        else:
            hi = mid
    return np.maximum(y - 0.5 * (lo + hi), 0)


def enumeration_distance(y, s):
    """Smallest 0.5 ||z - y||^2 over all supports of size s, with the bisection oracle."""
    best = np.inf
    for support in itertools.combinations(range(len(y)), s):
        z = np.zeros_like(y)
        z[list(support)] = bisection_simplex(y[list(support)])
        best = min(best, 0.5 * float(np.sum((z - y) ** 2)))
    return best


finite = st.floats(-3, 3, allow_nan=False, allow_infinity=False)


def vectors(min_size=1, max_size=8):
    return st.integers(min_size, max_size).flatmap(lambda n: arrays(np.float64, n, elements=finite))


def test_simplex_examples():
    assert np.allclose(project_simplex([0.5, 0.5]), [0.5, 0.5], atol=0)
    assert np.allclose(project_simplex([0.4, 0.4, 0.4]), [1 / 3] * 3, atol=1e-15)
    assert np.array_equal(project_simplex([2.0, 0.0]), [1.0, 0.0])


def test_sparse_example_against_enumeration():
    y = np.array([0.9, 0.5, 0.4, 0.1])
    z = project_sparse_simplex(y, 2)
    assert np.allclose(z, [0.7, 0.3, 0.0, 0.0], atol=1e-15)
    assert 0.5 * np.sum((z - y) ** 2) == pytest.approx(enumeration_distance(y, 2), abs=1e-14)


def test_masked_examples():
    y = np.array([0.9, 0.5, 0.4, 0.1])
    assert np.allclose(project_masked_simplex(y, [0, 1]), [0.7, 0.3, 0, 0], atol=1e-15)
    assert np.allclose(project_masked_simplex(y, [0, 1, 2, 3]), project_simplex(y), atol=0)
    assert np.array_equal(project_masked_simplex(np.zeros(5), [3]), [0, 0, 0, 1, 0])


@pytest.mark.parametrize("support", [[], [1, 1], [2, 1], [0, 5], [-1, 2], [0.5]])
def test_masked_invalid_support(support):
    with pytest.raises(InvalidSupport):
        project_masked_simplex(np.ones(5), support)


def test_brute_force_tie_break_and_full_support():
    assert np.array_equal(brute_force_sparse_projection([0.6, 0.6], 1), [1.0, 0.0])
    y = np.array([0.3, -0.2, 0.8])
    assert np.allclose(brute_force_sparse_projection(y, 3), project_simplex(y), atol=1e-15)


def test_tie_break_picks_lowest_index():
    z = project_sparse_simplex([0.2, 0.7, 0.7, 0.7], 2)
    assert np.array_equal(z, [0.0, 0.5, 0.5, 0.0])


def test_brute_force_too_large():
    with pytest.raises(OracleTooLarge):
        brute_force_sparse_projection(np.zeros(21), 2)


def test_errors():
    with pytest.raises(InvalidDimensions):
        project_simplex([])
    with pytest.raises(InvalidDimensions):
        project_simplex(np.ones((2, 2)))
    with pytest.raises(InvalidInput):
        project_simplex([1.0, np.nan])
    with pytest.raises(InvalidSparsity):
        project_sparse_simplex([1.0, 2.0], 0)
    with pytest.raises(InvalidSparsity):
        project_sparse_simplex([1.0, 2.0], 3)


@settings(max_examples=300, deadline=None)
@given(vectors(1, 30))
def test_simplex_matches_bisection(y):
    z = project_simplex(y)
    assert np.max(np.abs(z - bisection_simplex(y))) <= 1e-9
    assert z.min() >= 0.0
    assert abs(z.sum() - 1.0) <= 1e-12


@settings(max_examples=300, deadline=None)
@given(vectors(1, 8), st.data())
def test_sparse_optimal_against_enumeration(y, data):
    s = data.draw(st.integers(1, len(y)))
    z = project_sparse_simplex(y, s)
    assert 0.5 * np.sum((z - y) ** 2) <= enumeration_distance(y, s) + 1e-12


@settings(max_examples=300, deadline=None)
@given(vectors(1, 40), st.data())
def test_sparse_feasible(y, data):
    s = data.draw(st.integers(1, len(y)))
    z = project_sparse_simplex(y, s)
    assert np.count_nonzero(z) <= s
    assert z.min() >= 0.0
    assert abs(z.sum() - 1.0) <= 1e-12


@settings(max_examples=200, deadline=None)
@given(vectors(1, 20), st.data())
def test_idempotent(y, data):
    s = data.draw(st.integers(1, len(y)))
    z = project_sparse_simplex(y, s)
    assert np.max(np.abs(project_sparse_simplex(z, s) - z)) <= 1e-14


@settings(max_examples=200, deadline=None)
@given(vectors(2, 10), st.data())
def test_s_equal_n_is_simplex(y, data):
    assert np.array_equal(project_sparse_simplex(y, len(y)), project_simplex(y))


@settings(max_examples=200, deadline=None)
@given(vectors(2, 12), st.data())
def test_permutation_equivariance(y, data):
    # distinct values, so the chosen support is unique
    assume(len(np.unique(y)) == len(y))
    s = data.draw(st.integers(1, len(y)))
    perm = np.array(data.draw(st.permutations(range(len(y)))))
    assert np.allclose(project_sparse_simplex(y[perm], s), project_sparse_simplex(y, s)[perm], atol=1e-15)


@settings(max_examples=200, deadline=None)
@given(vectors(2, 10), vectors(2, 10), st.data())
def test_nonexpansive_on_shared_support(y1, y2, data):
    n = min(len(y1), len(y2))
    y1, y2 = y1[:n], y2[:n]
    s = data.draw(st.integers(1, n))
    z1, z2 = project_sparse_simplex(y1, s), project_sparse_simplex(y2, s)
    assume(np.array_equal(z1 != 0, z2 != 0))
    # shared support of the kept coordinates
    kept1 = np.argsort(-y1, kind="stable")[:s]
    kept2 = np.argsort(-y2, kind="stable")[:s]
    assume(set(kept1) == set(kept2))
    assert np.linalg.norm(z1 - z2) <= np.linalg.norm(y1 - y2) + 1e-12


def test_brute_force_agrees_on_random_vectors():
    src = RandomSource(2024)
    for n in range(3, 9):
        for _ in range(50):
            y = src.uniform(1, n)[0] * 2 - 0.5
            for s in range(1, n + 1):
                z = project_sparse_simplex(y, s)
                b = brute_force_sparse_projection(y, s)
                gap = 0.5 * np.sum((z - y) ** 2) - 0.5 * np.sum((b - y) ** 2)
                assert abs(gap) <= 1e-10


def test_rows_variant_matches_vector_variant():
    Y = RandomSource(3).uniform(7, 9) * 3 - 1
    Z = project_sparse_simplex_rows(Y, 4)
    for y, z in zip(Y, Z):
        assert np.array_equal(z, project_sparse_simplex(y, 4))
    P = project_simplex_rows(Y)
    for y, z in zip(Y, P):
        assert np.array_equal(z, project_simplex(y))


def test_exact_zeros_off_support():
    y = np.array([5.0, 1e-300, 4.0, 3.0])
    z = project_sparse_simplex(y, 2)
    assert z[1] == 0.0 and z[3] == 0.0
