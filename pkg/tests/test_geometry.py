import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from fedne.errors import DataError, ShapeError
from fedne.geometry import Dataset, build_knn, cauchy_kernel, pairwise_sq_dists

from oracles import knn_sort, sq_dist_loops

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)
vec2 = arrays(np.float64, 2, elements=finite)


def test_kernel_values():
    assert cauchy_kernel([0, 0], [0, 0]) == 1.0
    assert cauchy_kernel([0, 0], [1, 0]) == 0.5
    assert cauchy_kernel([0, 0], [1, math.sqrt(2)]) == pytest.approx(0.25, rel=1e-15)


@settings(max_examples=200, deadline=None)
@given(a=vec2, b=vec2)
def test_kernel_bounds_and_symmetry(a, b):
    k = cauchy_kernel(a, b)
    assert 0 < k <= 1
    assert k == cauchy_kernel(b, a)


@settings(max_examples=100, deadline=None)
@given(a=vec2, direction=vec2, r1=st.floats(0, 100), r2=st.floats(0, 100))
def test_kernel_decreasing_in_distance(a, direction, r1, r2):
    norm = np.linalg.norm(direction)
    if norm < 1e-6 or abs(r1 - r2) < 1e-3:
        return
    u = direction / norm
    near, far = sorted((r1, r2))
    assert cauchy_kernel(a, a + near * u) > cauchy_kernel(a, a + far * u)


def test_pairwise_examples():
    assert pairwise_sq_dists(np.array([[1.0, 2.0]])).tolist() == [[0.0]]
    assert pairwise_sq_dists(np.array([[0.0, 0.0]]), np.array([[3.0, 4.0]])).tolist() == [[25.0]]


def test_pairwise_matches_loops(rng):
    A, B = rng.normal(size=(13, 5)), rng.normal(size=(9, 5))
    assert np.max(np.abs(pairwise_sq_dists(A, B) - sq_dist_loops(A, B))) < 1e-10
    S = pairwise_sq_dists(A)
    assert np.all(np.diag(S) == 0) and np.array_equal(S, S.T) and np.all(S >= 0)


def test_pairwise_dim_mismatch():
    with pytest.raises(ShapeError):
        pairwise_sq_dists(np.zeros((2, 3)), np.zeros((2, 4)))


def test_knn_collinear():
    g = build_knn(Dataset(np.array([[0.0], [1.0], [3.0]])), 1)
    assert g.neighbors[:, 0].tolist() == [1, 0, 1]


def test_knn_matches_sort_oracle(rng):
    X = rng.normal(size=(200, 10))
    assert np.array_equal(build_knn(Dataset(X), 7).neighbors, knn_sort(X, 7))


def test_knn_duplicates_are_mutual():
    X = np.array([[0.0, 0.0], [5.0, 5.0], [0.0, 0.0], [9.0, 1.0]])
    g = build_knn(Dataset(X), 1)
    assert g.neighbors[0, 0] == 2 and g.neighbors[2, 0] == 0


def test_knn_ties_by_index():
    X = np.array([[0.0], [1.0], [-1.0], [2.0]])
    assert build_knn(Dataset(X), 2).neighbors[0].tolist() == [1, 2]


def test_knn_too_small():
    with pytest.raises(DataError):
        build_knn(Dataset(np.zeros((3, 2))), 3)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6), n=st.integers(2, 60), d=st.integers(1, 4),
       k=st.integers(1, 8), grid=st.booleans())
def test_knn_property(seed, n, d, k, grid):
    if n <= k:
        return
    r = np.random.default_rng(seed)
    # integer lattices produce plenty of exact ties
    X = r.integers(0, 3, size=(n, d)).astype(float) if grid else r.normal(size=(n, d))
    g = build_knn(Dataset(X), k)
    assert np.array_equal(g.neighbors, knn_sort(X, k))
    assert not np.any(g.neighbors == np.arange(n)[:, None])
    d2 = np.take_along_axis(pairwise_sq_dists(X), g.neighbors, axis=1)
    assert np.all(np.diff(d2, axis=1) >= 0)


def test_knn_large_instance_matches_oracle(rng):
    # the exhaustive property at the upper end of the size range
    X = rng.normal(size=(2000, 3))
    g = build_knn(Dataset(X), 5)
    d2 = pairwise_sq_dists(X)
    np.fill_diagonal(d2, np.inf)
    order = np.lexsort((np.broadcast_to(np.arange(2000), d2.shape), d2), axis=1)[:, :5]
    assert np.array_equal(g.neighbors, order)


def test_dataset_validation():
    with pytest.raises(DataError, match="row 1"):
        Dataset(np.array([[0.0], [np.nan]]))
    with pytest.raises(DataError):
        Dataset(np.zeros((2, 1)), ids=np.array([3, 3]))
    d = Dataset(np.zeros((2, 1)))
    assert d.labels.tolist() == [-1, -1] and d.ids.tolist() == [0, 1]
