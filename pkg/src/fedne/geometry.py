"""Datasets, Euclidean distances, the Cauchy kernel and exact kNN graphs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DataError, ShapeError


@dataclass
class Dataset:
    """Row-major feature matrix with integer labels and stable ids.

    ``labels`` may be ``-1`` for unlabeled points.
    """

    points: np.ndarray
    labels: np.ndarray | None = None
    ids: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2:
            raise ShapeError(f"points must be a 2-D matrix, got shape {self.points.shape}")
        n = self.points.shape[0]
        if self.points.shape[1] < 1:
            raise ShapeError("points need at least one feature column")
        if not np.all(np.isfinite(self.points)):
            bad = int(np.argwhere(~np.isfinite(self.points))[0, 0])
            raise DataError(f"non-finite feature value in row {bad}")
        self.labels = (np.full(n, -1, dtype=np.int64) if self.labels is None
                       else np.asarray(self.labels, dtype=np.int64))
        self.ids = (np.arange(n, dtype=np.int64) if self.ids is None
                    else np.asarray(self.ids, dtype=np.int64))
        if self.labels.shape != (n,) or self.ids.shape != (n,):
            raise ShapeError("labels and ids must have one entry per point")
        if np.unique(self.ids).size != n:
            raise DataError("ids must be unique")

    def __len__(self):
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def subset(self, index) -> "Dataset":
        index = np.asarray(index, dtype=np.int64)
        return Dataset(self.points[index], self.labels[index], self.ids[index])


@dataclass
class KnnGraph:
    """``neighbors[i]`` lists the ``k`` nearest other points of ``i``, nearest first."""

    k: int
    neighbors: np.ndarray

    def __post_init__(self):
        self.neighbors = np.asarray(self.neighbors, dtype=np.int64)
        if self.neighbors.ndim != 2 or self.neighbors.shape[1] != self.k:
            raise ShapeError(f"neighbors must be (N, {self.k}), got {self.neighbors.shape}")

    @property
    def n_points(self) -> int:
        return self.neighbors.shape[0]

    @property
    def n_edges(self) -> int:
        return self.neighbors.size


def cauchy_kernel(z_i, z_j):
    """Similarity ``1 / (1 + ||z_i - z_j||^2)``; broadcasts over leading axes."""
    diff = np.asarray(z_i, dtype=np.float64) - np.asarray(z_j, dtype=np.float64)
    return 1.0 / (1.0 + np.sum(diff * diff, axis=-1))


def pairwise_sq_dists(A, B=None) -> np.ndarray:
    """Exact squared Euclidean distances between the rows of ``A`` and ``B``.

    Computed from explicit differences (not the ``|a|^2 + |b|^2 - 2ab``
    expansion) so entries are exactly 0 for identical rows.
    """
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = A if B is None else np.atleast_2d(np.asarray(B, dtype=np.float64))
    if A.shape[1] != B.shape[1]:
        raise ShapeError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    out = np.empty((A.shape[0], B.shape[0]))
    block = max(1, 2_000_000 // max(1, B.shape[0] * A.shape[1]))
    for start in range(0, A.shape[0], block):
        diff = A[start:start + block, None, :] - B[None, :, :]
        out[start:start + block] = np.einsum("ijk,ijk->ij", diff, diff)
    return out


def build_knn(data, k: int) -> KnnGraph:
    """Exact kNN graph over ``data`` (a :class:`Dataset` or a point matrix)."""
    points = data.points if isinstance(data, Dataset) else np.asarray(data, dtype=np.float64)
    n = points.shape[0]
    k = int(k)
    if k < 1:
        raise DataError("k must be at least 1")
    if n <= k:
        raise DataError(f"a {k}-NN graph needs more than {k} points, got {n}")
    return KnnGraph(k, kernels.knn_indices(points, k))
