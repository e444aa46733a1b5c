"""Neighborhood-preservation scores for a (high-D data, 2-D embedding) pair.

Ranks and neighbor sets break distance ties by ascending point index, the
same rule :func:`fedne.geometry.build_knn` uses.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import kernels
from .errors import DataError, ShapeError
from .geometry import Dataset


@dataclass
class EvalReport:
    continuity: float
    trustworthiness: float
    knn_accuracy: float
    k: int
    n: int
    # not computed; kept so downstream tables keep a stable schema
    steadiness: float | None = None
    cohesiveness: float | None = None

    def as_dict(self) -> dict:
        return {key: val for key, val in asdict(self).items() if val is not None}


def _as_matrix(x):
    return x.points if isinstance(x, Dataset) else np.asarray(x, dtype=np.float64)


def _check(n, k):
    if k < 1:
        raise DataError("k must be at least 1")
    if 2 * n - 3 * k - 1 <= 0 or n <= k:
        raise DataError(f"N={n} is too small for neighborhood size k={k}")


def _intrusion_score(reference, other, k):
    # penalize points in `other`'s k-NN that rank beyond k in `reference`
    n = reference.shape[0]
    _check(n, k)
    if other.shape[0] != n:
        raise ShapeError("both spaces must hold the same points")
    nbrs = kernels.knn_indices(other, k)
    penalty = kernels.rank_penalty(reference, nbrs, k)
    return 1.0 - 2.0 / (n * k * (2.0 * n - 3.0 * k - 1.0)) * penalty


def trustworthiness(high, low, k: int = 7) -> float:
    """Trustworthiness (Venna & Kaski): penalizes embedded-space intruders.

    ``1 - 2/(N k (2N - 3k - 1)) * sum_i sum_{j in U_k(i)} (r(i, j) - k)``
    where ``U_k(i)`` holds the embedded-space neighbors of ``i`` that are not
    among its input-space neighbors and ``r(i, j)`` is the input-space rank.
    """
    return _intrusion_score(_as_matrix(high), np.asarray(low, dtype=np.float64), k)


def continuity(high, low, k: int = 7) -> float:
    """Continuity: trustworthiness with the two spaces swapped."""
    return _intrusion_score(np.asarray(low, dtype=np.float64), _as_matrix(high), k)


def knn_accuracy(low, labels, k: int = 7) -> float:
    """Leave-one-out k-NN majority-vote accuracy in the embedding (ties to the smaller label)."""
    low = np.asarray(low, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = low.shape[0]
    if n <= k:
        raise DataError(f"kNN accuracy needs more than {k} points, got {n}")
    if labels.shape != (n,):
        raise ShapeError("need one label per embedded point")
    nbrs = kernels.knn_indices(low, k)
    classes, coded = np.unique(labels, return_inverse=True)
    votes = np.zeros((n, classes.size), dtype=np.int64)
    np.add.at(votes, (np.repeat(np.arange(n), k), coded[nbrs].ravel()), 1)
    # argmax returns the first maximum, i.e. the smallest label
    predicted = votes.argmax(axis=1)
    return float(np.mean(predicted == coded))


def evaluate(high, low, labels=None, k: int = 7) -> EvalReport:
    if labels is None:
        labels = high.labels if isinstance(high, Dataset) else None
        if labels is None:
            raise DataError("labels are required for kNN accuracy")
    low = np.asarray(low, dtype=np.float64)
    return EvalReport(
        continuity=continuity(high, low, k),
        trustworthiness=trustworthiness(high, low, k),
        knn_accuracy=knn_accuracy(low, labels, k),
        k=int(k),
        n=int(low.shape[0]),
    )
