"""Backend selection for the inner loops.

The compiled extension ``fedne._kernels`` is used when it was built; otherwise
the numpy implementations in :mod:`fedne._fallback` are used.  Setting the
environment variable ``FEDNE_BACKEND=python`` forces the fallback.

All functions take C-contiguous float64 / int64 arrays; the wrappers here do
the conversion so callers need not care.
"""

import os

import numpy as np

from . import _fallback

_impl = _fallback
BACKEND = "python"

if os.environ.get("FEDNE_BACKEND", "").lower() not in ("python", "py", "numpy"):
    try:
        from . import _kernels as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:
        _impl = _fallback


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def _i64(a):
    return np.ascontiguousarray(a, dtype=np.int64)


def edge_forces(Z, anchors, positives, negatives, attr_coef, rep_coef, eps, impl=None):
    """Attraction/repulsion sums over an edge batch and their weighted gradient.

    Returns ``(attr_sum, rep_sum, grad)`` where ``attr_sum`` is the summed
    ``-log(max(phi, eps))`` over edges, ``rep_sum`` the summed
    ``-log(1 - min(phi, 1 - eps))`` over (edge, negative) pairs and ``grad``
    is d(attr_coef * attr_sum + rep_coef * rep_sum)/dZ.
    """
    impl = impl or _impl
    negatives = _i64(negatives)
    if negatives.ndim == 1:
        negatives = negatives[:, None]
    return impl.edge_forces(_f64(Z), _i64(anchors), _i64(positives), negatives,
                            float(attr_coef), float(rep_coef), float(eps))


def knn_indices(X, k, impl=None):
    """Exact Euclidean k nearest neighbors (self excluded, ties by index)."""
    impl = impl or _impl
    return impl.knn_indices(_f64(X), int(k))


def rank_penalty(X, nbrs, k, impl=None):
    """Sum over ``i`` and ``j in nbrs[i]`` of ``max(0, rank_X(i, j) - k)``.

    ``rank_X(i, j)`` is the 1-based position of ``j`` when all points other
    than ``i`` are sorted by distance to ``i`` in ``X``, ties by index.
    """
    impl = impl or _impl
    return impl.rank_penalty(_f64(X), _i64(nbrs), int(k))
