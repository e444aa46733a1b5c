"""Pure-numpy versions of the compiled kernels in ``_kernels.pyx``.

Same signatures, same results up to floating-point summation order.
"""

import numpy as np

_BLOCK = 256


def _sq_dists_block(A, B):
    diff = A[:, None, :] - B[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def edge_forces(Z, anchors, positives, negatives, attr_coef, rep_coef, eps):
    grad = np.zeros((Z.shape[0], 2), dtype=np.float64)

    diff = Z[anchors] - Z[positives]
    d2 = np.einsum("ij,ij->i", diff, diff)
    phi = 1.0 / (1.0 + d2)
    live = phi > eps
    attr = float(-np.log(np.where(live, phi, eps)).sum())
    f = np.where(live, attr_coef * 2.0 * phi, 0.0)[:, None] * diff
    np.add.at(grad, anchors, f)
    np.add.at(grad, positives, -f)

    a = np.repeat(anchors, negatives.shape[1])
    q = negatives.ravel()
    diff = Z[a] - Z[q]
    d2 = np.einsum("ij,ij->i", diff, diff)
    phi = 1.0 / (1.0 + d2)
    live = phi < 1.0 - eps
    rep = float(-np.log(1.0 - np.where(live, phi, 1.0 - eps)).sum())
    with np.errstate(divide="ignore", invalid="ignore"):
        c = np.where(live, -rep_coef * 2.0 * phi / d2, 0.0)
    f = c[:, None] * diff
    np.add.at(grad, a, f)
    np.add.at(grad, q, -f)
    return attr, rep, grad


def knn_indices(X, k):
    n = X.shape[0]
    out = np.empty((n, k), dtype=np.int64)
    for start in range(0, n, _BLOCK):
        stop = min(start + _BLOCK, n)
        d = _sq_dists_block(X[start:stop], X)
        d[np.arange(stop - start), np.arange(start, stop)] = np.inf
        # stable sort keeps equal distances in ascending index order
        out[start:stop] = np.argsort(d, axis=1, kind="stable")[:, :k]
    return out


def rank_penalty(X, nbrs, k):
    n = X.shape[0]
    total = 0.0
    idx = np.arange(n)
    for start in range(0, n, _BLOCK):
        stop = min(start + _BLOCK, n)
        rows = np.arange(start, stop)
        d = _sq_dists_block(X[start:stop], X)
        d[rows - start, rows] = np.inf
        order = np.argsort(d, axis=1, kind="stable")
        ranks = np.empty_like(order)
        np.put_along_axis(ranks, order, idx[None, :] + 1, axis=1)
        r = np.take_along_axis(ranks, nbrs[start:stop], axis=1)
        total += float(np.maximum(r - k, 0).sum())
    return total
