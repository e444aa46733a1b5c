"""Contrastive neighbor-embedding loss with negative sampling.

Per edge ``(i, j)`` of the kNN graph the loss is

    -log phi(z_i, z_j) - sum_{s=1..b} log(1 - phi(z_i, z_{n_s}))

with ``phi`` the Cauchy kernel and ``n_s`` uniformly drawn negatives.  Both
logarithm arguments are clamped to ``[eps, 1 - eps]``; the reported losses
and gradients are those of the clamped expression.  Batch losses average over
edges, so the repulsion part equals ``b`` times the mean over all
(edge, negative) pairs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DataError, ShapeError
from .geometry import KnnGraph
from .nn import Mlp, backward, forward

EPS = 1e-4


@dataclass
class EdgeBatch:
    anchors: np.ndarray
    positives: np.ndarray
    negatives: np.ndarray

    @property
    def size(self) -> int:
        return self.anchors.shape[0]

    @property
    def n_negatives(self) -> int:
        return self.negatives.shape[1]


@dataclass
class LossBreakdown:
    attraction: float = 0.0
    repulsion: float = 0.0
    surrogate: float = 0.0
    proximal: float = 0.0

    @property
    def total(self) -> float:
        return self.attraction + self.repulsion + self.surrogate + self.proximal

    def as_dict(self) -> dict:
        return {"attraction": self.attraction, "repulsion": self.repulsion,
                "surrogate": self.surrogate, "proximal": self.proximal,
                "total": self.total}


def sample_edge_batch(graph: KnnGraph, batch_size: int, b: int, rng) -> EdgeBatch:
    """Draw ``batch_size`` directed kNN edges with replacement, ``b`` negatives each.

    Negatives are uniform over all points except the edge's anchor.
    """
    n, k = graph.neighbors.shape
    if n < 2 or k < 1:
        raise DataError("cannot sample edges from an empty graph")
    if batch_size < 1 or b < 0:
        raise DataError("batch_size must be positive and b non-negative")
    edge = rng.integers(0, n * k, size=batch_size)
    anchors = edge // k
    positives = graph.neighbors[anchors, edge % k]
    neg = rng.integers(0, n - 1, size=(batch_size, b))
    neg += neg >= anchors[:, None]
    return EdgeBatch(anchors, positives, neg)


def _diff(z_a, z_b):
    d = np.asarray(z_a, dtype=np.float64) - np.asarray(z_b, dtype=np.float64)
    return d, np.sum(d * d, axis=-1)


def attraction_loss(z_anchor, z_pos, eps: float = EPS):
    """``-log max(phi, eps)`` and its gradients ``(d/dz_anchor, d/dz_pos)``."""
    d, d2 = _diff(z_anchor, z_pos)
    phi = 1.0 / (1.0 + d2)
    live = phi > eps
    loss = -np.log(np.where(live, phi, eps))
    g = (np.where(live, 2.0 * phi, 0.0))[..., None] * d
    return loss, g, -g


def repulsion_loss(z_anchor, z_neg, eps: float = EPS):
    """``-log(1 - min(phi, 1 - eps))`` and its gradients ``(d/dz_anchor, d/dz_neg)``."""
    d, d2 = _diff(z_anchor, z_neg)
    phi = 1.0 / (1.0 + d2)
    live = phi < 1.0 - eps
    loss = -np.log(1.0 - np.where(live, phi, 1.0 - eps))
    with np.errstate(divide="ignore", invalid="ignore"):
        c = np.where(live, -2.0 * phi / d2, 0.0)
    g = c[..., None] * d
    return loss, g, -g


def local_ne_loss(model: Mlp, points, batch: EdgeBatch, repulsion_weight: float = 1.0,
                  eps: float = EPS, anchor_penalty=None):
    """Loss and parameter gradients of one edge batch.

    ``points`` is the client's feature matrix (or a Dataset).  Only the rows
    referenced by the batch are embedded.  ``anchor_penalty``, when given, is
    called with the embedded anchors (one row per edge) and must return
    ``(value, grad)``; its value lands in ``LossBreakdown.surrogate``.

    Returns ``(breakdown, param_grads)``.
    """
    x = getattr(points, "points", points)
    n = x.shape[0]
    used = np.concatenate([batch.anchors, batch.positives, batch.negatives.ravel()])
    if used.size and (used.min() < 0 or used.max() >= n):
        raise DataError(f"edge batch references a point outside [0, {n})")
    idx, inv = np.unique(used, return_inverse=True)
    n_edges = batch.size
    a = inv[:n_edges]
    p = inv[n_edges:2 * n_edges]
    q = inv[2 * n_edges:].reshape(batch.negatives.shape)

    z, cache = forward(model, x[idx], return_cache=True)
    if z.shape[1] != 2:
        raise ShapeError("neighbor embedding expects a 2-D output model")
    attr_sum, rep_sum, dz = kernels.edge_forces(
        z, a, p, q, 1.0 / n_edges, repulsion_weight / n_edges, eps)
    out = LossBreakdown(attraction=attr_sum / n_edges,
                        repulsion=repulsion_weight * rep_sum / n_edges)
    if anchor_penalty is not None:
        value, g_anchor = anchor_penalty(z[a])
        out.surrogate = float(value)
        np.add.at(dz, a, g_anchor)
    grads, _ = backward(model, None, dz, cache=cache)
    return out, grads
