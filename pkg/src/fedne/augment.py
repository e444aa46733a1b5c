"""Intra-client data mixing.

Synthetic points are convex combinations of an original point and one of
its local k nearest neighbors, with the mixing weight drawn from a symmetric
Beta distribution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .geometry import Dataset, KnnGraph


@dataclass(frozen=True)
class MixingConfig:
    alpha: float = 0.2
    ratio: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ConfigError("mixing alpha must be positive")
        if self.ratio < 0:
            raise ConfigError("mixing ratio must be non-negative")


def mix_point(x_i, x_j, lam):
    x_i = np.asarray(x_i, dtype=np.float64)
    x_j = np.asarray(x_j, dtype=np.float64)
    if x_i.shape != x_j.shape:
        raise ShapeError(f"cannot mix shapes {x_i.shape} and {x_j.shape}")
    lam = np.asarray(lam, dtype=np.float64)
    if np.any((lam < 0) | (lam > 1)):
        raise ValueError("mixing weight must lie in [0, 1]")
    return lam * x_i + (1.0 - lam) * x_j


def mixing_weights(n: int, alpha: float, rng) -> np.ndarray:
    """``n`` draws from Beta(alpha, alpha), kept strictly inside (0, 1).

    Small ``alpha`` puts mass so close to the ends that the sampler rounds
    to exactly 0 or 1; those draws move to the nearest interior double.
    """
    lam = rng.beta(alpha, alpha, size=n)
    return np.clip(lam, np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0))


def augment_client(data: Dataset, graph: KnnGraph, cfg: MixingConfig, rng=None) -> Dataset:
    """Append ``round(ratio * N)`` mixed points to ``data``.

    Anchors cycle through the originals in order; each synthetic point takes
    its anchor's label and a fresh id above the largest existing one.
    """
    n = len(data)
    n_new = int(round(cfg.ratio * n))
    if n_new == 0:
        return data
    if graph.n_points != n:
        raise ShapeError("graph was not built on this dataset")
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    anchors = np.arange(n_new) % n
    picks = rng.integers(0, graph.k, size=n_new)
    partners = graph.neighbors[anchors, picks]
    lam = mixing_weights(n_new, cfg.alpha, rng)[:, None]
    synth = mix_point(data.points[anchors], data.points[partners], lam)
    fresh = data.ids.max() + 1 + np.arange(n_new)
    return Dataset(np.vstack([data.points, synth]),
                   np.concatenate([data.labels, data.labels[anchors]]),
                   np.concatenate([data.ids, fresh]))
