"""Surrogate repulsion models.

A client summarizes the repulsion its points exert with a small network
``R^2 -> R``: the input is a 2-D embedding position, the output estimates the
summed repulsive loss between that position and ``b`` random points of the
client.  Only these networks leave the client; they never see the client's
high-dimensional features.

Training data come from a regular lattice laid over the client's current
embedding (plus a margin); targets are recomputed from the current global
encoder every time the surrogate is refreshed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, DataError, ShapeError
from .nn import (AdamState, DenseLayer, Mlp, adam_step, backward, forward, init_mlp,
                 load_checkpoint, save_checkpoint)
from .objective import EPS, repulsion_loss


@dataclass(frozen=True)
class GridSpec:
    step: float = 0.3
    margin_fraction: float = 0.2
    max_points: int = 40_000

    def __post_init__(self):
        if not self.step > 0:
            raise ConfigError("grid step must be positive")
        if self.margin_fraction < 0:
            raise ConfigError("grid margin must be non-negative")
        if self.max_points < 1:
            raise ConfigError("max_points must be positive")


@dataclass
class SurrogateTrainSet:
    queries: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        self.queries = np.asarray(self.queries, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.float64)
        if self.queries.ndim != 2 or self.queries.shape[1] != 2:
            raise ShapeError("surrogate queries must be 2-D points")
        if self.targets.shape != (self.queries.shape[0],):
            raise ShapeError("need one target per query")
        if not (np.all(np.isfinite(self.targets)) and np.all(self.targets >= 0)):
            raise DataError("surrogate targets must be finite and non-negative")

    def __len__(self):
        return self.targets.shape[0]


@dataclass
class SurrogateModel:
    net: Mlp
    owner: int
    round_built: int
    owner_size: int

    def __post_init__(self):
        if self.net.input_dim != 2 or self.net.output_dim != 1:
            raise ShapeError("a surrogate maps 2-D points to a scalar")
        if self.owner_size <= 0:
            raise DataError("owner_size must be positive")

    def __call__(self, z):
        return forward(self.net, z)[:, 0]

    @property
    def meta(self) -> dict:
        return {"owner": int(self.owner), "round": int(self.round_built),
                "owner_size": int(self.owner_size)}


def _lattice_axis(lo, hi, step):
    count = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return lo + step * np.arange(count)


def grid_step(client_embeddings, spec: GridSpec) -> float:
    """Lattice spacing actually used: ``spec.step`` inflated to respect ``max_points``."""
    lo, hi = _expanded_box(client_embeddings, spec)
    step = spec.step
    while True:
        nx = int(math.floor((hi[0] - lo[0]) / step + 1e-9)) + 1
        ny = int(math.floor((hi[1] - lo[1]) / step + 1e-9)) + 1
        if nx * ny <= spec.max_points:
            return step
        step *= max(math.sqrt(nx * ny / spec.max_points), 1.0 + 1e-6)


def _expanded_box(client_embeddings, spec):
    z = np.asarray(client_embeddings, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] != 2 or z.shape[0] < 1:
        raise ShapeError("need at least one 2-D embedding")
    lo, hi = z.min(axis=0), z.max(axis=0)
    pad = spec.margin_fraction * (hi - lo)
    return lo - pad, hi + pad


def sample_grid(client_embeddings, spec: GridSpec = GridSpec()) -> np.ndarray:
    """Regular lattice over the client's bounding box grown by the margin."""
    lo, hi = _expanded_box(client_embeddings, spec)
    step = grid_step(client_embeddings, spec)
    gx = _lattice_axis(lo[0], hi[0], step)
    gy = _lattice_axis(lo[1], hi[1], step)
    xx, yy = np.meshgrid(gx, gy, indexing="ij")
    return np.column_stack([xx.ravel(), yy.ravel()])


def build_targets(queries, client_embeddings, b: int, rng, eps: float = EPS) -> SurrogateTrainSet:
    """Per query, the summed clamped repulsion to ``b`` random client embeddings."""
    q = np.asarray(queries, dtype=np.float64)
    z = np.asarray(client_embeddings, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] == 0:
        raise DataError("client embeddings are empty")
    if b < 1:
        raise ConfigError("b must be at least 1")
    draws = rng.integers(0, z.shape[0], size=(q.shape[0], b))
    loss, _, _ = repulsion_loss(q[:, None, :], z[draws], eps)
    return SurrogateTrainSet(q, loss.sum(axis=1))


def expected_targets(queries, client_embeddings, b: int, eps: float = EPS,
                     chunk: int = 4096) -> SurrogateTrainSet:
    """Noise-free counterpart of :func:`build_targets`.

    ``b`` times the mean clamped repulsion to *all* client embeddings, i.e.
    the expectation of the sampled target over the ``b`` uniform draws.
    """
    q = np.asarray(queries, dtype=np.float64)
    z = np.asarray(client_embeddings, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] == 0:
        raise DataError("client embeddings are empty")
    out = np.empty(q.shape[0])
    rows = max(1, chunk * 64 // z.shape[0])
    for s in range(0, q.shape[0], rows):
        loss, _, _ = repulsion_loss(q[s:s + rows, None, :], z[None, :, :], eps)
        out[s:s + rows] = b * loss.mean(axis=1)
    return SurrogateTrainSet(q, out)


def new_surrogate(owner: int, owner_size: int, hidden: int = 32, seed=0) -> SurrogateModel:
    return SurrogateModel(init_mlp([2, hidden, 1], seed=seed), owner, -1, owner_size)


def mse(model: SurrogateModel, trainset: SurrogateTrainSet) -> float:
    r = model(trainset.queries) - trainset.targets
    return float(np.mean(r * r))


def r_squared(model: SurrogateModel, trainset: SurrogateTrainSet) -> float:
    var = float(np.var(trainset.targets))
    return 1.0 - mse(model, trainset) / var if var > 0 else float("nan")


def _standardize(net: Mlp, shift, scale, y_shift, y_scale) -> Mlp:
    # reparametrize so that net(x) == y_shift + y_scale * out((x - shift) / scale)
    first, *middle, last = net.layers
    w = first.weights * scale[None, :]
    b = first.biases + first.weights @ shift
    layers = [DenseLayer(w, b, first.activation), *middle]
    layers.append(DenseLayer(last.weights / y_scale, (last.biases - y_shift) / y_scale,
                             last.activation))
    if len(net.layers) == 1:
        layers = [DenseLayer(w / y_scale, (b - y_shift) / y_scale, first.activation)]
    return Mlp(layers)


def _unstandardize(net: Mlp, shift, scale, y_shift, y_scale) -> Mlp:
    first, *middle, last = net.layers
    w = first.weights / scale[None, :]
    b = first.biases - w @ shift
    if len(net.layers) == 1:
        return Mlp([DenseLayer(w * y_scale, b * y_scale + y_shift, first.activation)])
    layers = [DenseLayer(w, b, first.activation), *middle]
    layers.append(DenseLayer(last.weights * y_scale, last.biases * y_scale + y_shift,
                             last.activation))
    return Mlp(layers)


def train_surrogate(prev: SurrogateModel, trainset: SurrogateTrainSet, epochs: int = 200,
                    lr: float = 3e-3, round_built: int | None = None,
                    batch_size: int | None = 128, rng=None,
                    final_lr: float | None = None) -> SurrogateModel:
    """Fit ``prev`` (warm start) to ``trainset`` by Adam on the mean squared error.

    Optimization runs on standardized queries and targets; the affine maps
    are folded into the first and last layer, so the returned network still
    takes raw 2-D positions and predicts raw repulsion.  The weights of a
    surrogate that was never trained (``round_built < 0``) are taken to be in
    standardized coordinates already.  ``batch_size=None``
    means one full-batch step per epoch.  A fresh Adam state is used on
    every call.
    """
    if len(trainset) == 0:
        raise DataError("empty surrogate training set")
    if epochs <= 0:
        return prev
    x, y = trainset.queries, trainset.targets
    shift, scale = x.mean(axis=0), x.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    y_shift, y_scale = float(y.mean()), float(y.std())
    y_scale = y_scale if y_scale > 0 else 1.0
    xs, ys = (x - shift) / scale, (y - y_shift) / y_scale

    # a never-trained network is read as already living in standardized space
    fresh = prev.round_built < 0
    net = prev.net if fresh else _standardize(prev.net, shift, scale, y_shift, y_scale)
    state = AdamState.for_model(net, lr=lr)
    n = len(trainset)
    bs = n if batch_size is None else max(1, min(int(batch_size), n))
    if rng is None:
        rng = np.random.default_rng(0)
    for epoch in range(epochs):
        if final_lr is not None and epochs > 1:
            # geometric annealing from lr to final_lr
            state = state.with_lr(lr * (final_lr / lr) ** (epoch / (epochs - 1)))
        order = np.arange(n) if bs == n else rng.permutation(n)
        for start in range(0, n, bs):
            sel = order[start:start + bs]
            pred, cache = forward(net, xs[sel], return_cache=True)
            g = (2.0 / sel.size) * (pred[:, 0] - ys[sel])
            grads, _ = backward(net, None, g[:, None], cache=cache)
            net, state = adam_step(net, grads, state)
    net = _unstandardize(net, shift, scale, y_shift, y_scale)
    built = prev.round_built if round_built is None else round_built
    return replace(prev, net=net, round_built=built)


def surrogate_penalty(models, weights, embedded):
    """Weighted sum over models of the mean surrogate output on ``embedded``.

    Returns ``(value, grad)`` with ``grad`` shaped like ``embedded``.
    """
    models = list(models)
    weights = list(weights)
    if len(models) != len(weights):
        raise ShapeError("models and weights must align")
    z = np.atleast_2d(np.asarray(embedded, dtype=np.float64))
    value = 0.0
    grad = np.zeros_like(z)
    if not models or z.shape[0] == 0:
        return value, grad
    n = z.shape[0]
    for m, w in zip(models, weights):
        if w < 0:
            raise ConfigError("surrogate weights must be non-negative")
        out, cache = forward(m.net, z, return_cache=True)
        value += w * float(out.mean())
        _, gz = backward(m.net, None, np.full((n, 1), w / n), cache=cache)
        grad += gz
    return value, grad


class SurrogateBank:
    """Several one-hidden-layer surrogates fused into one wide network.

    Equivalent to :func:`surrogate_penalty` for fixed models and weights but
    evaluates all of them with a single pair of matrix products.
    """

    def __init__(self, models, weights):
        models, weights = list(models), [float(w) for w in weights]
        if len(models) != len(weights):
            raise ShapeError("models and weights must align")
        self.models, self.weights = models, weights
        self.empty = not models
        if self.empty:
            return
        for m in models:
            if len(m.net.layers) != 2:
                raise ShapeError("SurrogateBank handles single-hidden-layer surrogates only")
        self.w1 = np.vstack([m.net.layers[0].weights for m in models])
        self.b1 = np.concatenate([m.net.layers[0].biases for m in models])
        self.v = np.concatenate([w * m.net.layers[1].weights[0] for m, w in zip(models, weights)])
        self.c = sum(w * float(m.net.layers[1].biases[0]) for m, w in zip(models, weights))

    def __call__(self, embedded):
        z = np.atleast_2d(np.asarray(embedded, dtype=np.float64))
        if self.empty or z.shape[0] == 0:
            return 0.0, np.zeros_like(z)
        n = z.shape[0]
        pre = z @ self.w1.T
        pre += self.b1
        active = pre > 0
        h = np.where(active, pre, 0.0)
        value = float((h @ self.v).mean()) + self.c
        grad = (active * (self.v / n)) @ self.w1
        return value, grad


def save_surrogate(model: SurrogateModel, path) -> None:
    save_checkpoint(model.net, path, {"kind": "surrogate", **model.meta})


def load_surrogate(path) -> SurrogateModel:
    net, meta = load_checkpoint(path)
    try:
        return SurrogateModel(net, int(meta["owner"]), int(meta["round"]), int(meta["owner_size"]))
    except (KeyError, TypeError, ValueError):
        raise DataError(f"{path}: not a surrogate checkpoint") from None
