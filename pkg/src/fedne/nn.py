"""Dense MLP engine with hand-derived backpropagation and Adam.

The two model families used by the package are plain ReLU MLPs: the
encoder mapping ``D``-dimensional inputs to 2-D embeddings, and the small
surrogate network mapping a 2-D point to a scalar.  Models are treated as
values: :func:`adam_step` returns a new model rather than mutating the one it
was given.

Parameter order for flattening is layer by layer, weights row-major
``(out, in)`` followed by the bias vector.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError, ShapeError

RELU = "relu"
IDENTITY = "identity"
_ACT_CODES = {IDENTITY: 0, RELU: 1}
_ACT_NAMES = {v: k for k, v in _ACT_CODES.items()}

CHECKPOINT_MAGIC = b"FNE1"


@dataclass
class DenseLayer:
    weights: np.ndarray
    biases: np.ndarray
    activation: str = IDENTITY

    def __post_init__(self):
        self.weights = np.asarray(self.weights)
        self.biases = np.asarray(self.biases, dtype=self.weights.dtype)
        if self.weights.ndim != 2:
            raise ShapeError(f"weights must be 2-D, got shape {self.weights.shape}")
        if self.biases.shape != (self.weights.shape[0],):
            raise ShapeError(
                f"bias shape {self.biases.shape} does not match "
                f"{self.weights.shape[0]} output units"
            )
        if self.activation not in _ACT_CODES:
            raise ValueError(f"unknown activation {self.activation!r}")
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.biases))):
            raise DataError("layer parameters must be finite")

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]


@dataclass
class Mlp:
    layers: list

    def __post_init__(self):
        if not self.layers:
            raise ShapeError("an Mlp needs at least one layer")
        for i, (a, b) in enumerate(zip(self.layers[:-1], self.layers[1:])):
            if a.out_dim != b.in_dim:
                raise ShapeError(
                    f"layer {i} outputs {a.out_dim} units but layer {i + 1} expects {b.in_dim}"
                )
        if self.layers[-1].activation != IDENTITY:
            raise ShapeError("the final layer must use the identity activation")

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def dtype(self):
        return self.layers[0].weights.dtype

    @property
    def layout(self) -> tuple:
        return tuple((l.out_dim, l.in_dim, l.activation) for l in self.layers)

    @property
    def n_params(self) -> int:
        return sum(l.weights.size + l.biases.size for l in self.layers)

    def __call__(self, inputs):
        return forward(self, inputs)


@dataclass
class ParamVector:
    """Flat parameter vector together with the layout needed to rebuild a model."""

    flat: np.ndarray
    layout: tuple

    def __post_init__(self):
        self.flat = np.asarray(self.flat)
        self.layout = tuple((int(o), int(i), str(a)) for o, i, a in self.layout)


@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.first_moment.shape != self.second_moment.shape:
            raise ShapeError("Adam moment buffers must share a shape")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in [0, 1)")
        if not self.eps > 0:
            raise ValueError("eps must be positive")

    @classmethod
    def for_model(cls, model: Mlp, lr: float = 1e-3, **kwargs) -> "AdamState":
        zeros = np.zeros(model.n_params, dtype=model.dtype)
        return cls(zeros, zeros.copy(), lr=lr, **kwargs)

    def with_lr(self, lr: float) -> "AdamState":
        return AdamState(self.first_moment, self.second_moment, self.step_count,
                         lr, self.beta1, self.beta2, self.eps)


@dataclass
class ForwardCache:
    inputs: list = field(default_factory=list)
    preacts: list = field(default_factory=list)


def _as_batch(model: Mlp, inputs) -> np.ndarray:
    x = np.asarray(inputs, dtype=model.dtype)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise ShapeError(
            f"model expects inputs of length {model.input_dim}, got shape {np.shape(inputs)}"
        )
    return x


def forward(model: Mlp, inputs, return_cache: bool = False):
    """Evaluate ``model`` on a batch (rows are samples).

    With ``return_cache=True`` also returns the per-layer inputs and
    pre-activations that :func:`backward` needs.
    """
    h = _as_batch(model, inputs)
    cache = ForwardCache()
    for layer in model.layers:
        cache.inputs.append(h)
        a = h @ layer.weights.T
        a += layer.biases
        cache.preacts.append(a)
        h = np.maximum(a, 0.0) if layer.activation == RELU else a
    if return_cache:
        return h, cache
    return h


def backward(model: Mlp, inputs, output_grads, cache: ForwardCache | None = None):
    """Backpropagate ``output_grads`` (dLoss/dOutput) through ``model``.

    Returns ``(param_grads, input_grads)`` where ``param_grads`` is a list of
    ``(dW, db)`` pairs aligned with ``model.layers``.
    """
    if cache is None:
        _, cache = forward(model, inputs, return_cache=True)
    g = np.asarray(output_grads, dtype=model.dtype)
    if g.ndim == 1:
        g = g[None, :]
    n = cache.inputs[0].shape[0]
    if g.shape != (n, model.output_dim):
        raise ShapeError(
            f"output_grads shape {g.shape} does not match forward output {(n, model.output_dim)}"
        )
    grads = [None] * len(model.layers)
    for idx in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[idx]
        if layer.activation == RELU:
            g = g * (cache.preacts[idx] > 0)
        grads[idx] = (g.T @ cache.inputs[idx], g.sum(axis=0))
        g = g @ layer.weights
    return grads, g


def flatten(model: Mlp) -> ParamVector:
    parts = []
    for layer in model.layers:
        parts.append(layer.weights.ravel())
        parts.append(layer.biases)
    return ParamVector(np.concatenate(parts), model.layout)


def flatten_grads(grads) -> np.ndarray:
    return np.concatenate([np.concatenate([dw.ravel(), db]) for dw, db in grads])


def unflatten(pv: ParamVector) -> Mlp:
    expected = sum(o * i + o for o, i, _ in pv.layout)
    if pv.flat.ndim != 1 or pv.flat.size != expected:
        raise ShapeError(f"layout needs {expected} values, got {pv.flat.size}")
    layers, pos = [], 0
    for out_dim, in_dim, act in pv.layout:
        w = pv.flat[pos:pos + out_dim * in_dim].reshape(out_dim, in_dim).copy()
        pos += out_dim * in_dim
        b = pv.flat[pos:pos + out_dim].copy()
        pos += out_dim
        layers.append(DenseLayer(w, b, act))
    return Mlp(layers)


def init_mlp(dims: Sequence[int], activations: Sequence[str] | None = None,
             seed=0, dtype=np.float64) -> Mlp:
    """Random MLP with He-uniform ReLU layers and zero biases.

    ``dims`` lists the widths from input to output (``[784, 256, 256, 256, 2]``
    gives four layers).  By default every layer but the last is ReLU.  The
    identity output layer is drawn with the LeCun-uniform bound.
    """
    dims = [int(d) for d in dims]
    if len(dims) < 2:
        raise ShapeError("dims must list at least an input and an output width")
    if any(d < 1 for d in dims):
        raise ShapeError("all widths must be positive")
    n_layers = len(dims) - 1
    if activations is None:
        activations = [RELU] * (n_layers - 1) + [IDENTITY]
    if len(activations) != n_layers:
        raise ShapeError(f"need {n_layers} activations, got {len(activations)}")
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out, act in zip(dims[:-1], dims[1:], activations):
        bound = np.sqrt((6.0 if act == RELU else 3.0) / fan_in)
        w = rng.uniform(-bound, bound, size=(fan_out, fan_in)).astype(dtype)
        layers.append(DenseLayer(w, np.zeros(fan_out, dtype=dtype), act))
    return Mlp(layers)


def adam_step(model: Mlp, grads, state: AdamState):
    """One Adam update.  ``grads`` is a list of ``(dW, db)`` or a flat vector."""
    g = grads if isinstance(grads, np.ndarray) and grads.ndim == 1 else flatten_grads(grads)
    pv = flatten(model)
    if g.shape != pv.flat.shape or state.first_moment.shape != pv.flat.shape:
        raise ShapeError(
            f"gradient/state size mismatch: params {pv.flat.size}, grads {g.size}, "
            f"state {state.first_moment.size}"
        )
    t = state.step_count + 1
    m = state.beta1 * state.first_moment + (1.0 - state.beta1) * g
    v = state.beta2 * state.second_moment + (1.0 - state.beta2) * (g * g)
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    flat = pv.flat - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    new_state = AdamState(m, v, t, state.lr, state.beta1, state.beta2, state.eps)
    return unflatten(ParamVector(flat, pv.layout)), new_state


# -- checkpoints -------------------------------------------------------------

def to_bytes(model: Mlp, meta: dict | None = None) -> bytes:
    """Serialize to the little-endian ``FNE1`` block.

    Layout: magic, u32 layer count, per layer u32 (out, in, activation code),
    u32 metadata length + UTF-8 JSON metadata, u64 value count, f64 values.
    """
    pv = flatten(model)
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    parts = [CHECKPOINT_MAGIC, struct.pack("<I", len(pv.layout))]
    for out_dim, in_dim, act in pv.layout:
        parts.append(struct.pack("<III", out_dim, in_dim, _ACT_CODES[act]))
    parts.append(struct.pack("<I", len(meta_bytes)))
    parts.append(meta_bytes)
    parts.append(struct.pack("<Q", pv.flat.size))
    parts.append(pv.flat.astype("<f8").tobytes())
    return b"".join(parts)


def from_bytes(blob: bytes, dtype=np.float64):
    """Inverse of :func:`to_bytes`; returns ``(model, meta)``."""
    if blob[:4] != CHECKPOINT_MAGIC:
        raise ShapeError("not an FNE1 checkpoint (bad magic)")
    try:
        pos = 4
        (n_layers,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        layout = []
        for _ in range(n_layers):
            out_dim, in_dim, code = struct.unpack_from("<III", blob, pos)
            pos += 12
            layout.append((out_dim, in_dim, _ACT_NAMES[code]))
        (meta_len,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        meta = json.loads(blob[pos:pos + meta_len].decode("utf-8"))
        pos += meta_len
        (n_values,) = struct.unpack_from("<Q", blob, pos)
        pos += 8
    except (struct.error, KeyError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ShapeError(f"corrupt FNE1 header: {exc}") from exc
    if len(blob) - pos != 8 * n_values:
        raise ShapeError(
            f"checkpoint declares {n_values} values but carries {(len(blob) - pos) // 8}"
        )
    flat = np.frombuffer(blob, dtype="<f8", count=n_values, offset=pos).astype(dtype)
    return unflatten(ParamVector(flat, tuple(layout))), meta


def save_checkpoint(model: Mlp, path, meta: dict | None = None) -> None:
    Path(path).write_bytes(to_bytes(model, meta))


def load_checkpoint(path, dtype=np.float64):
    return from_bytes(Path(path).read_bytes(), dtype=dtype)


def to_text(model: Mlp, meta: dict | None = None) -> str:
    """Human-readable JSON dump of layout and parameters (debugging aid)."""
    doc = {
        "format": "FNE1",
        "meta": meta or {},
        "layers": [
            {"out": l.out_dim, "in": l.in_dim, "activation": l.activation,
             "weights": l.weights.tolist(), "biases": l.biases.tolist()}
            for l in model.layers
        ],
    }
    return json.dumps(doc, indent=1)


def from_text(text: str):
    doc = json.loads(text)
    layers = [DenseLayer(np.array(l["weights"], dtype=np.float64),
                         np.array(l["biases"], dtype=np.float64), l["activation"])
              for l in doc["layers"]]
    return Mlp(layers), doc.get("meta", {})
