"""In-process federated simulation of parametric neighbor embedding.

One round of FedNE:

1. the server broadcasts the global encoder;
2. each participant embeds its own data with it and refits its surrogate
   repulsion model on a lattice around that embedding;
3. surrogates (never raw data) are exchanged;
4. each participant trains locally on its mixed data with the NE loss plus
   the received surrogates;
5. the server averages the returned parameters weighted by client size.

FedAvg+NE and FedProx+NE skip steps 2-3 and the mixing, LocalNE never
synchronizes, GlobalNE trains a single model on the pooled data.

Every client draws from its own RNG stream keyed by ``(seed, purpose,
client, round)``, so results do not depend on the order in which clients
are visited.
"""

from __future__ import annotations

import logging
import math
import time
from pathlib import Path
from dataclasses import asdict, dataclass, field, replace
from enum import Enum

import numpy as np

from .augment import MixingConfig, augment_client
from .errors import ConfigError, ShapeError
from .geometry import Dataset, KnnGraph, build_knn
from .nn import (AdamState, Mlp, ParamVector, adam_step, flatten, flatten_grads,
                 forward, init_mlp, save_checkpoint, unflatten)
from .objective import EPS, LossBreakdown, local_ne_loss, sample_edge_batch
from .partition import PartitionSpec, make_partition
from .surrogate import (GridSpec, SurrogateBank, SurrogateModel, build_targets,
                        expected_targets, new_surrogate, sample_grid, train_surrogate)

log = logging.getLogger(__name__)

# RNG stream purposes
_INIT, _BATCH, _MIX, _SURR_DATA, _SURR_INIT, _PARTICIPANTS = range(6)


class Method(str, Enum):
    FEDNE = "fedne"
    FEDAVG = "fedavg"
    FEDPROX = "fedprox"
    LOCAL = "local"
    GLOBAL = "global"

    @classmethod
    def parse(cls, value) -> "Method":
        if isinstance(value, cls):
            return value
        key = str(value).lower().replace("+", "").replace("-", "").replace("_", "")
        if key.endswith("ne") and key != "fedne":
            key = key[:-2]
        try:
            return cls(key)
        except ValueError:
            raise ConfigError(f"unknown method {value!r}") from None


@dataclass(frozen=True)
class RunConfig:
    method: Method = Method.FEDNE
    partition: PartitionSpec = PartitionSpec()
    rounds: int = 100
    local_epochs: int = 1
    batch_edges: int = 512
    b: int = 5
    k: int = 7
    lr: float = 1e-3
    lr_milestones: tuple = (0.3, 0.6)
    lr_decay: float = 0.1
    hidden: tuple = (256, 256, 256)
    prox_mu: float = 0.01
    participation_fraction: float = 1.0
    use_surrogate: bool = True
    surrogate_start_fraction: float = 0.3
    surrogate_period: int = 1
    surrogate_hidden: int = 32
    surrogate_epochs: int = 3
    surrogate_initial_epochs: int = 200
    surrogate_lr: float = 3e-3
    surrogate_batch: int = 128
    surrogate_targets: str = "sampled"
    mixing: MixingConfig = MixingConfig()
    grid: GridSpec = GridSpec()
    eps: float = EPS
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "method", Method.parse(self.method))
        if not 0 < self.participation_fraction <= 1:
            raise ConfigError("participation_fraction must lie in (0, 1]")
        if not 0 <= self.surrogate_start_fraction <= 1:
            raise ConfigError("surrogate_start_fraction must lie in [0, 1]")
        if self.rounds < 0 or self.local_epochs < 0:
            raise ConfigError("rounds and local_epochs must be non-negative")
        if self.batch_edges < 1 or self.b < 1 or self.k < 1:
            raise ConfigError("batch_edges, b and k must be positive")
        if self.surrogate_period < 1:
            raise ConfigError("surrogate_period must be at least 1")
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        if self.surrogate_targets not in ("sampled", "expected"):
            raise ConfigError("surrogate_targets must be 'sampled' or 'expected'")

    @property
    def mixing_enabled(self) -> bool:
        return self.method is Method.FEDNE and self.mixing.ratio > 0

    @property
    def surrogate_enabled(self) -> bool:
        return self.method is Method.FEDNE and self.use_surrogate

    def lr_at(self, t: int) -> float:
        passed = sum(1 for f in self.lr_milestones if t >= f * self.rounds)
        return self.lr * self.lr_decay ** passed

    def surrogate_active(self, t: int) -> bool:
        return self.surrogate_enabled and t >= self.surrogate_start_fraction * self.rounds

    def to_dict(self) -> dict:
        out = asdict(self)
        out["method"] = self.method.value
        out["hidden"] = list(self.hidden)
        out["lr_milestones"] = list(self.lr_milestones)
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        raw = dict(raw)
        nested = {"partition": PartitionSpec, "mixing": MixingConfig, "grid": GridSpec}
        for key, typ in nested.items():
            if isinstance(raw.get(key), dict):
                raw[key] = typ(**raw[key])
        for key in ("hidden", "lr_milestones"):
            if key in raw:
                raw[key] = tuple(raw[key])
        try:
            return cls(**raw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


def rng_stream(seed, purpose, client=0, rnd=0):
    return np.random.default_rng([int(seed), purpose, int(client), int(rnd)])


@dataclass
class ClientState:
    id: int
    raw_data: Dataset
    aug_data: Dataset
    graph: KnnGraph
    optimizer: AdamState | None = None
    model: Mlp | None = None  # only LocalNE keeps a private model
    surrogate: SurrogateModel | None = None

    @property
    def size(self) -> int:
        return len(self.raw_data)


@dataclass
class ClientUpdate:
    """What a client sends to the server: parameters, its size, its surrogate."""

    client: int
    params: ParamVector
    size: int
    surrogate: SurrogateModel | None = None


@dataclass
class Broadcast:
    """What the server sends to a participant."""

    round: int
    params: ParamVector
    surrogates: list
    surrogate_weights: list


def validate_message(msg) -> None:
    """Only parameter vectors, sizes and 2-D surrogates may cross the client boundary."""
    if isinstance(msg, ClientUpdate):
        if not isinstance(msg.params, ParamVector) or not isinstance(msg.size, int):
            raise ShapeError("malformed client update")
        if msg.surrogate is not None and msg.surrogate.net.input_dim != 2:
            raise ShapeError("surrogates must take 2-D inputs")
    elif isinstance(msg, Broadcast):
        for s in msg.surrogates:
            if not isinstance(s, SurrogateModel) or s.net.input_dim != 2:
                raise ShapeError("broadcast may only carry 2-D surrogates")
    else:
        raise ShapeError(f"unexpected message type {type(msg).__name__}")


@dataclass
class RunResult:
    model: Mlp
    log: list
    config: RunConfig
    client_models: list = field(default_factory=list)
    partition: list = field(default_factory=list)


def aggregate(params, sizes) -> ParamVector:
    """Size-weighted mean of parameter vectors (weights renormalized).

    Pairs are summed in a canonical order so the result is bitwise
    independent of the order they were passed in.
    """
    params, sizes = list(params), [int(s) for s in sizes]
    if not params or len(params) != len(sizes):
        raise ShapeError("need one size per parameter vector")
    layout = params[0].layout
    for p in params:
        if p.layout != layout or p.flat.shape != params[0].flat.shape:
            raise ShapeError("cannot aggregate models with different layouts")
    if any(s <= 0 for s in sizes):
        raise ShapeError("client sizes must be positive")
    total = sum(sizes)
    order = sorted(range(len(params)), key=lambda i: (sizes[i], params[i].flat.tobytes()))
    acc = np.zeros_like(params[0].flat)
    for i in order:
        acc += (sizes[i] / total) * params[i].flat
    return ParamVector(acc, layout)


def proximal_term(flat, flat_global, mu):
    """FedProx penalty ``mu/2 ||theta - theta_global||^2`` and its gradient."""
    d = flat - flat_global
    return 0.5 * mu * float(d @ d), mu * d


def encoder_dims(input_dim: int, cfg: RunConfig) -> list:
    return [input_dim, *cfg.hidden, 2]


def init_encoder(input_dim: int, cfg: RunConfig) -> Mlp:
    return init_mlp(encoder_dims(input_dim, cfg), seed=rng_stream(cfg.seed, _INIT))


def embed(model: Mlp, points, chunk: int = 8192) -> np.ndarray:
    x = getattr(points, "points", points)
    if x.shape[0] == 0:
        return np.zeros((0, model.output_dim))
    return np.vstack([forward(model, x[s:s + chunk]) for s in range(0, x.shape[0], chunk)])


def setup_clients(data: Dataset, parts, cfg: RunConfig) -> list:
    clients = []
    for m, idx in enumerate(parts):
        raw = data.subset(idx)
        if len(raw) < 2:
            log.warning("client %d has %d points and is skipped", m, len(raw))
            continue
        k = cfg.k
        if len(raw) <= k:
            k = len(raw) - 1
            log.warning("client %d holds %d points; using k=%d locally", m, len(raw), k)
        graph = build_knn(raw, k)
        aug = raw
        if cfg.mixing_enabled:
            aug = augment_client(raw, graph, cfg.mixing, rng=rng_stream(cfg.seed, _MIX, m))
            graph = build_knn(aug, k)
        clients.append(ClientState(m, raw, aug, graph))
    return clients


def _train_epochs(model, opt, points, graph, cfg, epochs, rng, repulsion_weight,
                  anchor_penalty=None, prox_params=None):
    steps = epochs * math.ceil(graph.n_edges / cfg.batch_edges)
    sums = np.zeros(4)
    for _ in range(steps):
        batch = sample_edge_batch(graph, cfg.batch_edges, cfg.b, rng)
        parts, grads = local_ne_loss(model, points, batch, repulsion_weight, cfg.eps,
                                     anchor_penalty)
        g = flatten_grads(grads)
        if prox_params is not None:
            value, g_prox = proximal_term(flatten(model).flat, prox_params.flat, cfg.prox_mu)
            parts.proximal = value
            g = g + g_prox
        model, opt = adam_step(model, g, opt)
        sums += (parts.attraction, parts.repulsion, parts.surrogate, parts.proximal)
    mean = sums / max(steps, 1)
    return model, opt, LossBreakdown(*mean), steps


def local_train(client: ClientState, global_params: ParamVector, cfg: RunConfig, t: int,
                total_size: int | None = None, bank: SurrogateBank | None = None):
    """One round of local optimization.  Returns ``(params, breakdown, steps)``.

    The client's Adam state persists across rounds (its learning rate follows
    the global schedule).  When the surrogate term is active the local
    repulsion is scaled by the client's share of the federation's data.
    """
    if cfg.local_epochs == 0:
        return global_params, LossBreakdown(), 0
    start = client.model if (cfg.method is Method.LOCAL and client.model is not None) \
        else unflatten(global_params)
    if client.optimizer is None:
        client.optimizer = AdamState.for_model(start, lr=cfg.lr_at(t))
    opt = client.optimizer.with_lr(cfg.lr_at(t))
    active = bank is not None and not bank.empty and cfg.surrogate_active(t)
    rep_weight = client.size / total_size if (active and total_size) else 1.0
    prox = global_params if cfg.method is Method.FEDPROX else None
    model, opt, parts, steps = _train_epochs(
        start, opt, client.aug_data.points, client.graph, cfg, cfg.local_epochs,
        rng_stream(cfg.seed, _BATCH, client.id, t), rep_weight,
        anchor_penalty=bank if active else None, prox_params=prox)
    client.optimizer = opt
    if cfg.method is Method.LOCAL:
        client.model = model
    return flatten(model), parts, steps


def refresh_surrogate(client: ClientState, global_model: Mlp, cfg: RunConfig, t: int,
                      grid: GridSpec | None = None) -> SurrogateModel:
    """Refit the client's surrogate against the current global encoder."""
    z = embed(global_model, client.raw_data)
    queries = sample_grid(z, grid or cfg.grid)
    rng = rng_stream(cfg.seed, _SURR_DATA, client.id, t)
    if cfg.surrogate_targets == "expected":
        trainset = expected_targets(queries, z, cfg.b, cfg.eps)
    else:
        trainset = build_targets(queries, z, cfg.b, rng, cfg.eps)
    prev = client.surrogate
    epochs = cfg.surrogate_epochs
    if prev is None:
        prev = new_surrogate(client.id, client.size, cfg.surrogate_hidden,
                             seed=rng_stream(cfg.seed, _SURR_INIT, client.id))
        epochs = max(epochs, cfg.surrogate_initial_epochs)
    client.surrogate = train_surrogate(prev, trainset, epochs, cfg.surrogate_lr, round_built=t,
                                       batch_size=cfg.surrogate_batch, rng=rng)
    return client.surrogate


def _mean_breakdown(items):
    if not items:
        return LossBreakdown()
    arr = np.array([[p.attraction, p.repulsion, p.surrogate, p.proximal] for p in items])
    return LossBreakdown(*arr.mean(axis=0))


def run_global(cfg: RunConfig, data: Dataset, on_round=None, checkpoint_dir=None) -> RunResult:
    """Centralized baseline: one model, pooled data, no mixing or surrogates."""
    model = init_encoder(data.dim, cfg)
    client = ClientState(0, data, data, build_knn(data, min(cfg.k, len(data) - 1)))
    opt = AdamState.for_model(model, lr=cfg.lr_at(0))
    records = []
    for t in range(cfg.rounds):
        tic = time.perf_counter()
        opt = opt.with_lr(cfg.lr_at(t))
        model, opt, parts, steps = _train_epochs(
            model, opt, data.points, client.graph, cfg, cfg.local_epochs,
            rng_stream(cfg.seed, _BATCH, 0, t), 1.0)
        _checkpoint(checkpoint_dir, t, flatten(model))
        rec = {"round": t, "method": cfg.method.value, "lr": cfg.lr_at(t),
               "participants": [0], "steps": steps, "surrogate_active": False,
               "exchanged_params": 0, **parts.as_dict(),
               "wall_time": time.perf_counter() - tic}
        records.append(rec)
        if on_round:
            on_round(rec)
    return RunResult(model, records, cfg, [model], [np.arange(len(data))])


def _checkpoint(directory, t, params):
    if directory is not None:
        Path(directory).mkdir(parents=True, exist_ok=True)
        save_checkpoint(unflatten(params), Path(directory) / f"round_{t:04d}.fne", {"round": t})


def run(cfg: RunConfig, data: Dataset, parts=None, on_round=None, message_hook=None,
        checkpoint_dir=None) -> RunResult:
    """Simulate ``cfg.rounds`` rounds and return the final model and per-round log.

    ``parts`` overrides the partition described by ``cfg.partition``.
    ``message_hook`` is called with every :class:`ClientUpdate` and
    :class:`Broadcast`, after validation.  With ``checkpoint_dir`` the global
    model is saved after every round.
    """
    if cfg.method is Method.GLOBAL:
        return run_global(cfg, data, on_round, checkpoint_dir)
    if parts is None:
        parts = make_partition(data, cfg.partition)
    clients = setup_clients(data, parts, cfg)
    if not clients:
        raise ConfigError("no client holds enough data to train")
    total = sum(c.size for c in clients)
    global_params = flatten(init_encoder(data.dim, cfg))
    n_part = max(1, int(round(cfg.participation_fraction * len(clients))))
    records = []

    def send(msg):
        validate_message(msg)
        if message_hook:
            message_hook(msg)

    for t in range(cfg.rounds):
        tic = time.perf_counter()
        if n_part < len(clients):
            chosen = rng_stream(cfg.seed, _PARTICIPANTS, 0, t).choice(
                len(clients), n_part, replace=False)
            participants = [clients[i] for i in sorted(chosen)]
        else:
            participants = clients
        global_model = unflatten(global_params)
        active = cfg.surrogate_active(t)
        exchanged = 0
        if active:
            since = t - math.ceil(cfg.surrogate_start_fraction * cfg.rounds)
            for c in participants:
                if c.surrogate is None or since % cfg.surrogate_period == 0:
                    refresh_surrogate(c, global_model, cfg, t)
                    exchanged += c.surrogate.net.n_params
        updates, losses, steps = [], [], 0
        for c in participants:
            others = [o.surrogate for o in clients if o is not c and o.surrogate is not None] \
                if active else []
            weights = [s.owner_size / total for s in others]
            send(Broadcast(t, global_params, others, weights))
            bank = SurrogateBank(others, weights) if others else None
            params, parts_c, n_steps = local_train(c, global_params, cfg, t, total, bank)
            steps += n_steps
            losses.append(parts_c)
            upd = ClientUpdate(c.id, params, c.size, c.surrogate if active else None)
            send(upd)
            updates.append(upd)
        if cfg.method is not Method.LOCAL:
            global_params = aggregate([u.params for u in updates], [u.size for u in updates])
            _checkpoint(checkpoint_dir, t, global_params)
        rec = {"round": t, "method": cfg.method.value, "lr": cfg.lr_at(t),
               "participants": [c.id for c in participants], "steps": steps,
               "surrogate_active": bool(active), "exchanged_params": int(exchanged),
               **_mean_breakdown(losses).as_dict(),
               "wall_time": time.perf_counter() - tic}
        records.append(rec)
        if on_round:
            on_round(rec)

    if cfg.method is Method.LOCAL:
        client_models = [c.model if c.model is not None else unflatten(global_params)
                         for c in clients]
        return RunResult(client_models[0], records, cfg, client_models, parts)
    final = unflatten(global_params)
    return RunResult(final, records, cfg, [final], parts)


def with_method(cfg: RunConfig, method, **changes) -> RunConfig:
    return replace(cfg, method=Method.parse(method), **changes)
