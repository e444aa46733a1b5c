"""Non-IID client partitions (Dirichlet label skew and class shards)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, PartitionError
from .geometry import Dataset


@dataclass(frozen=True)
class PartitionSpec:
    scheme: str = "dirichlet"
    num_clients: int = 10
    alpha: float = 0.1
    classes_per_client: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.scheme not in ("dirichlet", "shards"):
            raise ConfigError(f"unknown partition scheme {self.scheme!r}")
        if self.num_clients < 1:
            raise ConfigError("num_clients must be at least 1")
        if self.scheme == "dirichlet" and not self.alpha > 0:
            raise ConfigError("Dirichlet alpha must be positive")
        if self.scheme == "shards" and self.classes_per_client < 1:
            raise ConfigError("classes_per_client must be at least 1")


def _labels(data):
    return data.labels if isinstance(data, Dataset) else np.asarray(data, dtype=np.int64)


def _largest_remainder(weights, total):
    raw = np.asarray(weights, dtype=np.float64) * total
    counts = np.floor(raw).astype(np.int64)
    short = int(total - counts.sum())
    if short > 0:
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def partition_dirichlet(data, num_clients: int, alpha: float, seed=0,
                        repair_empty: bool = True) -> list:
    """Per class, split its (shuffled) members by proportions drawn from Dir(alpha).

    Returns one sorted index array per client.  With ``repair_empty`` a client
    that received nothing takes one point from the currently largest client.
    """
    labels = _labels(data)
    n = labels.shape[0]
    if num_clients < 1:
        raise PartitionError("need at least one client")
    if n < num_clients:
        raise PartitionError(f"{n} points cannot cover {num_clients} clients")
    if not alpha > 0:
        raise PartitionError("alpha must be positive")
    rng = np.random.default_rng(seed)
    parts = [[] for _ in range(num_clients)]
    for c in np.unique(labels):
        members = rng.permutation(np.flatnonzero(labels == c))
        q = rng.dirichlet(np.full(num_clients, float(alpha)))
        counts = _largest_remainder(q, members.size)
        for m, chunk in enumerate(np.split(members, np.cumsum(counts)[:-1])):
            parts[m].extend(chunk.tolist())
    if repair_empty:
        for m in range(num_clients):
            if not parts[m]:
                donor = max(range(num_clients), key=lambda j: (len(parts[j]), -j))
                parts[m].append(parts[donor].pop())
    return [np.sort(np.asarray(p, dtype=np.int64)) for p in parts]


def _deal_classes(classes, num_clients, per_client, rng, attempts=200):
    n_slots = num_clients * per_client
    reps = -(-n_slots // classes.size)
    best = None
    for _ in range(attempts):
        slots = np.concatenate([rng.permutation(classes) for _ in range(reps)])[:n_slots]
        slots = rng.permutation(slots).reshape(num_clients, per_client)
        dupes = sum(per_client - np.unique(row).size for row in slots)
        if best is None or dupes < best[0]:
            best = (dupes, slots)
        if dupes == 0:
            break
    return best[1]


def partition_shards(data, num_clients: int, classes_per_client: int, seed=0) -> list:
    """Give every client ``classes_per_client`` class slots; split each class
    equally (after shuffling) among the clients holding it."""
    labels = _labels(data)
    classes = np.unique(labels)
    if num_clients * classes_per_client < classes.size:
        raise PartitionError(
            f"{num_clients} clients x {classes_per_client} classes cannot host "
            f"{classes.size} classes"
        )
    rng = np.random.default_rng(seed)
    slots = _deal_classes(classes, num_clients, classes_per_client, rng)
    parts = [[] for _ in range(num_clients)]
    for c in classes:
        holders = [m for m in range(num_clients) if c in slots[m]]
        members = rng.permutation(np.flatnonzero(labels == c))
        if members.size < len(holders):
            raise PartitionError(
                f"class {c} has {members.size} samples for {len(holders)} holders"
            )
        for m, chunk in zip(holders, np.array_split(members, len(holders))):
            parts[m].extend(chunk.tolist())
    return [np.sort(np.asarray(p, dtype=np.int64)) for p in parts]


def make_partition(data, spec: PartitionSpec) -> list:
    if spec.scheme == "dirichlet":
        return partition_dirichlet(data, spec.num_clients, spec.alpha, spec.seed)
    return partition_shards(data, spec.num_clients, spec.classes_per_client, spec.seed)
