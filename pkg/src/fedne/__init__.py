"""Federated parametric neighbor embedding.

Trains one shared 2-D embedding network across simulated clients that never
exchange raw data.  FedNE adds two devices on top of FedAvg: surrogate
repulsion models, which let a client push its points away from other
clients' data, and intra-client data mixing, which densifies sparse local
kNN graphs.
"""

from .augment import MixingConfig, augment_client, mix_point
from .federation import Method, RunConfig, RunResult, aggregate, embed, run
from .geometry import Dataset, KnnGraph, build_knn, cauchy_kernel, pairwise_sq_dists
from .kernels import BACKEND
from .metrics import EvalReport, continuity, evaluate, knn_accuracy, trustworthiness
from .partition import PartitionSpec, partition_dirichlet, partition_shards
from .surrogate import GridSpec

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "Dataset", "EvalReport", "GridSpec", "KnnGraph", "Method", "MixingConfig",
    "PartitionSpec", "RunConfig", "RunResult", "aggregate", "augment_client", "build_knn",
    "cauchy_kernel", "continuity", "embed", "evaluate", "knn_accuracy", "mix_point",
    "pairwise_sq_dists", "partition_dirichlet", "partition_shards", "run", "trustworthiness",
]
