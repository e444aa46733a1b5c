"""Dataset files, synthetic blobs, embedding export and SVG scatter plots.

File formats
------------
CSV dataset
    header ``id,label,f0,...,f{D-1}``, one row per point.
``FNED`` binary dataset
    magic ``FNED``, little-endian u32 N, u32 D, u32 label flag (0 or 1),
    N*D float32 features row-major, then (if flagged) N int32 labels.
    Ids are implicit (``0..N-1``).
Embedding CSV
    header ``id,label,x,y`` with full double precision.
Index file
    one non-negative integer per line (a client's rows in the dataset).
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from xml.sax.saxutils import quoteattr

import numpy as np

from .errors import ConfigError, DataError
from .geometry import Dataset

DATASET_MAGIC = b"FNED"

PALETTE = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
           "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"]


@dataclass(frozen=True)
class BlobSpec:
    num_clusters: int = 10
    points_per_cluster: int = 200
    dim: int = 50
    cluster_std: float = 1.0
    separation: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if min(self.num_clusters, self.points_per_cluster, self.dim) < 1:
            raise ConfigError("blob counts and dimension must be positive")
        if self.cluster_std < 0 or self.separation < 0:
            raise ConfigError("cluster_std and separation must be non-negative")


def blob_centers(spec: BlobSpec) -> np.ndarray:
    """Cluster means: scaled unit vectors, so every pair sits ``separation`` apart.

    Beyond ``dim`` clusters the axes are reused with flipped sign and then
    growing multiples (pairwise distances are no longer all equal).
    """
    centers = np.zeros((spec.num_clusters, spec.dim))
    scale = spec.separation / math.sqrt(2.0)
    for c in range(spec.num_clusters):
        axis, lap = c % spec.dim, c // spec.dim
        sign = -1.0 if lap % 2 else 1.0
        centers[c, axis] = sign * scale * (1 + lap // 2)
    return centers


def gen_blobs(spec: BlobSpec) -> Dataset:
    rng = np.random.default_rng(spec.seed)
    centers = blob_centers(spec)
    labels = np.repeat(np.arange(spec.num_clusters), spec.points_per_cluster)
    noise = rng.standard_normal((labels.size, spec.dim)) * spec.cluster_std
    return Dataset(centers[labels] + noise, labels)


def fingerprint(data: Dataset) -> dict:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(data.points).tobytes())
    h.update(np.ascontiguousarray(data.labels).tobytes())
    return {"sha256": h.hexdigest(), "n": len(data), "dim": data.dim,
            "classes": int(np.unique(data.labels[data.labels >= 0]).size)}


# -- dataset files ------------------------------------------------------------

def save_csv(data: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "label", *[f"f{j}" for j in range(data.dim)]])
        for i in range(len(data)):
            w.writerow([int(data.ids[i]), int(data.labels[i]),
                        *[repr(float(v)) for v in data.points[i]]])


def load_csv(path) -> Dataset:
    with open(path, newline="") as fh:
        rows = csv.reader(fh)
        try:
            header = next(rows)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if len(header) < 3 or header[:2] != ["id", "label"] or \
                header[2:] != [f"f{j}" for j in range(len(header) - 2)]:
            raise DataError(f"{path}: header must be id,label,f0..f{{D-1}}")
        dim = len(header) - 2
        ids, labels, feats = [], [], []
        for line, row in enumerate(rows, start=2):
            if not row:
                continue
            if len(row) != dim + 2:
                raise DataError(f"{path}: line {line} has {len(row)} fields, expected {dim + 2}")
            try:
                ids.append(int(row[0]))
                labels.append(int(row[1]))
                vals = [float(v) for v in row[2:]]
            except ValueError as exc:
                raise DataError(f"{path}: line {line}: {exc}") from None
            if not all(math.isfinite(v) for v in vals):
                raise DataError(f"{path}: non-finite feature in row {len(feats) + 1} (line {line})")
            feats.append(vals)
    if not feats:
        raise DataError(f"{path}: no data rows")
    return Dataset(np.array(feats), np.array(labels), np.array(ids))


def save_fvec(data: Dataset, path) -> None:
    has_labels = bool(np.any(data.labels >= 0))
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<III", len(data), data.dim, int(has_labels)))
        fh.write(data.points.astype("<f4").tobytes())
        if has_labels:
            fh.write(data.labels.astype("<i4").tobytes())


def load_fvec(path) -> Dataset:
    blob = Path(path).read_bytes()
    if blob[:4] != DATASET_MAGIC:
        raise DataError(f"{path}: bad magic, expected FNED")
    if len(blob) < 16:
        raise DataError(f"{path}: truncated header")
    n, dim, flag = struct.unpack_from("<III", blob, 4)
    need = 16 + 4 * n * dim + (4 * n if flag else 0)
    if len(blob) != need:
        raise DataError(f"{path}: expected {need} bytes for N={n}, D={dim}, got {len(blob)}")
    feats = np.frombuffer(blob, dtype="<f4", count=n * dim, offset=16).reshape(n, dim)
    bad = np.argwhere(~np.isfinite(feats))
    if bad.size:
        r, c = bad[0]
        raise DataError(f"{path}: non-finite feature in row {r + 1} "
                        f"(byte offset {16 + 4 * (r * dim + c)})")
    labels = None
    if flag:
        labels = np.frombuffer(blob, dtype="<i4", count=n, offset=16 + 4 * n * dim)
    return Dataset(feats.astype(np.float64), labels)


def load_dataset(path, fmt: str | None = None) -> Dataset:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    fmt = fmt or ("fvec" if path.suffix in (".fned", ".bin", ".fvec") else "csv")
    if fmt in ("fvec", "fvec-binary", "binary"):
        return load_fvec(path)
    if fmt == "csv":
        return load_csv(path)
    raise DataError(f"unknown dataset format {fmt!r}")


def save_dataset(data: Dataset, path, fmt: str | None = None) -> None:
    path = Path(path)
    fmt = fmt or ("fvec" if path.suffix in (".fned", ".bin", ".fvec") else "csv")
    (save_fvec if fmt in ("fvec", "fvec-binary", "binary") else save_csv)(data, path)


# -- embeddings ---------------------------------------------------------------

def write_embedding(data: Dataset, z, path) -> None:
    z = np.asarray(z, dtype=np.float64).reshape(-1, 2)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "label", "x", "y"])
        for i in range(len(data)):
            w.writerow([int(data.ids[i]), int(data.labels[i]), repr(float(z[i, 0])),
                        repr(float(z[i, 1]))])


def export_embedding(model, data: Dataset, path) -> np.ndarray:
    from .federation import embed

    z = embed(model, data) if len(data) else np.zeros((0, 2))
    write_embedding(data, z, path)
    return z


def read_embedding(path):
    """Returns ``(ids, labels, z)`` from an embedding CSV."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [h.strip() for h in rows[0]] != ["id", "label", "x", "y"]:
        raise DataError(f"{path}: header must be id,label,x,y")
    ids, labels, z = [], [], []
    for line, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        try:
            ids.append(int(row[0]))
            labels.append(int(row[1]))
            z.append((float(row[2]), float(row[3])))
        except (ValueError, IndexError):
            raise DataError(f"{path}: malformed line {line}") from None
    return (np.array(ids, dtype=np.int64), np.array(labels, dtype=np.int64),
            np.array(z, dtype=np.float64).reshape(-1, 2))


def _color(label: int, palette_size: int) -> str:
    i = label % palette_size
    if palette_size <= len(PALETTE):
        return PALETTE[i]
    hue = i / palette_size
    r, g, b = (int(255 * (0.5 + 0.5 * math.cos(2 * math.pi * (hue - s)))) for s in (0, 1 / 3, 2 / 3))
    return f"#{r:02x}{g:02x}{b:02x}"


def emit_svg(embedding_csv, out_path, point_radius: float = 2.0, palette_size: int = 10) -> None:
    """Scatter plot of an embedding CSV, one ``<circle>`` per point.

    The y axis is flipped so larger y is drawn higher.
    """
    if palette_size < 1:
        raise ConfigError("palette_size must be positive")
    _, labels, z = read_embedding(embedding_csv)
    if z.shape[0]:
        lo, hi = z.min(axis=0), z.max(axis=0)
    else:
        lo, hi = np.zeros(2), np.zeros(2)
    span = hi - lo
    span = np.where(span > 0, span, 1.0)
    pad = 0.05 * span
    x0, y0 = float(lo[0] - pad[0]), float(-(hi[1] + pad[1]))
    w, h = float(span[0] + 2 * pad[0]), float(span[1] + 2 * pad[1])
    r = point_radius * max(w, h) / 800.0
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="800" height="{800 * h / w:.0f}" '
        f'viewBox="{x0!r} {y0!r} {w!r} {h!r}">',
        f'<rect x="{x0!r}" y="{y0!r}" width="{w!r}" height="{h!r}" fill="white"/>',
    ]
    for (x, y), lab in zip(z, labels):
        lines.append(f'<circle cx="{float(x)!r}" cy="{float(-y)!r}" r="{r!r}" '
                     f'fill={quoteattr(_color(int(lab), palette_size))}/>')
    lines.append("</svg>")
    Path(out_path).write_text("\n".join(lines) + "\n")


# -- run manifests ------------------------------------------------------------

@dataclass
class RunManifest:
    """Provenance record written next to a trained model."""

    config: dict
    dataset: dict
    outputs: dict
    started: str
    finished: str

    def check(self, data: Dataset) -> None:
        if fingerprint(data) != self.dataset:
            raise DataError("dataset does not match the manifest fingerprint")

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "RunManifest":
        try:
            raw = json.loads(Path(path).read_text())
            return cls(**{f: raw[f] for f in ("config", "dataset", "outputs", "started", "finished")})
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise DataError(f"{path}: malformed manifest ({exc})") from None


def save_indices(indices, path) -> None:
    Path(path).write_text("".join(f"{int(i)}\n" for i in indices))


def load_indices(path) -> np.ndarray:
    try:
        vals = [int(tok) for tok in Path(path).read_text().split()]
    except ValueError:
        raise DataError(f"{path}: index files hold one integer per line") from None
    return np.asarray(vals, dtype=np.int64)
