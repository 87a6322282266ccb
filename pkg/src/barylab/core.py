"""Shared domain types: datasets, training configuration, embedding triples."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

WEIGHT_TOL = 1e-12
COSTS = ("euclidean", "squared_euclidean")


class DatasetError(ValueError):
    """Invalid dataset contents."""


@dataclass(frozen=True)
class SourceDataset:
    """K labelled sample collections in a common D-dimensional space.

    Source indices are 0-based in the Python API; file formats use 1-based
    ``source_id`` columns.
    """

    dim: int
    sources: tuple[np.ndarray, ...]
    weights: np.ndarray

    @property
    def n_sources(self) -> int:
        return len(self.sources)

    @property
    def counts(self) -> np.ndarray:
        return np.array([len(s) for s in self.sources])

    def stacked(self) -> tuple[np.ndarray, np.ndarray]:
        """All points as one (N, D) array plus the matching source index array."""
        points = np.concatenate(self.sources, axis=0)
        ids = np.concatenate([np.full(len(s), k) for k, s in enumerate(self.sources)])
        return points, ids

    def to_json(self) -> dict:
        return {
            "dim": self.dim,
            "weights": [float(w) for w in self.weights],
            "sources": [s.tolist() for s in self.sources],
        }


def make_dataset(samples: Sequence, weights: Sequence[float] | None = None) -> SourceDataset:
    """Validate samples and weights and build a :class:`SourceDataset`.

    When ``weights`` is omitted each source gets weight proportional to its
    sample count.
    """
    if len(samples) == 0:
        raise DatasetError("at least one source is required")
    arrays = []
    for k, s in enumerate(samples):
        a = np.asarray(s, dtype=float)
        if a.ndim == 1:
            a = a[:, None]
        if a.ndim != 2:
            raise DatasetError(f"source {k} must be a 2-d array of points")
        if a.shape[0] == 0:
            raise DatasetError(f"source {k} is empty")
        arrays.append(a)
    dim = arrays[0].shape[1]
    for k, a in enumerate(arrays):
        if a.shape[1] != dim:
            raise DatasetError(f"source {k} has dimension {a.shape[1]}, expected {dim}")
        if not np.all(np.isfinite(a)):
            raise DatasetError(f"source {k} contains non-finite values")

    counts = np.array([len(a) for a in arrays], dtype=float)
    if weights is None:
        lam = counts / counts.sum()
    else:
        lam = np.asarray(weights, dtype=float)
        if lam.shape != (len(arrays),):
            raise DatasetError(f"expected {len(arrays)} weights, got shape {lam.shape}")
        if np.any(lam < 0):
            raise DatasetError("weights must be nonnegative")
        if abs(lam.sum() - 1.0) > WEIGHT_TOL:
            raise DatasetError(f"weights sum to {lam.sum()!r}, expected 1")
    for a in arrays:
        a.setflags(write=False)
    lam.setflags(write=False)
    return SourceDataset(dim=dim, sources=tuple(arrays), weights=lam)


def allocate(batch_size: int, weights: np.ndarray) -> np.ndarray:
    """Split ``batch_size`` across sources by largest remainder.

    Each source gets ``floor(batch_size * w_k)``; leftover slots go to the
    largest fractional parts, ties to the lower index.
    """
    raw = batch_size * np.asarray(weights, dtype=float)
    counts = np.floor(raw).astype(int)
    left = batch_size - counts.sum()
    frac = raw - counts
    # stable sort on -frac keeps lower k first among ties
    order = np.argsort(-frac, kind="stable")
    counts[order[:left]] += 1
    return counts


def _as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def sample_batch(
    dataset: SourceDataset,
    batch_size: int,
    rng,
    allocation: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Draw a minibatch with per-source quotas.

    Points are drawn uniformly with replacement within each source.  ``rng``
    is a seed or a ``numpy.random.Generator`` (advanced in place), so the
    result is deterministic given the generator state.  ``allocation``
    overrides the weights used for the quotas (default: dataset weights).

    Returns
    -------
    points : (batch_size, D) array
    source_ids : (batch_size,) int array of 0-based source indices
    """
    K = dataset.n_sources
    if batch_size < K:
        raise ValueError(f"batch_size {batch_size} smaller than number of sources {K}")
    gen = _as_rng(rng)
    quota = allocate(batch_size, dataset.weights if allocation is None else allocation)
    pts, ids = [], []
    for k, (src, n) in enumerate(zip(dataset.sources, quota)):
        idx = gen.integers(0, len(src), size=n)
        pts.append(src[idx])
        ids.append(np.full(n, k))
    return np.concatenate(pts, axis=0), np.concatenate(ids)


@dataclass(frozen=True)
class EmbeddingTriple:
    z: np.ndarray
    b: np.ndarray
    r: np.ndarray
    source_id: int

    @classmethod
    def from_map(cls, z: np.ndarray, b: np.ndarray, source_id: int) -> "EmbeddingTriple":
        return cls(z=z, b=b, r=z - b, source_id=source_id)


@dataclass(frozen=True)
class TrainConfig:
    """Hyper-parameters of the barycenter map solver.

    Defaults for the learning rates, ``tau``, ``alpha`` and ``inner_iters``
    follow the reference training recipe; ``rmsprop_decay`` is not given
    there and uses the common 0.99.
    """

    lr_map: float = 1e-4
    lr_potentials: float = 2e-4
    tau: float = 0.07
    alpha: float = 0.05
    inner_iters: int = 1
    batch_size: int = 64
    steps: int = 1000
    rmsprop_decay: float = 0.99
    rmsprop_eps: float = 1e-8
    seed: int = 0
    cost: str = "euclidean"
    map_hidden: tuple[int, ...] = (128, 128)
    map_activation: str = "relu"
    map_skip: bool = True
    potential_hidden: tuple[int, ...] = (128, 128)
    potential_activation: str = "tanh"
    # "uniform" gives every source the same share of a batch; lambda enters
    # through the loss weights either way
    batch_allocation: str = "uniform"
    potential_direction: str = "descend"
    early_stop: bool = False
    early_stop_window: int = 200
    early_stop_rtol: float = 1e-4

    def __post_init__(self):
        if not self.lr_map > 0 or not self.lr_potentials > 0:
            raise ValueError("learning rates must be positive")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if not self.alpha >= 0:
            raise ValueError("alpha must be nonnegative")
        if not 0 < self.rmsprop_decay < 1:
            raise ValueError("rmsprop_decay must lie in (0, 1)")
        if self.inner_iters < 1 or self.batch_size < 1 or self.steps < 1:
            raise ValueError("inner_iters, batch_size and steps must be positive")
        if self.cost not in COSTS:
            raise ValueError(f"cost must be one of {COSTS}, got {self.cost!r}")
        if self.batch_allocation not in ("uniform", "proportional"):
            raise ValueError(f"unknown batch_allocation {self.batch_allocation!r}")
        if self.potential_direction not in ("descend", "ascend"):
            raise ValueError(f"unknown potential_direction {self.potential_direction!r}")
        object.__setattr__(self, "map_hidden", tuple(int(h) for h in self.map_hidden))
        object.__setattr__(self, "potential_hidden", tuple(int(h) for h in self.potential_hidden))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["map_hidden"] = list(self.map_hidden)
        d["potential_hidden"] = list(self.potential_hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if d.get("cost") == "squared":
            d = {**d, "cost": "squared_euclidean"}
        return cls(**d)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


# --------------------------------------------------------------------- I/O


def load_dataset_json(path) -> SourceDataset:
    with open(path) as fh:
        doc = json.load(fh)
    return dataset_from_json(doc)


def dataset_from_json(doc: dict) -> SourceDataset:
    try:
        sources = [np.asarray(s, dtype=float).reshape(len(s), -1) for s in doc["sources"]]
        ds = make_dataset(sources, doc.get("weights"))
    except KeyError as exc:
        raise DatasetError(f"missing key {exc}") from None
    if "dim" in doc and int(doc["dim"]) != ds.dim:
        raise DatasetError(f"declared dim {doc['dim']} does not match points ({ds.dim})")
    return ds


def save_dataset_json(dataset: SourceDataset, path) -> None:
    Path(path).write_text(json.dumps(dataset.to_json()) + "\n")


def load_dataset_csv(path, weights: Sequence[float] | None = None) -> SourceDataset:
    """Read ``source_id, x1..xD`` rows (1-based source ids)."""
    groups: dict[int, list[list[float]]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[0].strip() != "source_id":
            raise DatasetError("first CSV column must be source_id")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                sid = int(row[0])
                groups.setdefault(sid, []).append([float(v) for v in row[1:]])
            except ValueError as exc:
                raise DatasetError(f"line {lineno}: {exc}") from None
    ids = sorted(groups)
    if ids != list(range(1, len(ids) + 1)):
        raise DatasetError(f"source ids must be 1..K without gaps, got {ids}")
    return make_dataset([groups[i] for i in ids], weights)
