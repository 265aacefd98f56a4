"""Novelty detectors over payload feature vectors.

Two interchangeable model kinds score how much a response deviates from
the legitimate responses seen during training: a local-outlier-factor
model (density ratio against the k nearest training points) and an
isolation forest (expected random-split path length). Both are
implemented directly rather than via an ML library because their
degenerate-case behavior (duplicate training points, zero-variance
dimensions, coincident queries) is pinned down exactly by the test
suite, and library implementations smooth those cases over with
epsilons of their own choosing.

Scores: both kinds map higher to more anomalous. LOF is ~1.0 for
in-distribution queries; the isolation-forest score lives in (0, 1] with
0.5 the all-identical baseline.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from .features import DIMENSIONS, FeatureVector

__all__ = [
    "Label",
    "LofModel",
    "IsolationForestModel",
    "InsufficientTrainingError",
    "train_lof",
    "lof_score",
    "train_isolation_forest",
    "isolation_forest_score",
    "classify",
    "dump_model",
    "load_model",
    "save_model",
    "load_model_file",
    "DEFAULT_LOF_K",
    "DEFAULT_LOF_THRESHOLD",
    "DEFAULT_TREES",
    "DEFAULT_ANOMALY_CUTOFF",
]

MODEL_SCHEMA = "novelty-model/1"

DEFAULT_LOF_K = 5
DEFAULT_LOF_THRESHOLD = 1.5
DEFAULT_TREES = 100
DEFAULT_ANOMALY_CUTOFF = 0.6
MAX_SUBSAMPLE = 256

# Local reachability density for a neighborhood whose reachability sum is
# zero (a cluster of duplicates): 1/epsilon rather than infinity.
LRD_DUPLICATE_EPSILON = 1e-12


class Label(Enum):
    REGULAR = "regular"
    IRREGULAR = "irregular"


class InsufficientTrainingError(ValueError):
    """Raised when fewer than two training vectors are supplied."""


def _as_matrix(vectors: Sequence[FeatureVector] | Sequence[Sequence[float]] | np.ndarray) -> np.ndarray:
    if isinstance(vectors, np.ndarray):
        matrix = np.asarray(vectors, dtype=np.float64)
    else:
        rows = [
            v.as_array() if isinstance(v, FeatureVector) else np.asarray(v, dtype=np.float64)
            for v in vectors
        ]
        matrix = np.stack(rows) if rows else np.empty((0, DIMENSIONS))
    if matrix.ndim != 2:
        raise ValueError(f"expected a 2-D training matrix, got shape {matrix.shape}")
    return matrix


def _as_row(query: FeatureVector | Sequence[float] | np.ndarray, dims: int) -> np.ndarray:
    row = query.as_array() if isinstance(query, FeatureVector) else np.asarray(query, dtype=np.float64)
    if row.shape != (dims,):
        raise ValueError(f"query has shape {row.shape}, model expects ({dims},)")
    return row


# ---------------------------------------------------------------------------
# local outlier factor
# ---------------------------------------------------------------------------


@dataclass
class LofModel:
    """Trained LOF state: the standardized training set plus neighbor stats.

    kept is the boolean mask of dimensions with nonzero training variance;
    points holds only those dimensions. k_distance and lrd are the
    per-training-point k-distances and local reachability densities,
    precomputed so queries are a single pass.
    """

    k: int
    k_eff: int
    threshold: float
    mean: np.ndarray
    std: np.ndarray
    kept: np.ndarray
    points: np.ndarray
    k_distance: np.ndarray
    lrd: np.ndarray

    kind = "lof"

    @property
    def training_size(self) -> int:
        return self.points.shape[0]


def _pairwise_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape[1] == 0:
        return np.zeros((a.shape[0], b.shape[0]))
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt((diff * diff).sum(axis=2))


def _lrd_from_neighbors(
    distances: np.ndarray, neighbors: np.ndarray, k_distance: np.ndarray
) -> float:
    reach = np.maximum(k_distance[neighbors], distances[neighbors])
    total = float(reach.sum())
    if total == 0.0:
        return 1.0 / LRD_DUPLICATE_EPSILON
    return len(neighbors) / total


def train_lof(
    training: Sequence[FeatureVector] | Sequence[Sequence[float]] | np.ndarray,
    k: int = DEFAULT_LOF_K,
    threshold: float = DEFAULT_LOF_THRESHOLD,
) -> LofModel:
    """Fit a LOF novelty model on legitimate-response feature vectors.

    k is clamped to n-1 (k_eff). Training vectors are z-score standardized
    per dimension; zero-variance dimensions are dropped. Duplicate points
    are fine: a neighborhood of exact duplicates gets lrd 1/1e-12 instead
    of a division by zero.
    """
    matrix = _as_matrix(training)
    n = matrix.shape[0]
    if n < 2:
        raise InsufficientTrainingError(
            f"need at least 2 training vectors, got {n}"
        )
    if k < 1:
        raise ValueError("k must be >= 1")
    if threshold <= 1.0:
        raise ValueError("threshold must exceed 1, the LOF inlier level")
    k_eff = min(k, n - 1)

    mean = matrix.mean(axis=0)
    std = matrix.std(axis=0)
    kept = std > 0.0
    points = (matrix[:, kept] - mean[kept]) / std[kept]

    distances = _pairwise_distances(points, points)
    np.fill_diagonal(distances, np.inf)  # a point is not its own neighbor

    k_distance = np.partition(distances, k_eff - 1, axis=1)[:, k_eff - 1]
    lrd = np.empty(n)
    neighbor_sets = [np.flatnonzero(distances[i] <= k_distance[i]) for i in range(n)]
    for i, neighbors in enumerate(neighbor_sets):
        lrd[i] = _lrd_from_neighbors(distances[i], neighbors, k_distance)

    return LofModel(
        k=k,
        k_eff=k_eff,
        threshold=threshold,
        mean=mean,
        std=std,
        kept=kept,
        points=points,
        k_distance=k_distance,
        lrd=lrd,
    )


def lof_score(model: LofModel, query: FeatureVector | Sequence[float] | np.ndarray) -> float:
    """LOF of a query against the trained model; higher is more anomalous.

    Exactly 1.0 when the query coincides with a training point (including
    the all-dimensions-dropped degenerate model, where every query does).
    """
    row = _as_row(query, model.mean.shape[0])
    query_std = (row[model.kept] - model.mean[model.kept]) / model.std[model.kept]
    distances = _pairwise_distances(query_std[None, :], model.points)[0]
    if (distances == 0.0).any():
        return 1.0

    k_distance_q = np.partition(distances, model.k_eff - 1)[model.k_eff - 1]
    neighbors = np.flatnonzero(distances <= k_distance_q)
    lrd_q = _lrd_from_neighbors(distances, neighbors, model.k_distance)
    return float(model.lrd[neighbors].mean() / lrd_q)


# ---------------------------------------------------------------------------
# isolation forest
# ---------------------------------------------------------------------------

_EULER_GAMMA = float(np.euler_gamma)


def _average_path_length(n: int) -> float:
    """Expected unsuccessful-search path length c(n) in a binary tree."""
    if n <= 1:
        return 0.0
    if n == 2:
        return 1.0
    harmonic = math.log(n - 1) + _EULER_GAMMA
    return 2.0 * harmonic - 2.0 * (n - 1) / n


@dataclass
class IsolationForestModel:
    """Trained isolation forest: the trees themselves plus scoring params.

    Trees are nested dicts, {"f": dim, "t": threshold, "l": ..., "r": ...}
    for splits and {"n": size} for leaves, so they serialize to the model
    file untouched and scoring after a load is bit-identical.
    """

    trees: list[dict]
    subsample: int
    seed: int
    anomaly_cutoff: float

    kind = "isolation_forest"


def _grow_tree(matrix: np.ndarray, rng: np.random.Generator, depth: int, limit: int) -> dict:
    n = matrix.shape[0]
    if n <= 1 or depth >= limit:
        return {"n": int(n)}
    low = matrix.min(axis=0)
    high = matrix.max(axis=0)
    splittable = np.flatnonzero(high > low)
    if splittable.size == 0:
        return {"n": int(n)}  # all rows identical; cannot isolate further
    dim = int(rng.choice(splittable))
    threshold = float(rng.uniform(low[dim], high[dim]))
    left = matrix[:, dim] < threshold
    if not left.any() or left.all():
        return {"n": int(n)}  # degenerate draw at the range edge
    return {
        "f": dim,
        "t": threshold,
        "l": _grow_tree(matrix[left], rng, depth + 1, limit),
        "r": _grow_tree(matrix[~left], rng, depth + 1, limit),
    }


def train_isolation_forest(
    training: Sequence[FeatureVector] | Sequence[Sequence[float]] | np.ndarray,
    trees: int = DEFAULT_TREES,
    subsample: int | None = None,
    seed: int = 0,
    anomaly_cutoff: float = DEFAULT_ANOMALY_CUTOFF,
) -> IsolationForestModel:
    """Fit an isolation forest; deterministic for a fixed seed.

    subsample defaults to min(256, n) and must not exceed n.
    """
    matrix = _as_matrix(training)
    n = matrix.shape[0]
    if n < 2:
        raise InsufficientTrainingError(
            f"need at least 2 training vectors, got {n}"
        )
    if trees < 1:
        raise ValueError("trees must be >= 1")
    if not 0.0 < anomaly_cutoff < 1.0:
        raise ValueError("anomaly_cutoff must lie in (0, 1)")
    if subsample is None:
        subsample = min(MAX_SUBSAMPLE, n)
    if not 2 <= subsample <= n:
        raise ValueError(f"subsample must be in [2, {n}], got {subsample}")

    rng = np.random.default_rng(seed)
    limit = math.ceil(math.log2(subsample))
    grown = []
    for _ in range(trees):
        rows = rng.choice(n, size=subsample, replace=False)
        grown.append(_grow_tree(matrix[rows], rng, 0, limit))
    return IsolationForestModel(
        trees=grown, subsample=subsample, seed=seed, anomaly_cutoff=anomaly_cutoff
    )


def _path_length(tree: dict, row: np.ndarray, depth: int) -> float:
    while "f" in tree:
        tree = tree["l"] if row[tree["f"]] < tree["t"] else tree["r"]
        depth += 1
    return depth + _average_path_length(tree["n"])


def isolation_forest_score(
    model: IsolationForestModel, query: FeatureVector | Sequence[float] | np.ndarray
) -> float:
    """Anomaly score 2^(-E[path length]/c(subsample)), in (0, 1]."""
    row = query.as_array() if isinstance(query, FeatureVector) else np.asarray(query, dtype=np.float64)
    mean_path = math.fsum(_path_length(tree, row, 0) for tree in model.trees) / len(model.trees)
    return float(2.0 ** (-mean_path / _average_path_length(model.subsample)))


# ---------------------------------------------------------------------------
# shared surface
# ---------------------------------------------------------------------------

NoveltyModel = LofModel | IsolationForestModel


def model_score(model: NoveltyModel, query) -> float:
    if isinstance(model, LofModel):
        return lof_score(model, query)
    return isolation_forest_score(model, query)


def classify(model: NoveltyModel, query) -> Label:
    """Regular/Irregular split of a query response against the model."""
    score = model_score(model, query)
    cutoff = model.threshold if isinstance(model, LofModel) else model.anomaly_cutoff
    return Label.IRREGULAR if score > cutoff else Label.REGULAR


def dump_model(model: NoveltyModel | None) -> str:
    """Serialize a model to a versioned JSON document (field for field).

    None is a valid model: a capture with no learnable responses (silent
    device) trains nothing, and detection then rests on the cheap checks
    alone. It serializes as kind "none" so the file flow still works.
    """
    if model is None:
        body: dict = {"schema": MODEL_SCHEMA, "kind": "none"}
        return json.dumps(body, indent=2, sort_keys=True)
    if isinstance(model, LofModel):
        body = {
            "schema": MODEL_SCHEMA,
            "kind": model.kind,
            "k": model.k,
            "k_eff": model.k_eff,
            "threshold": model.threshold,
            "standardization": {
                "mean": model.mean.tolist(),
                "std": model.std.tolist(),
            },
            "points": model.points.tolist(),
            "k_distance": model.k_distance.tolist(),
            "lrd": model.lrd.tolist(),
        }
    elif isinstance(model, IsolationForestModel):
        body = {
            "schema": MODEL_SCHEMA,
            "kind": model.kind,
            "trees": model.trees,
            "subsample": model.subsample,
            "seed": model.seed,
            "anomaly_cutoff": model.anomaly_cutoff,
        }
    else:
        raise TypeError(f"not a novelty model: {type(model)!r}")
    return json.dumps(body, indent=2, sort_keys=True)


def load_model(text: str) -> NoveltyModel | None:
    """Inverse of dump_model; validates the schema tag."""
    body = json.loads(text)
    if body.get("schema") != MODEL_SCHEMA:
        raise ValueError(f"unrecognized model schema {body.get('schema')!r}")
    kind = body.get("kind")
    if kind == "none":
        return None
    if kind == "lof":
        mean = np.asarray(body["standardization"]["mean"], dtype=np.float64)
        std = np.asarray(body["standardization"]["std"], dtype=np.float64)
        # An all-dimensions-dropped model serializes its points as rows of
        # empty lists; asarray still yields the right (n, 0) shape.
        points = np.asarray(body["points"], dtype=np.float64)
        kept = std > 0.0
        return LofModel(
            k=body["k"],
            k_eff=body["k_eff"],
            threshold=body["threshold"],
            mean=mean,
            std=std,
            kept=kept,
            points=points,
            k_distance=np.asarray(body["k_distance"], dtype=np.float64),
            lrd=np.asarray(body["lrd"], dtype=np.float64),
        )
    if kind == "isolation_forest":
        return IsolationForestModel(
            trees=body["trees"],
            subsample=body["subsample"],
            seed=body["seed"],
            anomaly_cutoff=body["anomaly_cutoff"],
        )
    raise ValueError(f"unrecognized model kind {kind!r}")


def save_model(model: NoveltyModel | None, path: str | Path) -> None:
    Path(path).write_text(dump_model(model) + "\n")


def load_model_file(path: str | Path) -> NoveltyModel | None:
    return load_model(Path(path).read_text())
