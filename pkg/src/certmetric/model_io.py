"""Self-describing JSON model files.

A model bundles the learned metric with everything needed to apply it to raw
data: the preprocessing transform (mean/scale/row normalization), an
optional projection map, and metadata about how it was trained.  Floats are
serialized through ``repr`` (the JSON default), so save/load round-trips are
bit-exact.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .core import Dataset, LinearMap
from .errors import InvalidInput
from .evaluation import compositional_metric, mahalanobis_metric
from .scml import BasisSet, SparseCompositionalMetric

SCHEMA_VERSION = 1

KIND_MAHALANOBIS = "mahalanobis"
KIND_MAHALANOBIS_PCA = "mahalanobis_pca"
KIND_SPARSE = "sparse_compositional"


def dataset_fingerprint(data: Dataset) -> str:
    digest = hashlib.sha256()
    digest.update(np.ascontiguousarray(data.instances).tobytes())
    digest.update(np.ascontiguousarray(data.labels.astype(np.int64)).tobytes())
    return digest.hexdigest()


@dataclass
class ModelFile:
    kind: str
    preprocess: LinearMap
    metric: np.ndarray | None = None                     # mahalanobis kinds
    weights: np.ndarray | None = None                    # sparse kind
    bases: np.ndarray | None = None
    pca: LinearMap | None = None
    metadata: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        if self.kind not in (KIND_MAHALANOBIS, KIND_MAHALANOBIS_PCA, KIND_SPARSE):
            raise InvalidInput(f"unknown model kind {self.kind!r}")
        if self.kind == KIND_SPARSE:
            if self.weights is None or self.bases is None:
                raise InvalidInput("sparse models need weights and bases")
            if self.bases.shape[0] != self.weights.shape[0]:
                raise InvalidInput("weights and bases disagree on the basis count")
        else:
            if self.metric is None:
                raise InvalidInput("metric matrix payload is required")
            if self.metric.shape[0] != self.metric.shape[1]:
                raise InvalidInput("metric payload must be square")
        if self.kind == KIND_MAHALANOBIS_PCA and self.pca is None:
            raise InvalidInput("projected models need the projection map")
        if self.pca is not None and self.pca.in_dim != self.preprocess.in_dim:
            raise InvalidInput("projection map does not match the preprocessing width")

    @property
    def feature_dim(self) -> int:
        return self.preprocess.in_dim

    def transform(self, x: np.ndarray) -> np.ndarray:
        """Apply preprocessing (and projection, if any) to raw instances."""
        out = self.preprocess.apply(x)
        if self.pca is not None:
            out = self.pca.apply(out)
        return out

    def pairwise_metric(self):
        """Squared-distance callable acting on *transformed* instances."""
        if self.kind == KIND_SPARSE:
            sparse = SparseCompositionalMetric(w=self.weights, bases=BasisSet(self.bases))
            return compositional_metric(sparse)
        return mahalanobis_metric(self.metric)


def _map_to_json(lmap: LinearMap | None):
    if lmap is None:
        return None
    return {
        "d": lmap.d.tolist(),
        "mean": lmap.mean.tolist(),
        "scale": lmap.scale.tolist(),
        "normalize": lmap.normalize,
    }


def _map_from_json(obj) -> LinearMap | None:
    if obj is None:
        return None
    return LinearMap(
        d=np.asarray(obj["d"], dtype=float),
        mean=np.asarray(obj["mean"], dtype=float),
        scale=np.asarray(obj["scale"], dtype=float),
        normalize=bool(obj["normalize"]),
    )


def save_model(path: str, model: ModelFile) -> None:
    doc = {
        "schema_version": model.schema_version,
        "kind": model.kind,
        "metric": None if model.metric is None else model.metric.tolist(),
        "weights": None if model.weights is None else model.weights.tolist(),
        "bases": None if model.bases is None else model.bases.tolist(),
        "preprocess": _map_to_json(model.preprocess),
        "pca": _map_to_json(model.pca),
        "metadata": model.metadata,
    }
    with open(path, "w") as handle:
        json.dump(doc, handle, indent=1, sort_keys=True)
        handle.write("\n")


def load_model(path: str) -> ModelFile:
    try:
        with open(path) as handle:
            doc = json.load(handle)
    except json.JSONDecodeError as exc:
        raise InvalidInput(f"{path}: not a valid model file ({exc})") from exc
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise InvalidInput(f"unsupported model schema {doc.get('schema_version')!r}")
    return ModelFile(
        kind=doc["kind"],
        metric=None if doc["metric"] is None else np.asarray(doc["metric"], dtype=float),
        weights=None if doc["weights"] is None else np.asarray(doc["weights"], dtype=float),
        bases=None if doc["bases"] is None else np.asarray(doc["bases"], dtype=float),
        preprocess=_map_from_json(doc["preprocess"]),
        pca=_map_from_json(doc["pca"]),
        metadata=doc.get("metadata", {}),
        schema_version=doc["schema_version"],
    )
