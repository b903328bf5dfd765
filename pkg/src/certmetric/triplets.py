"""Similar-pair and triplet construction for margin-based training.

Pairs link each instance to its Euclidean-nearest same-class neighbors
(target neighbors); each pair is expanded with the instance's nearest
different-class instances (impostors).  Both sets are mined once under the
Euclidean distance and held fixed through training.  Distance ties break by
ascending index so the output is deterministic.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .core import Dataset, pairwise_sq_euclidean
from .errors import InvalidInput

logger = logging.getLogger(__name__)


@dataclass
class SimilarPairSet:
    pairs: np.ndarray  # (S, 2) int, rows (i, j) with labels[i] == labels[j]

    def __len__(self) -> int:
        return self.pairs.shape[0]


@dataclass
class TripletSet:
    triplets: np.ndarray  # (R, 3) int, rows (i, j, l) with labels[l] != labels[i]

    def __len__(self) -> int:
        return self.triplets.shape[0]


def _nearest(order_row: np.ndarray, allowed: np.ndarray, count: int) -> np.ndarray:
    picked = order_row[allowed[order_row]]
    return picked[:count]


def generate_similar_pairs(data: Dataset, k_targets: int) -> SimilarPairSet:
    """For each instance, pair it with its k nearest same-class neighbors.

    Classes smaller than k_targets + 1 are clamped to whatever neighbors
    exist; singleton classes contribute no pairs (logged, not an error).
    """
    if k_targets < 1:
        raise InvalidInput("k_targets must be a positive integer")
    x, y = data.instances, data.labels
    n = data.n_instances
    dist = pairwise_sq_euclidean(x, x)
    np.fill_diagonal(dist, np.inf)
    order = np.argsort(dist, axis=1, kind="stable")
    pairs = []
    for i in range(n):
        same = y == y[i]
        same[i] = False
        if not same.any():
            logger.warning("instance %d is the only member of class %d; no pairs", i, y[i])
            continue
        for j in _nearest(order[i], same, k_targets):
            pairs.append((i, j))
    out = np.asarray(pairs, dtype=int).reshape(-1, 2)
    return SimilarPairSet(out)


def generate_triplets(
    data: Dataset, pairs: SimilarPairSet, k_impostors: int
) -> TripletSet:
    """Expand each pair (i, j) with i's k nearest different-class impostors."""
    if k_impostors < 1:
        raise InvalidInput("k_impostors must be a positive integer")
    x, y = data.instances, data.labels
    n = data.n_instances
    dist = pairwise_sq_euclidean(x, x)
    np.fill_diagonal(dist, np.inf)
    order = np.argsort(dist, axis=1, kind="stable")

    impostors: dict[int, np.ndarray] = {}
    for i in np.unique(pairs.pairs[:, 0]):
        other = y != y[i]
        if not other.any():
            raise InvalidInput("no different-class instances available for impostors")
        impostors[int(i)] = _nearest(order[i], other, k_impostors)

    triplets = []
    for i, j in pairs.pairs:
        for l in impostors[int(i)]:
            triplets.append((i, j, l))
    out = np.asarray(triplets, dtype=int).reshape(-1, 3)
    return TripletSet(out)
