"""Deterministic generators for small benchmark datasets.

Three fixed recipes exercise distinct failure modes of learned metrics --
overlapping Gaussians, bands with unequal separability per direction, and a
strongly multicollinear third feature -- plus a generic Gaussian-blobs
generator for ad-hoc experiments.  Labels are 1-based class ids.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Dataset
from .errors import InvalidInput
from .seeding import substream_rng

TWO_GAUSSIANS = "two_gaussians"
TWO_BANDS = "two_bands"
MULTICOLLINEAR = "multicollinear"
BLOBS = "blobs"

_DEFAULT_SIZES = {TWO_GAUSSIANS: 10, TWO_BANDS: 100, MULTICOLLINEAR: 100, BLOBS: 100}


@dataclass
class ToySpec:
    which: str
    n_per_class: int | None = None
    seed: int = 0
    means: list | None = None        # blobs only
    covariances: list | None = None  # blobs only

    def __post_init__(self):
        if self.which not in _DEFAULT_SIZES:
            raise InvalidInput(f"unknown toy dataset {self.which!r}")
        if self.n_per_class is None:
            self.n_per_class = _DEFAULT_SIZES[self.which]
        if self.n_per_class < 2:
            raise InvalidInput("n_per_class must be at least 2")


def _two_gaussians(spec: ToySpec, rng) -> Dataset:
    n = spec.n_per_class
    cov = np.array([[1.0, -0.5], [-0.5, 1.0]])
    pos = rng.multivariate_normal([0.4, 0.4], cov, size=n)
    neg = rng.multivariate_normal([-0.4, -0.4], cov, size=n)
    x = np.vstack([pos, neg])
    y = np.concatenate([np.ones(n, dtype=int), np.full(n, 2, dtype=int)])
    return Dataset(x, y)


def _two_bands(spec: ToySpec, rng) -> Dataset:
    # positive band vs a parallel negative band plus a small side cluster;
    # the side cluster keeps its 1:5 size ratio as n_per_class scales
    n = spec.n_per_class
    n_side = max(n // 5, 1)
    pos = np.column_stack([rng.uniform(-3.0, 0.0, n), rng.uniform(0.0, 1.0, n)])
    band = np.column_stack([rng.uniform(-3.0, 0.0, n), rng.uniform(-0.6, -0.5, n)])
    side = np.column_stack([rng.uniform(0.0, 0.1, n_side), rng.uniform(0.0, 1.0, n_side)])
    x = np.vstack([pos, band, side])
    y = np.concatenate([np.ones(n, dtype=int), np.full(n + n_side, 2, dtype=int)])
    return Dataset(x, y)


def _multicollinear(spec: ToySpec, rng) -> Dataset:
    n = spec.n_per_class
    cov = np.array([[1.0, -0.9], [-0.9, 1.0]])
    pos = rng.multivariate_normal([0.45, 0.45], cov, size=n)
    neg = rng.multivariate_normal([-0.45, -0.45], cov, size=n)
    x2 = np.vstack([pos, neg])
    third = x2.sum(axis=1) + rng.normal(0.0, 0.01, size=2 * n)
    x = np.column_stack([x2, third])
    y = np.concatenate([np.ones(n, dtype=int), np.full(n, 2, dtype=int)])
    return Dataset(x, y)


def _blobs(spec: ToySpec, rng) -> Dataset:
    if spec.means is None:
        means = [np.zeros(2), np.array([1.5, 1.0])]
    else:
        means = [np.asarray(m, dtype=float) for m in spec.means]
    p = means[0].size
    if spec.covariances is None:
        covs = [np.eye(p) for _ in means]
    else:
        covs = [np.asarray(c, dtype=float) for c in spec.covariances]
    if len(covs) != len(means):
        raise InvalidInput("need one covariance per blob mean")
    xs, ys = [], []
    for label, (m, c) in enumerate(zip(means, covs), start=1):
        xs.append(rng.multivariate_normal(m, c, size=spec.n_per_class))
        ys.append(np.full(spec.n_per_class, label, dtype=int))
    return Dataset(np.vstack(xs), np.concatenate(ys))


_GENERATORS = {
    TWO_GAUSSIANS: _two_gaussians,
    TWO_BANDS: _two_bands,
    MULTICOLLINEAR: _multicollinear,
    BLOBS: _blobs,
}


def generate(spec: ToySpec) -> Dataset:
    """Generate the dataset described by ``spec``, deterministic under seed."""
    rng = substream_rng(spec.seed, "toy", spec.which)
    return _GENERATORS[spec.which](spec, rng)
