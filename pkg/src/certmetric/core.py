"""Dense symmetric linear algebra, preprocessing, and PCA.

Metric matrices are plain ``numpy`` arrays throughout the package: a valid
metric is symmetric to ~1e-12 and positive semidefinite up to -1e-10 on its
smallest eigenvalue.  :func:`validate_metric` checks both.  Matrices are kept
dense; feature counts up to roughly a thousand are the intended regime.

All functions here are pure and hold no shared mutable state, so they are
safe to call from multiple threads.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput, NumericalFailure

logger = logging.getLogger(__name__)


@dataclass
class Dataset:
    """Instance matrix (one row per instance) with integer class labels."""

    instances: np.ndarray  # (n, p) float
    labels: np.ndarray     # (n,) int

    def __post_init__(self):
        self.instances = np.asarray(self.instances, dtype=float)
        self.labels = np.asarray(self.labels)
        if self.instances.ndim != 2:
            raise InvalidInput("instances must be a 2-D matrix")
        if self.instances.shape[0] < 2:
            raise InvalidInput("a dataset needs at least two instances")
        if not np.all(np.isfinite(self.instances)):
            raise InvalidInput("instances contain non-finite values")
        if self.labels.ndim != 1 or self.labels.shape[0] != self.instances.shape[0]:
            raise InvalidInput("labels must be a vector with one entry per instance")
        if not np.issubdtype(self.labels.dtype, np.integer):
            as_int = self.labels.astype(int)
            if not np.array_equal(as_int, self.labels):
                raise InvalidInput("labels must be integers")
            self.labels = as_int

    @property
    def n_instances(self) -> int:
        return self.instances.shape[0]

    @property
    def n_features(self) -> int:
        return self.instances.shape[1]

    @property
    def classes(self) -> np.ndarray:
        return np.unique(self.labels)

    @property
    def n_classes(self) -> int:
        return self.classes.size


@dataclass
class LinearMap:
    """Affine-then-linear transform fitted on training data.

    Applying the map centers by ``mean``, divides by ``scale``, optionally
    rescales every row to unit L2 length, and finally projects through the
    rows of ``d``.  Preprocessing maps carry an identity ``d``; PCA maps
    carry identity mean/scale and ``normalize=False`` so they act as a pure
    projection.
    """

    d: np.ndarray       # (k, p)
    mean: np.ndarray    # (p,)
    scale: np.ndarray   # (p,)
    normalize: bool = False

    def __post_init__(self):
        self.d = np.asarray(self.d, dtype=float)
        self.mean = np.asarray(self.mean, dtype=float)
        self.scale = np.asarray(self.scale, dtype=float)

    @property
    def in_dim(self) -> int:
        return self.d.shape[1]

    @property
    def out_dim(self) -> int:
        return self.d.shape[0]

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Transform a vector or a matrix of row instances."""
        arr = np.asarray(x, dtype=float)
        single = arr.ndim == 1
        rows = np.atleast_2d(arr)
        if rows.shape[1] != self.in_dim:
            raise InvalidInput(
                f"map expects {self.in_dim} features, got {rows.shape[1]}"
            )
        out = (rows - self.mean) / self.scale
        if self.normalize:
            norms = np.linalg.norm(out, axis=1, keepdims=True)
            out = out / np.where(norms > 0, norms, 1.0)
        out = out @ self.d.T
        return out[0] if single else out

    def apply_dataset(self, data: Dataset) -> Dataset:
        return Dataset(self.apply(data.instances), data.labels.copy())


def identity_map(p: int) -> LinearMap:
    return LinearMap(d=np.eye(p), mean=np.zeros(p), scale=np.ones(p))


@dataclass
class EigenDecomposition:
    """Eigenvalues in descending order with matching orthonormal columns."""

    eigenvalues: np.ndarray   # (p,)
    eigenvectors: np.ndarray  # (p, p), column k pairs with eigenvalues[k]


def symmetric_eig(a: np.ndarray) -> EigenDecomposition:
    """Eigendecomposition of a symmetric matrix, eigenvalues descending.

    The input is symmetrized as (a + a^T)/2 first; gradient accumulation can
    leave asymmetry at the 1e-16 level and LAPACK assumes exact symmetry.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvalidInput("expected a square matrix")
    if not np.all(np.isfinite(a)):
        raise InvalidInput("matrix contains non-finite values")
    sym = 0.5 * (a + a.T)
    try:
        vals, vecs = np.linalg.eigh(sym)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"eigendecomposition failed: {exc}") from exc
    return EigenDecomposition(vals[::-1].copy(), vecs[:, ::-1].copy())


def project_to_psd(a: np.ndarray) -> np.ndarray:
    """Frobenius-nearest PSD matrix: truncate negative eigenvalues to zero."""
    eig = symmetric_eig(a)
    clipped = np.maximum(eig.eigenvalues, 0.0)
    out = (eig.eigenvectors * clipped) @ eig.eigenvectors.T
    return 0.5 * (out + out.T)


def validate_metric(m: np.ndarray, eig_slack: float = 1e-10) -> np.ndarray:
    """Check that ``m`` is a usable metric matrix and return it as float."""
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise InvalidInput("metric must be a square matrix")
    if not np.all(np.isfinite(m)):
        raise InvalidInput("metric contains non-finite values")
    scale = max(np.abs(m).max(), 1.0)
    if np.abs(m - m.T).max() > 1e-12 * scale:
        raise InvalidInput("metric is not symmetric")
    min_eig = symmetric_eig(m).eigenvalues[-1]
    if min_eig < -eig_slack * scale:
        raise InvalidInput(f"metric is not PSD (min eigenvalue {min_eig:.3e})")
    return m


def mahalanobis_sq(m: np.ndarray, x: np.ndarray, y: np.ndarray) -> float:
    """Squared Mahalanobis distance (x - y)^T m (x - y)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    m = np.asarray(m, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise InvalidInput("x and y must be vectors of equal length")
    if m.shape != (x.size, x.size):
        raise InvalidInput("metric dimensions do not match the vectors")
    d = x - y
    return float(d @ m @ d)


def pairwise_sq_euclidean(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix of squared Euclidean distances between rows of ``a`` and ``b``."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    aa = np.einsum("ij,ij->i", a, a)
    bb = np.einsum("ij,ij->i", b, b)
    d = aa[:, None] + bb[None, :] - 2.0 * (a @ b.T)
    return np.maximum(d, 0.0)


def preprocess(raw: Dataset, unit_norm: bool = True) -> tuple[Dataset, LinearMap]:
    """Mean-center, standardize, and (optionally) L2-normalize each row.

    Zero-variance features keep scale 1 so they pass through unchanged.
    Returns the transformed dataset together with the fitted map, which can
    be applied to held-out data to reproduce the training transform.
    """
    x = raw.instances
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    scale = np.where(std > 0, std, 1.0)
    lmap = LinearMap(
        d=np.eye(raw.n_features), mean=mean, scale=scale, normalize=unit_norm
    )
    return lmap.apply_dataset(raw), lmap


def pca_fit(data: Dataset, variance_fraction: float) -> LinearMap:
    """Principal directions capturing at least ``variance_fraction`` of variance.

    Fit on already-preprocessed data.  Only directions with positive
    eigenvalues are retained, so rank-deficient covariances shrink the output
    instead of failing.  The returned map is a pure projection (zero mean,
    unit scale, no row normalization).
    """
    if not 0.0 < variance_fraction <= 1.0:
        raise InvalidInput("variance_fraction must lie in (0, 1]")
    x = data.instances
    cov = np.atleast_2d(np.cov(x, rowvar=False))
    eig = symmetric_eig(cov)
    vals = np.maximum(eig.eigenvalues, 0.0)
    total = vals.sum()
    if total <= 0:
        raise InvalidInput("data has zero total variance; nothing to fit")
    positive = int((eig.eigenvalues > 1e-12 * eig.eigenvalues[0]).sum())
    positive = max(positive, 1)
    shares = np.cumsum(vals) / total
    k = int(np.searchsorted(shares, variance_fraction - 1e-12)) + 1
    k = min(k, positive)
    d = eig.eigenvectors[:, :k].T.copy()
    p = data.n_features
    return LinearMap(d=d, mean=np.zeros(p), scale=np.ones(p), normalize=False)


def class_indices(labels: np.ndarray) -> dict[int, np.ndarray]:
    """Indices of each class, keyed by label, in ascending label order."""
    return {int(c): np.flatnonzero(labels == c) for c in np.unique(labels)}
