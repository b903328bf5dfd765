"""Sparse compositional metric learning with certified margins.

The metric is a nonnegative combination M = sum_k w_k b_k b_k^T of rank-one
bases, so PSD holds by construction and only the weight vector is learned.
Training minimizes

    mean_R [1 + d2_w(x_i, x_j) - d2_w(x_i, x_l)]_+  +  eta ||w||_1
    + lam * J_margin(w)

by accelerated proximal gradient with a backtracking step size: the hinge
and margin terms are handled by their (sub)gradient, the L1 term and the
w >= 0 constraint by the proximal step, which is a nonnegative
soft-threshold.  Distances never materialize M; the boundary denominator
d2_{M^2}(x_j, x_l) reduces to a quadratic form in the cached Gram matrix of
basis inner products.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .core import Dataset, symmetric_eig
from .errors import InvalidInput, NumericalFailure
from .lmnn import TrainingTrace
from .robustness import PerturbationSpec, TripletDiffs, _penalty_from_terms
from .triplets import SimilarPairSet, TripletSet

logger = logging.getLogger(__name__)


@dataclass
class BasisSet:
    """Unit-norm basis vectors (rows) with their cached Gram matrix."""

    bases: np.ndarray                     # (K, p)
    gram: np.ndarray = field(init=False)  # (K, K) of b_k1 . b_k2

    def __post_init__(self):
        self.bases = np.asarray(self.bases, dtype=float)
        if self.bases.ndim != 2 or self.bases.shape[0] < 1:
            raise InvalidInput("bases must be a nonempty (K, p) matrix")
        norms = np.linalg.norm(self.bases, axis=1)
        if np.abs(norms - 1.0).max() > 1e-10:
            raise InvalidInput("basis vectors must have unit L2 norm")
        self.gram = self.bases @ self.bases.T

    @property
    def k(self) -> int:
        return self.bases.shape[0]

    @property
    def dim(self) -> int:
        return self.bases.shape[1]


@dataclass
class SparseCompositionalMetric:
    """Nonnegative weights over a shared basis set."""

    w: np.ndarray
    bases: BasisSet

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=float)
        if self.w.shape != (self.bases.k,):
            raise InvalidInput("weight vector length must match the basis count")
        if self.w.min() < 0:
            raise InvalidInput("weights must be nonnegative")

    def materialize(self) -> np.ndarray:
        """The induced metric matrix sum_k w_k b_k b_k^T (PSD by construction)."""
        b = self.bases.bases
        return (b.T * self.w) @ b


@dataclass
class ScmlConfig:
    eta: float = 0.0                       # L1 weight
    spec: PerturbationSpec = field(default_factory=PerturbationSpec)
    lr_init: float = 1.0
    shrink: float = 0.8                    # backtracking step shrink factor
    tol: float = 1e-7
    max_iter: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.eta < 0:
            raise InvalidInput("eta must be nonnegative")
        if not 0.0 < self.shrink < 1.0:
            raise InvalidInput("shrink must lie strictly in (0, 1)")
        if self.lr_init <= 0 or self.tol <= 0 or self.max_iter < 1:
            raise InvalidInput("lr_init, tol must be positive and max_iter >= 1")
        if self.spec.shape is not None:
            raise InvalidInput("compositional training supports spherical perturbations only")


# ---------------------------------------------------------------------------
# basis generation


def _kmeans(x: np.ndarray, k: int, rng: np.random.Generator, iters: int = 100) -> np.ndarray:
    """Plain Lloyd iterations; returns cluster assignments."""
    n = x.shape[0]
    k = min(k, n)
    centers = x[rng.choice(n, size=k, replace=False)].copy()
    assign = np.zeros(n, dtype=int)
    for _ in range(iters):
        d = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_assign = d.argmin(axis=1)
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for c in range(k):
            members = assign == c
            if members.any():
                centers[c] = x[members].mean(axis=0)
    return assign


def _canonical_sign(v: np.ndarray) -> np.ndarray:
    pivot = np.argmax(np.abs(v))
    return -v if v[pivot] < 0 else v


def _fisher_directions(x: np.ndarray, y: np.ndarray) -> list[np.ndarray]:
    """Leading discriminant directions of one local region, unit-normalized."""
    classes = np.unique(y)
    if classes.size < 2:
        return []
    p = x.shape[1]
    mean = x.mean(axis=0)
    sw = np.zeros((p, p))
    sb = np.zeros((p, p))
    for c in classes:
        xc = x[y == c]
        mc = xc.mean(axis=0)
        centered = xc - mc
        sw += centered.T @ centered
        dm = (mc - mean)[:, None]
        sb += xc.shape[0] * (dm @ dm.T)
    sw += 1e-6 * np.eye(p)
    vals, vecs = scipy.linalg.eigh(sb, sw)
    count = min(classes.size - 1, p)
    out = []
    for col in range(p - 1, p - 1 - count, -1):
        v = vecs[:, col]
        norm = np.linalg.norm(v)
        if norm > 0:
            out.append(_canonical_sign(v / norm))
    return out


def generate_bases(data: Dataset, k_bases: int, regions: int = 10, seed: int = 0) -> BasisSet:
    """Local discriminant directions as rank-one basis candidates.

    The data is split into ``regions`` clusters; each multi-class cluster
    contributes its leading discriminant directions, interleaved by rank
    across regions.  If fewer than ``k_bases`` directions exist, global
    principal directions are appended, then seeded random unit vectors.
    """
    if k_bases < 1 or regions < 1:
        raise InvalidInput("k_bases and regions must be positive")
    rng = np.random.default_rng(seed)
    x, y = data.instances, data.labels
    assign = _kmeans(x, regions, rng)

    per_region = []
    for c in np.unique(assign):
        members = assign == c
        dirs = _fisher_directions(x[members], y[members])
        if dirs:
            per_region.append(dirs)
        else:
            logger.debug("region %d is single-class; contributes no directions", c)

    collected: list[np.ndarray] = []
    rank = 0
    while len(collected) < k_bases and any(rank < len(d) for d in per_region):
        for dirs in per_region:
            if rank < len(dirs) and len(collected) < k_bases:
                collected.append(dirs[rank])
        rank += 1

    if len(collected) < k_bases:
        cov = np.atleast_2d(np.cov(x, rowvar=False))
        eig = symmetric_eig(cov)
        for col in range(eig.eigenvectors.shape[1]):
            if len(collected) >= k_bases:
                break
            v = eig.eigenvectors[:, col]
            norm = np.linalg.norm(v)
            if norm > 0:
                collected.append(_canonical_sign(v / norm))

    while len(collected) < k_bases:
        v = rng.normal(size=data.n_features)
        collected.append(v / np.linalg.norm(v))

    return BasisSet(np.vstack(collected[:k_bases]))


# ---------------------------------------------------------------------------
# distances, objective, gradient


def scml_distance_sq(metric: SparseCompositionalMetric, x, y) -> float:
    """Squared distance sum_k w_k ((x - y) . b_k)^2 without forming M."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1 or x.size != metric.bases.dim:
        raise InvalidInput("vector dimensions do not match the basis set")
    z = metric.bases.bases @ (x - y)
    return float(np.dot(metric.w, z * z))


class _WeightObjective:
    """Fixed projections of the triplet diffs onto the basis set."""

    def __init__(self, bases: BasisSet, data: Dataset, r: TripletSet, config: ScmlConfig):
        if len(r) == 0:
            raise InvalidInput("triplet set is empty")
        if bases.dim != data.n_features:
            raise InvalidInput("basis dimension does not match the data")
        diffs = TripletDiffs.from_instances(data.instances, r.triplets)
        bt = bases.bases.T
        self.z_ij_sq = (diffs.dij @ bt) ** 2   # (R, K)
        self.z_il_sq = (diffs.dil @ bt) ** 2
        self.z_jl = diffs.djl @ bt
        self.gram = bases.gram
        self.config = config

    def _terms(self, w):
        gap = self.z_il_sq @ w - self.z_ij_sq @ w
        u = self.z_jl * w
        denom = np.einsum("ij,ij->i", u @ self.gram, u)
        return gap, denom

    def parts(self, w):
        """(smooth value, hinge mean, margin penalty) at weights ``w``."""
        spec = self.config.spec
        gap, denom = self._terms(w)
        hinge = float(np.maximum(1.0 - gap, 0.0).mean())
        if spec.lam > 0:
            margin_loss, _, _ = _penalty_from_terms(gap, denom, spec)
        else:
            margin_loss = 0.0
        return hinge + spec.lam * margin_loss, hinge, margin_loss

    def smooth_gradient(self, w):
        spec = self.config.spec
        gap, denom = self._terms(w)
        beta = 1.0 - gap >= 0.0
        grad = (beta[:, None] * (self.z_ij_sq - self.z_il_sq)).sum(axis=0) / gap.size
        if spec.lam > 0:
            _, margins_sq, correct = _penalty_from_terms(gap, denom, spec)
            active = correct & (margins_sq < spec.tau**2)
            if active.any():
                reg = denom + spec.epsilon
                c1 = np.where(active, gap / (2.0 * reg), 0.0)
                c2 = np.where(active, gap * gap / (4.0 * reg * reg), 0.0)
                term1 = c1[:, None] * (self.z_ij_sq - self.z_il_sq)
                term2 = (2.0 * c2)[:, None] * self.z_jl * ((self.z_jl * w) @ self.gram)
                grad += spec.lam * (term1 + term2).sum(axis=0) / gap.size
        return grad


def scml_cr_objective(
    metric: SparseCompositionalMetric,
    data: Dataset,
    s: SimilarPairSet | None,
    r: TripletSet,
    config: ScmlConfig,
) -> float:
    """Full objective: hinge mean + eta L1 + lam * margin penalty.

    ``s`` is accepted for trainer-interface symmetry; the compositional
    objective has no similar-pair term.
    """
    del s
    obj = _WeightObjective(metric.bases, data, r, config)
    smooth, _, _ = obj.parts(metric.w)
    return smooth + config.eta * float(np.abs(metric.w).sum())


def scml_cr_gradient(
    metric: SparseCompositionalMetric, data: Dataset, r: TripletSet, config: ScmlConfig
) -> np.ndarray:
    """Gradient of the smooth part (hinge + margin penalty) in the weights.

    The L1 term and the nonnegativity constraint are excluded; they belong
    to the proximal step.
    """
    obj = _WeightObjective(metric.bases, data, r, config)
    return obj.smooth_gradient(metric.w)


def prox_l1_nonneg(w: np.ndarray, threshold: float) -> np.ndarray:
    """Soft-threshold onto the nonnegative orthant: max(w - threshold, 0)."""
    if threshold < 0:
        raise InvalidInput("threshold must be nonnegative")
    return np.maximum(np.asarray(w, dtype=float) - threshold, 0.0)


# ---------------------------------------------------------------------------
# trainer


def train_scml_cr(
    data: Dataset,
    s: SimilarPairSet | None,
    r: TripletSet,
    bases: BasisSet,
    config: ScmlConfig,
    on_iterate=None,
) -> tuple[SparseCompositionalMetric, TrainingTrace]:
    """Accelerated proximal gradient with backtracking and momentum restart.

    Weights start at the all-ones vector.  Every accepted step satisfies the
    backtracking sufficient-decrease condition on the smooth part, and the
    proximal step keeps the weights nonnegative throughout.  Momentum is
    restarted whenever an extrapolated step would raise the objective.
    """
    del s
    obj = _WeightObjective(bases, data, r, config)
    eta = config.eta
    trace = TrainingTrace()

    def full_value(w, smooth):
        return smooth + eta * float(w.sum())  # w >= 0, so the L1 term is a plain sum

    w = np.ones(bases.k)
    smooth_cur, hinge_cur, margin_cur = obj.parts(w)
    f_cur = full_value(w, smooth_cur)
    if not np.isfinite(f_cur):
        raise NumericalFailure("objective is not finite at initialization", trace)
    if on_iterate is not None:
        on_iterate(w)

    w_prev = w.copy()
    t_momentum = 1.0
    lr = config.lr_init

    def prox_step(v, lr):
        """Backtracked proximal step from extrapolation point ``v``."""
        grad_v = obj.smooth_gradient(v)
        smooth_v, _, _ = obj.parts(v)
        for _ in range(200):
            w_new = prox_l1_nonneg(v - lr * grad_v, lr * eta)
            step = w_new - v
            smooth_new, hinge_new, margin_new = obj.parts(w_new)
            bound = smooth_v + grad_v @ step + (step @ step) / (2.0 * lr) + 1e-12
            if smooth_new <= bound:
                return w_new, smooth_new, hinge_new, margin_new, lr
            lr *= config.shrink
        return w_new, smooth_new, hinge_new, margin_new, lr

    for it in range(1, config.max_iter + 1):
        extrapolated = t_momentum > 1.0
        v = w + ((t_momentum - 1.0) / t_momentum) * (w - w_prev) if extrapolated else w
        w_new, smooth_new, hinge_new, margin_new, lr = prox_step(v, lr)
        f_new = full_value(w_new, smooth_new)
        if extrapolated and f_new > f_cur:
            # restart momentum and retry the step from the last iterate
            t_momentum = 1.0
            w_new, smooth_new, hinge_new, margin_new, lr = prox_step(w, lr)
            f_new = full_value(w_new, smooth_new)
        if not np.isfinite(f_new):
            raise NumericalFailure(f"objective became non-finite at iteration {it}", trace)

        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_momentum**2))
        w_prev, w = w, w_new
        t_momentum = t_next
        trace.log(it, f_new, hinge_new + eta * float(w_new.sum()), margin_new, lr)
        if on_iterate is not None:
            on_iterate(w)
        rel_change = abs(f_new - f_cur) / max(abs(f_cur), 1e-12)
        f_cur = f_new
        if rel_change < config.tol:
            trace.converged = True
            break

    return SparseCompositionalMetric(w=w, bases=bases), trace
