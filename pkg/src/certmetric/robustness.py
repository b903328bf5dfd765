"""Closed-form support points, adversarial margins, and the margin penalty.

For a triplet (x_i, x_j, x_l) and metric M, the decision boundary between
the target neighbor x_j and the impostor x_l in the learned feature space is
the hyperplane {x : (x - (x_j + x_l)/2)^T M (x_l - x_j) = 0}.  The *support
point* is the point on that hyperplane nearest to x_i in the instance space
(nearness measured by an optional positive-definite shape matrix A0, the
identity by default), and the *adversarial margin* is the distance from x_i
to it: the radius of the neighborhood within which perturbations of x_i
cannot flip which of x_j, x_l is closer.

Both have closed forms.  With half-gap

    h = (d2_M(x_i, x_l) - d2_M(x_i, x_j)) / 2

and denominator  den = (x_l - x_j)^T M A0^{-1} M (x_l - x_j),

    support point   = x_i + h / (den + eps) * A0^{-1} M (x_l - x_j)
    margin^2        = h^2 / (den + eps)

where eps (default 1e-10) keeps the ratio finite when x_j and x_l coincide
under M.  The margin penalty averages, over a triplet set,

    [tau^2 - margin^2]_+        if the impostor is farther (correct side)
    tau^2                       otherwise,

so shrinking it expands certified neighborhoods up to radius tau.  A metric
learned on PCA-projected data is handled by composing the projection into
the boundary constraint, which keeps the certificate valid in the original
instance space.

Everything here is a pure function; per-triplet terms are evaluated
vectorized in a fixed order so results are reproducible.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .core import Dataset, LinearMap, symmetric_eig
from .errors import InvalidInput
from .triplets import TripletSet


class Side(enum.Enum):
    """Which side of the j/l decision boundary a training instance sits on."""

    CORRECT = "correct"  # impostor strictly farther than the target neighbor
    WRONG = "wrong"      # impostor at least as close; no certified radius


@dataclass
class PerturbationSpec:
    """Margin-penalty parameters.

    tau is the desired adversarial margin (instance-space units), lam the
    penalty weight relative to the base loss, epsilon the denominator
    stabilizer, and shape an optional positive-definite matrix replacing the
    spherical perturbation ball with an ellipsoid.
    """

    tau: float = 0.0
    lam: float = 0.0
    epsilon: float = 1e-10
    shape: np.ndarray | None = None

    def __post_init__(self):
        if self.tau < 0:
            raise InvalidInput("tau must be nonnegative")
        if self.lam < 0:
            raise InvalidInput("lam must be nonnegative")
        if not self.epsilon > 0:
            raise InvalidInput("epsilon must be positive")
        if self.shape is not None:
            self.shape = np.asarray(self.shape, dtype=float)
            if self.shape.ndim != 2 or self.shape.shape[0] != self.shape.shape[1]:
                raise InvalidInput("shape must be a square matrix")
            eig = symmetric_eig(self.shape)
            if eig.eigenvalues[-1] <= 0:
                raise InvalidInput("shape must be positive definite")

    def shape_inverse(self) -> np.ndarray | None:
        """Inverse of the shape matrix, or None for the identity default."""
        if self.shape is None:
            return None
        eig = symmetric_eig(self.shape)
        inv = (eig.eigenvectors / eig.eigenvalues) @ eig.eigenvectors.T
        return 0.5 * (inv + inv.T)


@dataclass
class SupportPointResult:
    point: np.ndarray   # nearest adversarial example, in instance space
    margin_sq: float    # squared distance from x_i to it (shape-weighted)
    side: Side


@dataclass
class BoundReport:
    """Computable pieces of the margin-based generalization diagnostic."""

    n_hat: int       # triplets with adversarial margin above tau
    log_k: float     # log of the covering-partition count
    bound: float     # gap estimate; +inf when the covering term overflows
    b_const: float   # assumed upper bound of the loss
    delta: float


# ---------------------------------------------------------------------------
# vectorized internals shared by losses, gradients, margins, and trainers


@dataclass
class TripletDiffs:
    """Cached row differences for a fixed triplet set."""

    dij: np.ndarray  # (R, p) rows x_i - x_j
    dil: np.ndarray  # (R, p) rows x_i - x_l
    djl: np.ndarray  # (R, p) rows x_j - x_l

    @classmethod
    def from_instances(cls, x: np.ndarray, triplets: np.ndarray) -> "TripletDiffs":
        i, j, l = triplets[:, 0], triplets[:, 1], triplets[:, 2]
        return cls(x[i] - x[j], x[i] - x[l], x[j] - x[l])

    def __len__(self) -> int:
        return self.dij.shape[0]


def _distance_terms(m, diffs, q=None, symmetric=False):
    """Per-triplet half-gap ingredients: (d2_il - d2_ij, unregularized denom).

    q is the inner matrix of the boundary denominator: None for the identity,
    A0^{-1} for ellipsoidal perturbations, or D A0^{-1} D^T for a metric
    acting on D-projected data.  The denominator is evaluated as
    (d^T m) q (m d) without assuming m symmetric unless told so, which keeps
    elementwise finite-difference checks of the gradient exact.
    """
    d2_ij = np.einsum("ij,ij->i", diffs.dij @ m, diffs.dij)
    d2_il = np.einsum("ij,ij->i", diffs.dil @ m, diffs.dil)
    a = diffs.djl @ m
    b = a if symmetric else diffs.djl @ m.T
    if q is None:
        denom = np.einsum("ij,ij->i", a, b)
    else:
        denom = np.einsum("ij,ij->i", a @ q, b)
    return d2_il - d2_ij, denom


def _margins_from_terms(gap, denom, epsilon):
    return gap * gap / (4.0 * (denom + epsilon))


def _penalty_from_terms(gap, denom, spec):
    margins_sq = _margins_from_terms(gap, denom, spec.epsilon)
    tau_sq = spec.tau**2
    correct = gap > 0
    per_triplet = np.where(correct, np.maximum(tau_sq - margins_sq, 0.0), tau_sq)
    return float(per_triplet.mean()), margins_sq, correct


def _penalty_gradient_from_terms(m, diffs, gap, denom, margins_sq, correct, spec, q=None):
    tau_sq = spec.tau**2
    active = correct & (margins_sq < tau_sq)
    p = diffs.dij.shape[1]
    if not active.any():
        return np.zeros((p, p))
    reg = denom + spec.epsilon
    c1 = np.where(active, gap / (2.0 * reg), 0.0)
    c2 = np.where(active, gap * gap / (4.0 * reg * reg), 0.0)
    grad = diffs.dij.T @ (c1[:, None] * diffs.dij)
    grad -= diffs.dil.T @ (c1[:, None] * diffs.dil)
    s = diffs.djl.T @ (c2[:, None] * diffs.djl)
    if q is None:
        grad += s @ m + m @ s
    else:
        grad += s @ m @ q + q @ m @ s
    return grad / len(diffs)


def _composed_q(spec: PerturbationSpec, pca_map: LinearMap | None):
    a0_inv = spec.shape_inverse()
    if pca_map is None:
        return a0_inv
    d = pca_map.d
    if a0_inv is None:
        return d @ d.T
    if a0_inv.shape[0] != d.shape[1]:
        raise InvalidInput("shape matrix must live in the original instance space")
    return d @ a0_inv @ d.T


def _prepare(m, data, r, spec, pca_map):
    m = np.asarray(m, dtype=float)
    if len(r) == 0:
        raise InvalidInput("triplet set is empty")
    x = data.instances
    if pca_map is not None:
        if pca_map.in_dim != data.n_features:
            raise InvalidInput("projection map does not match the data dimension")
        x = x @ pca_map.d.T
    if m.shape != (x.shape[1], x.shape[1]):
        raise InvalidInput("metric dimensions do not match the (projected) data")
    diffs = TripletDiffs.from_instances(x, r.triplets)
    return m, diffs, _composed_q(spec, pca_map)


# ---------------------------------------------------------------------------
# support points and margins


def _support_point_terms(m, xi, xj, xl, spec, pca_map=None):
    xi = np.asarray(xi, dtype=float)
    xj = np.asarray(xj, dtype=float)
    xl = np.asarray(xl, dtype=float)
    for v in (xi, xj, xl):
        if v.shape != xi.shape or v.ndim != 1:
            raise InvalidInput("triplet vectors must share one dimension")
        if not np.all(np.isfinite(v)):
            raise InvalidInput("triplet vectors contain non-finite values")
    m = np.asarray(m, dtype=float)
    a0_inv = spec.shape_inverse()

    if pca_map is None:
        ti, tj, tl = xi, xj, xl
    else:
        ti, tj, tl = pca_map.d @ xi, pca_map.d @ xj, pca_map.d @ xl
    if m.shape != (ti.size, ti.size):
        raise InvalidInput("metric dimensions do not match the (projected) vectors")

    dj = ti - tj
    dl = ti - tl
    gap = float(dl @ m @ dl - dj @ m @ dj)
    mdlj = m @ (tl - tj)
    v = mdlj if pca_map is None else pca_map.d.T @ mdlj
    direction = v if a0_inv is None else a0_inv @ v
    denom = float(v @ direction)
    half_gap = 0.5 * gap
    coef = half_gap / (denom + spec.epsilon)
    point = xi + coef * direction
    margin_sq = half_gap * half_gap / (denom + spec.epsilon)
    side = Side.CORRECT if gap > 0 else Side.WRONG
    return SupportPointResult(point=point, margin_sq=margin_sq, side=side)


def support_point(m, x_i, x_j, x_l, spec: PerturbationSpec) -> SupportPointResult:
    """Nearest adversarial example of x_i for one triplet, in closed form.

    The returned point is the shape-weighted projection of x_i onto the j/l
    decision boundary; margin_sq is its (regularized) squared distance from
    x_i.  The side flag records whether the impostor is currently farther
    (CORRECT) or at least as close (WRONG).
    """
    return _support_point_terms(m, x_i, x_j, x_l, spec)


def support_point_pca(
    m, pca_map: LinearMap, x_i, x_j, x_l, spec: PerturbationSpec
) -> SupportPointResult:
    """Support point for a metric learned on ``pca_map``-projected data.

    The inputs live in the original instance space; the boundary constraint
    is composed with the projection, so the certificate still measures
    instance-space perturbations.
    """
    return _support_point_terms(m, x_i, x_j, x_l, spec, pca_map=pca_map)


def adversarial_margin_sq(m, x_i, x_j, x_l, spec: PerturbationSpec) -> float:
    """Squared adversarial margin of one triplet (regularized closed form)."""
    return _support_point_terms(m, x_i, x_j, x_l, spec).margin_sq


def adversarial_margins(
    m, data: Dataset, r: TripletSet, spec: PerturbationSpec, pca_map: LinearMap | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized squared margins and correct-side flags for a triplet set."""
    m, diffs, q = _prepare(m, data, r, spec, pca_map)
    gap, denom = _distance_terms(m, diffs, q=q)
    return _margins_from_terms(gap, denom, spec.epsilon), gap > 0


# ---------------------------------------------------------------------------
# the margin penalty and its gradient


def perturbation_loss(
    m, data: Dataset, r: TripletSet, spec: PerturbationSpec, pca_map: LinearMap | None = None
) -> float:
    """Mean margin penalty over the triplet set; always within [0, tau^2]."""
    m, diffs, q = _prepare(m, data, r, spec, pca_map)
    gap, denom = _distance_terms(m, diffs, q=q)
    loss, _, _ = _penalty_from_terms(gap, denom, spec)
    return loss


def perturbation_loss_gradient(
    m, data: Dataset, r: TripletSet, spec: PerturbationSpec, pca_map: LinearMap | None = None
) -> np.ndarray:
    """Gradient of the margin penalty with respect to the metric.

    Only triplets on the correct side with margin strictly below tau
    contribute; a margin exactly at tau counts as inactive.  The result is
    symmetric for symmetric input.
    """
    m, diffs, q = _prepare(m, data, r, spec, pca_map)
    gap, denom = _distance_terms(m, diffs, q=q)
    _, margins_sq, correct = _penalty_from_terms(gap, denom, spec)
    return _penalty_gradient_from_terms(
        m, diffs, gap, denom, margins_sq, correct, spec, q=q
    )


def perturbation_loss_pca(m, pca_map, data, r, spec) -> float:
    """Margin penalty for a metric acting on projected data."""
    return perturbation_loss(m, data, r, spec, pca_map=pca_map)


def perturbation_loss_gradient_pca(m, pca_map, data, r, spec) -> np.ndarray:
    """Gradient counterpart of :func:`perturbation_loss_pca` (d x d output)."""
    return perturbation_loss_gradient(m, data, r, spec, pca_map=pca_map)


# ---------------------------------------------------------------------------
# reporting


@dataclass
class MarginReport:
    """Per-triplet adversarial margins with a histogram and summary stats.

    Wrong-side triplets report margin 0: no certified neighborhood exists
    when the impostor is already at least as close as the target neighbor.
    """

    margins: np.ndarray       # (R,) adversarial margins (not squared)
    tau: float
    n_hat: int                # count of margins strictly above tau
    hist_counts: np.ndarray
    hist_edges: np.ndarray
    mean: float = field(init=False)
    median: float = field(init=False)
    std: float = field(init=False)
    min: float = field(init=False)
    max: float = field(init=False)

    def __post_init__(self):
        self.mean = float(self.margins.mean())
        self.median = float(np.median(self.margins))
        self.std = float(self.margins.std())
        self.min = float(self.margins.min())
        self.max = float(self.margins.max())

    def histogram_rows(self) -> list[tuple[float, float, int]]:
        """(bin_low, bin_high, count) rows for delimited output."""
        return [
            (float(self.hist_edges[k]), float(self.hist_edges[k + 1]), int(c))
            for k, c in enumerate(self.hist_counts)
        ]

    def to_text(self) -> str:
        lines = [
            f"triplets          {self.margins.size}",
            f"mean margin       {self.mean:.6g}",
            f"median margin     {self.median:.6g}",
            f"std margin        {self.std:.6g}",
            f"min / max margin  {self.min:.6g} / {self.max:.6g}",
            f"margins > tau     {self.n_hat} (tau = {self.tau:.6g})",
            "histogram:",
        ]
        width = 40
        top = max(int(self.hist_counts.max()), 1)
        for lo, hi, count in self.histogram_rows():
            bar = "#" * int(round(width * count / top))
            lines.append(f"  [{lo:9.4f}, {hi:9.4f})  {count:6d} {bar}")
        return "\n".join(lines)


def margin_report(
    m,
    data: Dataset,
    r: TripletSet,
    spec: PerturbationSpec,
    bins: int = 20,
    pca_map: LinearMap | None = None,
) -> MarginReport:
    """Adversarial-margin distribution of a triplet set under metric ``m``."""
    margins_sq, correct = adversarial_margins(m, data, r, spec, pca_map=pca_map)
    margins = np.where(correct, np.sqrt(np.maximum(margins_sq, 0.0)), 0.0)
    n_hat = int((margins > spec.tau).sum())
    counts, edges = np.histogram(margins, bins=bins)
    return MarginReport(
        margins=margins, tau=spec.tau, n_hat=n_hat, hist_counts=counts, hist_edges=edges
    )


def generalization_bound(
    n: int,
    p: int,
    classes: int,
    tau: float,
    n_hat: int,
    n_triplets: int,
    b_const: float,
    delta: float,
) -> BoundReport:
    """Margin-based generalization-gap diagnostic.

    Computes  n_hat/n^3 + B ((n^3 - n_hat)/n^3 + 3 sqrt((2 K ln 2
    + 2 ln(1/delta)) / n))  with K = classes * (1 + 2/tau)^p evaluated in log
    space; K itself is never materialized because it overflows for modest p.
    A bound that overflows (or exceeds ``b_const``) is vacuous but still
    reported, as +inf in the overflow case.
    """
    if tau <= 0:
        raise InvalidInput("tau must be positive")
    if not 0.0 < delta < 1.0:
        raise InvalidInput("delta must lie in (0, 1)")
    if n_hat < 0 or n_hat > n_triplets:
        raise InvalidInput("n_hat must lie in [0, n_triplets]")
    if n < 1 or p < 1 or classes < 1:
        raise InvalidInput("n, p, classes must be positive")
    if b_const < 0:
        raise InvalidInput("b_const must be nonnegative")

    log_k = math.log(classes) + p * math.log1p(2.0 / tau)
    # 2 K ln2 + 2 ln(1/delta), assembled in log space
    log_first = math.log(2.0 * math.log(2.0)) + log_k
    log_inv_delta = math.log(1.0 / delta)
    if log_inv_delta > 0:
        log_sum = np.logaddexp(log_first, math.log(2.0 * log_inv_delta))
    else:
        log_sum = log_first
    log_sqrt_term = 0.5 * (log_sum - math.log(n))
    sqrt_term = math.exp(log_sqrt_term) if log_sqrt_term < 709.0 else math.inf

    n_cubed = n**3
    frac_hat = n_hat / n_cubed
    bound = frac_hat + b_const * ((n_cubed - n_hat) / n_cubed + 3.0 * sqrt_term)
    return BoundReport(
        n_hat=int(n_hat), log_k=log_k, bound=float(bound), b_const=b_const, delta=delta
    )
