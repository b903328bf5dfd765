"""Large-margin nearest neighbor loss and the margin-certified trainer.

The base objective pulls target neighbors close and pushes impostors past a
unit distance margin:

    J_base = (1 - mu) mean_S d2_M(x_i, x_j)
           + mu mean_R [1 + d2_M(x_i, x_j) - d2_M(x_i, x_l)]_+

The certified variant minimizes J = J_base + lam * J_margin, where J_margin
is the adversarial-margin penalty from :mod:`certmetric.robustness`.  The
trainer runs projected gradient descent on the PSD cone: gradient step,
eigenvalue truncation, and an adaptive learning rate that grows by 1% after
a step that lowered the objective and halves otherwise.  Steps that raise
the objective are rolled back, so the accepted objective sequence is
strictly decreasing.  Setting lam = 0 recovers the plain method.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Dataset, LinearMap, project_to_psd, validate_metric
from .errors import InvalidInput, NumericalFailure
from .robustness import (
    PerturbationSpec,
    TripletDiffs,
    _composed_q,
    _distance_terms,
    _penalty_from_terms,
    _penalty_gradient_from_terms,
)
from .triplets import SimilarPairSet, TripletSet


@dataclass
class LmnnConfig:
    """Trainer settings.

    mu balances pulling target neighbors against pushing impostors; spec
    carries the margin-penalty parameters (tau, lam, epsilon, shape).
    """

    mu: float = 0.5
    spec: PerturbationSpec = field(default_factory=PerturbationSpec)
    lr_init: float = 1.0
    lr_up: float = 1.01
    lr_down: float = 0.5
    tol: float = 1e-7
    max_iter: int = 1000
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.mu < 1.0:
            raise InvalidInput("mu must lie strictly in (0, 1)")
        if not (self.lr_down < 1.0 < self.lr_up):
            raise InvalidInput("need lr_down < 1 < lr_up")
        if self.lr_init <= 0 or self.tol <= 0 or self.max_iter < 1:
            raise InvalidInput("lr_init, tol must be positive and max_iter >= 1")


@dataclass
class TrainingTrace:
    """Per-iteration log: (iteration, J, J_main, J_margin, learning rate)."""

    objectives: list[tuple[int, float, float, float, float]] = field(default_factory=list)
    converged: bool = False
    iterations: int = 0

    def log(self, iteration, objective, main_loss, margin_loss, lr):
        self.objectives.append(
            (int(iteration), float(objective), float(main_loss), float(margin_loss), float(lr))
        )
        self.iterations = len(self.objectives)


def _pair_diffs(x: np.ndarray, pairs: np.ndarray) -> np.ndarray:
    return x[pairs[:, 0]] - x[pairs[:, 1]]


def lmnn_loss(m, data: Dataset, s: SimilarPairSet, r: TripletSet, mu: float) -> float:
    """Pull/push objective over the given pair and triplet sets."""
    if len(s) == 0 or len(r) == 0:
        raise InvalidInput("pair and triplet sets must be nonempty")
    m = np.asarray(m, dtype=float)
    x = data.instances
    ps = _pair_diffs(x, s.pairs)
    pull = np.einsum("ij,ij->i", ps @ m, ps).mean()
    diffs = TripletDiffs.from_instances(x, r.triplets)
    gap, _ = _distance_terms(m, diffs)
    push = np.maximum(1.0 - gap, 0.0).mean()
    return float((1.0 - mu) * pull + mu * push)


def lmnn_gradient(m, data: Dataset, s: SimilarPairSet, r: TripletSet, mu: float) -> np.ndarray:
    """Gradient of :func:`lmnn_loss` with respect to the metric."""
    if len(s) == 0 or len(r) == 0:
        raise InvalidInput("pair and triplet sets must be nonempty")
    m = np.asarray(m, dtype=float)
    x = data.instances
    ps = _pair_diffs(x, s.pairs)
    grad = ((1.0 - mu) / len(s)) * (ps.T @ ps)
    diffs = TripletDiffs.from_instances(x, r.triplets)
    gap, _ = _distance_terms(m, diffs)
    beta = 1.0 - gap >= 0.0
    if beta.any():
        dij = diffs.dij[beta]
        dil = diffs.dil[beta]
        grad += (mu / len(r)) * (dij.T @ dij - dil.T @ dil)
    return grad


class _Objective:
    """Shared state for one training run: fixed diffs, fresh metric terms."""

    def __init__(self, x, s, r, config, q):
        self.mu = config.mu
        self.spec = config.spec
        self.q = q
        self.pair_diffs = _pair_diffs(x, s.pairs)
        self.diffs = TripletDiffs.from_instances(x, r.triplets)

    def evaluate(self, m):
        """Returns (J, J_main, J_margin) plus cached terms for the gradient."""
        pull = np.einsum("ij,ij->i", self.pair_diffs @ m, self.pair_diffs).mean()
        gap, denom = _distance_terms(m, self.diffs, q=self.q, symmetric=True)
        push = np.maximum(1.0 - gap, 0.0).mean()
        main = (1.0 - self.mu) * pull + self.mu * push
        if self.spec.lam > 0:
            margin_loss, margins_sq, correct = _penalty_from_terms(gap, denom, self.spec)
        else:
            margin_loss, margins_sq, correct = 0.0, None, None
        total = main + self.spec.lam * margin_loss
        return total, float(main), float(margin_loss), (gap, denom, margins_sq, correct)

    def gradient(self, m, cached):
        gap, denom, margins_sq, correct = cached
        n_pairs = self.pair_diffs.shape[0]
        grad = ((1.0 - self.mu) / n_pairs) * (self.pair_diffs.T @ self.pair_diffs)
        beta = 1.0 - gap >= 0.0
        if beta.any():
            dij = self.diffs.dij[beta]
            dil = self.diffs.dil[beta]
            grad += (self.mu / len(self.diffs)) * (dij.T @ dij - dil.T @ dil)
        if self.spec.lam > 0:
            grad += self.spec.lam * _penalty_gradient_from_terms(
                m, self.diffs, gap, denom, margins_sq, correct, self.spec, q=self.q
            )
        return grad


def train_lmnn_cr(
    data: Dataset,
    s: SimilarPairSet,
    r: TripletSet,
    config: LmnnConfig,
    initial: np.ndarray | None = None,
    pca_map: LinearMap | None = None,
    on_iterate=None,
) -> tuple[np.ndarray, TrainingTrace]:
    """Projected gradient descent on the PSD cone with an adaptive rate.

    ``data`` lives in the original (preprocessed) space; when ``pca_map`` is
    given the metric is learned on the projected instances while the margin
    penalty keeps certifying against original-space perturbations.  Stops
    when the relative objective change between accepted iterates falls below
    ``config.tol`` or after ``config.max_iter`` iterations.  ``on_iterate``
    (if given) receives every accepted metric, starting with the initial one.
    """
    if len(s) == 0 or len(r) == 0:
        raise InvalidInput("pair and triplet sets must be nonempty")
    x = data.instances
    if pca_map is not None:
        if pca_map.in_dim != data.n_features:
            raise InvalidInput("projection map does not match the data dimension")
        x = x @ pca_map.d.T
    dim = x.shape[1]

    if initial is None:
        m = np.eye(dim)
    else:
        m = validate_metric(initial)
        if m.shape != (dim, dim):
            raise InvalidInput("initial metric does not match the training dimension")
        m = m.copy()

    q = _composed_q(config.spec, pca_map)
    objective = _Objective(x, s, r, config, q)
    trace = TrainingTrace()

    j_cur, main_cur, margin_cur, cached = objective.evaluate(m)
    if not np.isfinite(j_cur):
        raise NumericalFailure("objective is not finite at initialization", trace)
    if on_iterate is not None:
        on_iterate(m)

    lr = config.lr_init
    grad = None
    for it in range(1, config.max_iter + 1):
        if grad is None:
            grad = objective.gradient(m, cached)
        candidate = project_to_psd(m - lr * grad)
        j_new, main_new, margin_new, cached_new = objective.evaluate(candidate)
        if not np.isfinite(j_new):
            raise NumericalFailure(f"objective became non-finite at iteration {it}", trace)
        if j_new < j_cur:
            m = candidate
            grad = None
            cached = cached_new
            trace.log(it, j_new, main_new, margin_new, lr)
            if on_iterate is not None:
                on_iterate(m)
            rel_change = abs(j_new - j_cur) / max(abs(j_cur), 1e-12)
            j_cur, main_cur, margin_cur = j_new, main_new, margin_new
            lr *= config.lr_up
            if rel_change < config.tol:
                trace.converged = True
                break
        else:
            # roll back: keep the previous iterate, retry with a smaller step
            lr *= config.lr_down
            trace.log(it, j_cur, main_cur, margin_cur, lr)
    return m, trace
