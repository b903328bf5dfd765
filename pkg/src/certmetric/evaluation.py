"""kNN evaluation, calibrated Gaussian noise, and random hyperparameter search.

The kNN classifier takes the metric as a pairwise-squared-distance callable
``(queries, train) -> (nq, n)`` so any of the learned metrics (or plain
Euclidean) plugs in.  Noise intensity is calibrated by SNR in decibels with
per-dimension signal power ||x||^2 / p averaged over instances; the
"diagonal" flavor scales per-feature noise variance proportionally to the
per-feature signal variance while keeping the same mean power as the
spherical flavor.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .core import Dataset, pairwise_sq_euclidean
from .errors import InvalidInput
from .robustness import PerturbationSpec, adversarial_margins
from .seeding import substream_rng, substream_seed
from .triplets import generate_similar_pairs, generate_triplets

logger = logging.getLogger(__name__)

SPHERICAL = "spherical"
DIAGONAL = "diagonal"


@dataclass
class NoiseSpec:
    snr_db: float
    kind: str = SPHERICAL
    seed: int = 0

    def __post_init__(self):
        if not np.isfinite(self.snr_db):
            raise InvalidInput("snr_db must be finite")
        if self.kind not in (SPHERICAL, DIAGONAL):
            raise InvalidInput(f"unknown noise kind {self.kind!r}")


def euclidean_metric():
    """Pairwise squared Euclidean distances."""
    return pairwise_sq_euclidean


def mahalanobis_metric(m: np.ndarray):
    """Pairwise squared distances under a fixed metric matrix."""
    m = np.asarray(m, dtype=float)

    def pairwise(queries, train):
        q = np.atleast_2d(np.asarray(queries, dtype=float))
        x = np.atleast_2d(np.asarray(train, dtype=float))
        qm = q @ m
        qq = np.einsum("ij,ij->i", qm, q)
        xx = np.einsum("ij,ij->i", x @ m, x)
        d = qq[:, None] + xx[None, :] - 2.0 * (qm @ x.T)
        return np.maximum(d, 0.0)

    return pairwise


def compositional_metric(metric):
    """Pairwise squared distances for a sparse compositional metric."""
    bases = metric.bases.bases
    w = metric.w

    def pairwise(queries, train):
        zq = np.atleast_2d(queries) @ bases.T
        zx = np.atleast_2d(train) @ bases.T
        qq = (zq * zq) @ w
        xx = (zx * zx) @ w
        d = qq[:, None] + xx[None, :] - 2.0 * ((zq * w) @ zx.T)
        return np.maximum(d, 0.0)

    return pairwise


def knn_predict(metric, train: Dataset, queries: np.ndarray, k: int) -> np.ndarray:
    """Majority vote among the k nearest training instances.

    Distance ties break by ascending training index, vote ties by the
    smallest label among the tied classes.
    """
    if k < 1:
        raise InvalidInput("k must be a positive integer")
    if k > train.n_instances:
        raise InvalidInput("k cannot exceed the number of training instances")
    queries = np.atleast_2d(np.asarray(queries, dtype=float))
    dists = metric(queries, train.instances)
    # stable sort keeps equal distances in index order
    nearest = np.argsort(dists, axis=1, kind="stable")[:, :k]
    votes = train.labels[nearest]
    out = np.empty(queries.shape[0], dtype=int)
    for row in range(votes.shape[0]):
        values, counts = np.unique(votes[row], return_counts=True)
        out[row] = values[counts == counts.max()].min()
    return out


def knn_accuracy(metric, train: Dataset, test: Dataset, k: int) -> float:
    predicted = knn_predict(metric, train, test.instances, k)
    return float((predicted == test.labels).mean())


def add_noise(test: Dataset, spec: NoiseSpec, rng: np.random.Generator | None = None) -> Dataset:
    """Zero-mean Gaussian noise at the requested SNR; labels unchanged."""
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    x = test.instances
    p = x.shape[1]
    signal_power = float(np.einsum("ij,ij->i", x, x).mean()) / p
    noise_power = signal_power * 10.0 ** (-spec.snr_db / 10.0)
    if spec.kind == SPHERICAL:
        noise = rng.normal(scale=np.sqrt(noise_power), size=x.shape)
    else:
        feat_var = x.var(axis=0)
        mean_var = feat_var.mean()
        profile = feat_var / mean_var if mean_var > 0 else np.ones(p)
        noise = rng.normal(size=x.shape) * np.sqrt(profile * noise_power)
    return Dataset(x + noise, test.labels.copy())


def augment_test(test: Dataset, target_n: int, spec: NoiseSpec) -> Dataset:
    """Resample the test set with replacement to ``target_n`` rows, add noise."""
    if target_n < test.n_instances:
        raise InvalidInput("target_n must be at least the current test size")
    sample_rng = substream_rng(spec.seed, "augment-sample")
    noise_rng = substream_rng(spec.seed, "augment-noise")
    idx = sample_rng.integers(0, test.n_instances, size=target_n)
    resampled = Dataset(test.instances[idx], test.labels[idx])
    return add_noise(resampled, spec, rng=noise_rng)


# ---------------------------------------------------------------------------
# stratified folds and random search


def stratified_folds(labels: np.ndarray, folds: int, rng: np.random.Generator) -> np.ndarray:
    """Fold assignment per instance, stratified by label.

    If some class has fewer members than ``folds``, the fold count is reduced
    (with a warning) so every fold sees every class; classes with fewer than
    two members make stratification impossible.
    """
    if folds < 2:
        raise InvalidInput("folds must be at least 2")
    classes, counts = np.unique(labels, return_counts=True)
    min_count = int(counts.min())
    if min_count < 2:
        raise InvalidInput("every class needs at least two members for stratified folds")
    if min_count < folds:
        logger.warning(
            "reducing folds from %d to %d: smallest class has %d members",
            folds, min_count, min_count,
        )
        folds = min_count
    assign = np.empty(labels.shape[0], dtype=int)
    for c in classes:
        members = np.flatnonzero(labels == c)
        members = members[rng.permutation(members.size)]
        assign[members] = np.arange(members.size) % folds
    return assign


@dataclass
class SearchSpace:
    """Sampling ranges for the random hyperparameter search.

    mu is uniform on ``mu_range``; tau is uniform on (0, P) where P is the
    ``tau_upper_percentile``-th percentile of the Euclidean-metric
    adversarial margins of the training triplets; lam is uniform on
    (0, 4 / tau^2) for each sampled tau.
    """

    n_samples: int = 50
    mu_range: tuple[float, float] = (0.1, 0.9)
    tau_upper_percentile: float = 90.0
    folds: int = 5
    knn_k: int = 3

    def __post_init__(self):
        if self.n_samples < 1:
            raise InvalidInput("n_samples must be positive")
        if not 0.0 <= self.mu_range[0] < self.mu_range[1] <= 1.0:
            raise InvalidInput("mu_range must be an increasing pair inside [0, 1]")
        if not 0.0 < self.tau_upper_percentile <= 100.0:
            raise InvalidInput("tau_upper_percentile must lie in (0, 100]")
        if self.folds < 2:
            raise InvalidInput("folds must be at least 2")

    def lambda_upper(self, tau: float) -> float:
        return 4.0 / tau**2


@dataclass
class TrialResult:
    trial: int
    mu: float
    tau: float
    lam: float
    fold_accuracies: list[float]
    mean_accuracy: float


@dataclass
class SearchResult:
    best: TrialResult
    trials: list[TrialResult]
    tau_upper: float


def euclidean_margin_percentile(
    data: Dataset,
    percentile: float,
    k_targets: int = 3,
    k_impostors: int = 10,
    epsilon: float = 1e-10,
) -> float:
    """Percentile of boundary distances under the Euclidean metric.

    These are unsigned distances from each instance to its triplet decision
    boundary, so wrong-side triplets contribute their actual distance rather
    than zero; the value calibrates the upper end of the tau search range.
    """
    pairs = generate_similar_pairs(data, k_targets)
    triplets = generate_triplets(data, pairs, k_impostors)
    spec = PerturbationSpec(epsilon=epsilon)
    margins_sq, _ = adversarial_margins(np.eye(data.n_features), data, triplets, spec)
    margins = np.sqrt(np.maximum(margins_sq, 0.0))
    return float(np.percentile(margins, percentile))


def random_search(
    data: Dataset,
    space: SearchSpace,
    trainer,
    seed: int = 0,
) -> SearchResult:
    """Random search over (mu, tau, lam) scored by stratified-CV kNN accuracy.

    ``trainer`` is a callable ``(train_data, mu, tau, lam, seed) ->
    pairwise-distance callable``.  Ties between trials go to the earlier one.
    """
    tau_upper = euclidean_margin_percentile(data, space.tau_upper_percentile)
    if tau_upper <= 0:
        raise InvalidInput("degenerate data: the tau search range is empty")
    sample_rng = substream_rng(seed, "search-sample")
    fold_rng = substream_rng(seed, "search-folds")
    assign = stratified_folds(data.labels, space.folds, fold_rng)
    n_folds = int(assign.max()) + 1

    trials: list[TrialResult] = []
    best: TrialResult | None = None
    for trial in range(space.n_samples):
        mu = float(sample_rng.uniform(*space.mu_range))
        tau = float(sample_rng.uniform(0.0, tau_upper))
        lam = float(sample_rng.uniform(0.0, space.lambda_upper(tau))) if tau > 0 else 0.0
        fold_accuracies = []
        for fold in range(n_folds):
            hold = assign == fold
            train_part = Dataset(data.instances[~hold], data.labels[~hold])
            valid_part = Dataset(data.instances[hold], data.labels[hold])
            trial_seed = substream_seed(seed, "search-trial", trial, fold)
            metric = trainer(train_part, mu, tau, lam, trial_seed)
            fold_accuracies.append(knn_accuracy(metric, train_part, valid_part, space.knn_k))
        result = TrialResult(
            trial=trial,
            mu=mu,
            tau=tau,
            lam=lam,
            fold_accuracies=fold_accuracies,
            mean_accuracy=float(np.mean(fold_accuracies)),
        )
        trials.append(result)
        if best is None or result.mean_accuracy > best.mean_accuracy:
            best = result
    return SearchResult(best=best, trials=trials, tau_upper=tau_upper)
