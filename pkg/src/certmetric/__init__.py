"""Mahalanobis metric learning with certified adversarial margins."""

from .core import (
    Dataset,
    EigenDecomposition,
    LinearMap,
    identity_map,
    mahalanobis_sq,
    pairwise_sq_euclidean,
    pca_fit,
    preprocess,
    project_to_psd,
    symmetric_eig,
    validate_metric,
)
from .errors import InvalidInput, NumericalFailure
from .evaluation import (
    NoiseSpec,
    SearchSpace,
    add_noise,
    augment_test,
    compositional_metric,
    euclidean_metric,
    knn_accuracy,
    knn_predict,
    mahalanobis_metric,
    random_search,
)
from .lmnn import LmnnConfig, TrainingTrace, lmnn_gradient, lmnn_loss, train_lmnn_cr
from .robustness import (
    BoundReport,
    MarginReport,
    PerturbationSpec,
    Side,
    SupportPointResult,
    adversarial_margin_sq,
    adversarial_margins,
    generalization_bound,
    margin_report,
    perturbation_loss,
    perturbation_loss_gradient,
    perturbation_loss_gradient_pca,
    perturbation_loss_pca,
    support_point,
    support_point_pca,
)
from .scml import (
    BasisSet,
    ScmlConfig,
    SparseCompositionalMetric,
    generate_bases,
    prox_l1_nonneg,
    scml_cr_gradient,
    scml_cr_objective,
    scml_distance_sq,
    train_scml_cr,
)
from .toydata import ToySpec, generate
from .triplets import SimilarPairSet, TripletSet, generate_similar_pairs, generate_triplets

__version__ = "0.1.0"
