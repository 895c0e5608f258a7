"""Latent motion models: PCA manifolds, GPLVM and GPDM."""

from .gp import GPPosterior, gp_neg_log_likelihood, gp_posterior, jitter_cholesky
from .gpdm import GpdmModel, dynamics_step, gpdm_fit, gpdm_objective, gpdm_terms, sequence_pairs
from .gplvm import LatentModel, gplvm_fit, gplvm_neg_log_posterior, latent_to_observation
from .kernels import KernelParams, gram, rbf
from .optimize import OptimizeResult, central_difference, minimize_lbfgs
from .pca import PcaModel, pca_fit, pca_project, pca_reconstruct

__all__ = [
    "GPPosterior", "GpdmModel", "KernelParams", "LatentModel", "OptimizeResult", "PcaModel",
    "central_difference", "dynamics_step", "gp_neg_log_likelihood", "gp_posterior", "gpdm_fit",
    "gpdm_objective", "gpdm_terms", "gplvm_fit", "gplvm_neg_log_posterior", "gram", "jitter_cholesky",
    "latent_to_observation", "minimize_lbfgs", "pca_fit", "pca_project", "pca_reconstruct", "rbf",
    "sequence_pairs",
]
