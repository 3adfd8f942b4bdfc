"""Bayesian scalar-on-network regression with manifold learning.

Connectivity matrices are decomposed as ``Y_i = U diag(lambda_i) U^T + noise``
with ``U`` on the Stiefel manifold, and a scalar outcome is regressed on the
subject loadings ``lambda_i`` plus covariates. Two posterior samplers are
provided: a joint MALA-within-Gibbs sampler and an approximate two-stage
sampler corrected by independent Metropolis-Hastings.
"""

from .numerics import (
    DimensionError,
    NumericalError,
    ParameterError,
    SingularityError,
    QuadratureRule,
    build_quadrature,
    devecl,
    polar_expand,
    vecl,
)
from .model import Dataset, Hyperparams, ModelState
from .mala import MalaConfig
from .sampler import PosteriorDraws, SamplerConfig, align_draws, init_state, run_joint
from .twostage import run_stage1, run_stage2, run_twostage
from .simulate import GroundTruth, SimConfig, generate, make_block_u
from .evaluate import cross_validate, param_rmse, predict, predictive_r2, subspace_distance

__version__ = "0.1.0"

__all__ = [
    "DimensionError", "NumericalError", "ParameterError", "SingularityError",
    "QuadratureRule", "build_quadrature", "devecl", "polar_expand", "vecl",
    "Dataset", "Hyperparams", "ModelState", "MalaConfig",
    "PosteriorDraws", "SamplerConfig", "align_draws", "init_state", "run_joint",
    "run_stage1", "run_stage2", "run_twostage",
    "GroundTruth", "SimConfig", "generate", "make_block_u",
    "cross_validate", "param_rmse", "predict", "predictive_r2", "subspace_distance",
]
