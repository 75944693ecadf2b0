"""Mixed continuous/categorical Gaussian processes with learned EDM-weighted categorical kernels."""

from wegp.edm import (
    BaseEdmSet,
    Edm,
    build_basis,
    build_extreme_basis,
    build_ordinal_basis,
    extreme_direction,
    ordinal_base_edm,
    reconstruct_in_cone,
    validate_edm,
    weighted_edm,
)
from wegp.gp import Dataset, FittedGp, fit, log_marginal_likelihood, predict
from wegp.kernel import KernelSpec, MixedPoint, kernel_matrix, kernel_value
from wegp.params import HyperParams, ParamLayout

__version__ = "0.1.0"

__all__ = [
    "BaseEdmSet",
    "Dataset",
    "Edm",
    "FittedGp",
    "HyperParams",
    "KernelSpec",
    "MixedPoint",
    "ParamLayout",
    "build_basis",
    "build_extreme_basis",
    "build_ordinal_basis",
    "extreme_direction",
    "fit",
    "kernel_matrix",
    "kernel_value",
    "log_marginal_likelihood",
    "ordinal_base_edm",
    "predict",
    "reconstruct_in_cone",
    "validate_edm",
    "weighted_edm",
]
