"""Magnetic Schroedinger discretisations of the weighted dbar problem."""

__version__ = "0.1.0"

from .grid import FormField, GridField, TensorGrid, build_grid, inner_product, sample
from .weights import (
    DecoupledWeight,
    DerivativeBundle,
    GridSampledWeight,
    PolynomialWeight,
    RadialPowerWeight,
    WeightModel,
    ZeroWeight,
    eval_derivatives,
    vector_potential,
    weight_from_config,
)

__all__ = [
    "DecoupledWeight",
    "DerivativeBundle",
    "FormField",
    "GridField",
    "GridSampledWeight",
    "PolynomialWeight",
    "RadialPowerWeight",
    "TensorGrid",
    "WeightModel",
    "ZeroWeight",
    "build_grid",
    "eval_derivatives",
    "inner_product",
    "sample",
    "vector_potential",
    "weight_from_config",
]
