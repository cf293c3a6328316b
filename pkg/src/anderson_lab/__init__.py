"""Numerical laboratory for Anderson-type random Schrodinger operators on Z^3."""

from __future__ import annotations

__version__ = "0.1.0"

from .errors import (
    AndersonLabError,
    ConfigError,
    DomainError,
    LemmaViolation,
    NumericalError,
)
from .lattice import Box, ConeSpec, Cube, dyadic_cover
from .ensembles import PotentialField, SiteDistribution, bernoulli_decompose, sample_potential
from .operators import HamiltonianInstance, Resolvent, assemble, eigendecompose, lambda_min

__all__ = [
    "__version__",
    "AndersonLabError",
    "ConfigError",
    "DomainError",
    "LemmaViolation",
    "NumericalError",
    "Box",
    "ConeSpec",
    "Cube",
    "dyadic_cover",
    "PotentialField",
    "SiteDistribution",
    "bernoulli_decompose",
    "sample_potential",
    "HamiltonianInstance",
    "Resolvent",
    "assemble",
    "eigendecompose",
    "lambda_min",
]
