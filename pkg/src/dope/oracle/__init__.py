"""Exact finite-distribution oracle for the adjusted-mean variance identities."""

from .finite import AdjustedFunctionals, FiniteJointDistribution, Partition, exact_functionals
from .generators import GeneratorSizes, generate_compliant_distribution, random_refinement_pair
from .identities import (
    check_binary_outcome_descriptions,
    check_deletion_identity,
    check_inverse_propensity_projection,
    check_propensity_description,
    check_supplementation_identity,
    propensity_partition,
)
from .quadrature import SmoothIndexDGP, adaptive_simpson, si_gradient_check, uniform_square_dgp
from .suites import run_suites
from .symmetric import SymmetricExampleSpec, symmetric_example_check

__all__ = [
    "AdjustedFunctionals",
    "FiniteJointDistribution",
    "GeneratorSizes",
    "Partition",
    "SmoothIndexDGP",
    "SymmetricExampleSpec",
    "adaptive_simpson",
    "check_binary_outcome_descriptions",
    "check_deletion_identity",
    "check_inverse_propensity_projection",
    "check_propensity_description",
    "check_supplementation_identity",
    "exact_functionals",
    "generate_compliant_distribution",
    "propensity_partition",
    "random_refinement_pair",
    "run_suites",
    "si_gradient_check",
    "symmetric_example_check",
    "uniform_square_dgp",
]
