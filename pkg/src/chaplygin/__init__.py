"""Stochastically perturbed n-dimensional Chaplygin ball on SO(n)."""
from .ball import BallModel, InertiaOperator, identity_inertia, physical_inertia, random_inertia
from .lie import AlgebraVector, BasisSet, GroupPoint, build_basis
from .sde import IntegratorConfig, NoiseConfig, QState, simulate_ensemble

__version__ = "0.1.0"

__all__ = [
    "AlgebraVector",
    "BallModel",
    "BasisSet",
    "GroupPoint",
    "InertiaOperator",
    "IntegratorConfig",
    "NoiseConfig",
    "QState",
    "build_basis",
    "identity_inertia",
    "physical_inertia",
    "random_inertia",
    "simulate_ensemble",
]
