"""Asymptotic expansions of optimal investment values under drift perturbations.

The package computes first- and second-order corrections to power-utility
value functions when the market price of risk is perturbed along a fixed
direction, together with Monte Carlo primal and dual certainty-equivalent
bounds that validate the expansion.  Three market models are provided: a
constant-coefficient benchmark, an Ornstein-Uhlenbeck risk premium, and a
square-root factor model with perturbation inversely proportional to the
factor.
"""

from valexp.utility import (
    UtilitySpec,
    certainty_equivalent,
    conjugacy_map,
    conjugate_utility,
    power_utility,
)
from valexp.riccati import OdeBlowUpError, OdeGrid, OdeSystem, integrate_backward
from valexp.models import BsModel, EaModel, KoModel, ModelSpec
from valexp.expansion import ExpansionReport, build_report
from valexp.montecarlo import IntegrabilityError, McEstimate, PathStats, SimConfig

__version__ = "0.1.0"

__all__ = [
    "UtilitySpec",
    "power_utility",
    "conjugate_utility",
    "certainty_equivalent",
    "conjugacy_map",
    "OdeGrid",
    "OdeSystem",
    "OdeBlowUpError",
    "integrate_backward",
    "BsModel",
    "KoModel",
    "EaModel",
    "ModelSpec",
    "ExpansionReport",
    "build_report",
    "SimConfig",
    "PathStats",
    "McEstimate",
    "IntegrabilityError",
    "__version__",
]
