"""Power utility, its convex conjugate, and certainty equivalents.

The investor has utility U(x) = x**p / p with p < 0 (relative risk aversion
1 - p > 1).  The conjugate is V(y) = y**(-q) / q with q = p / (1 - p), so
q lies in (-1, 0) and (1 - p) * (1 + q) = 1.  Both U and V are negative on
their domains; certainty equivalents undo U on the value scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "UtilitySpec",
    "power_utility",
    "conjugate_utility",
    "certainty_equivalent",
    "conjugacy_map",
]


@dataclass(frozen=True)
class UtilitySpec:
    """Risk-aversion exponent ``p`` with its derived conjugate exponent.

    Args:
        p: utility exponent, must be finite and strictly negative.
    """

    p: float

    def __post_init__(self) -> None:
        p = float(self.p)
        if not np.isfinite(p) or p >= 0.0:
            raise ValueError(f"utility exponent must be finite and negative, got {self.p!r}")
        object.__setattr__(self, "p", p)

    @property
    def q(self) -> float:
        """Conjugate exponent p / (1 - p), always in (-1, 0)."""
        return self.p / (1.0 - self.p)


def power_utility(x, spec: UtilitySpec):
    """U(x) = x**p / p for wealth x > 0.  Accepts scalars or arrays."""
    arr = np.asarray(x, dtype=float)
    if np.any(arr <= 0.0) or not np.all(np.isfinite(arr)):
        raise ValueError("wealth must be positive and finite")
    return x**spec.p / spec.p


def conjugate_utility(y, spec: UtilitySpec):
    """V(y) = y**(-q) / q, the convex conjugate sup_x (U(x) - x*y), for y > 0."""
    arr = np.asarray(y, dtype=float)
    if np.any(arr <= 0.0) or not np.all(np.isfinite(arr)):
        raise ValueError("dual argument must be positive and finite")
    q = spec.q
    return y ** (-q) / q


def certainty_equivalent(u_value, spec: UtilitySpec):
    """Wealth whose utility equals ``u_value``: (p * u)**(1/p).

    Requires p * u > 0, i.e. u on the negative value scale.
    """
    pu = spec.p * np.asarray(u_value, dtype=float)
    if np.any(pu <= 0.0) or not np.all(np.isfinite(pu)):
        raise ValueError("utility value must be negative for p < 0")
    return (spec.p * u_value) ** (1.0 / spec.p)


def conjugacy_map(value, spec: UtilitySpec, direction: str):
    """Map between primal and dual value levels at unit wealth.

    The optimal pair satisfies p * u = (q * v)**(1 - p).  Given one side this
    returns the other; ``direction`` is ``"primal-to-dual"`` or
    ``"dual-to-primal"``.
    """
    p, q = spec.p, spec.q
    arr = np.asarray(value, dtype=float)
    if direction == "primal-to-dual":
        if np.any(p * arr <= 0.0) or not np.all(np.isfinite(arr)):
            raise ValueError("primal value must be negative and finite")
        return (p * value) ** (1.0 / (1.0 - p)) / q
    if direction == "dual-to-primal":
        if np.any(q * arr <= 0.0) or not np.all(np.isfinite(arr)):
            raise ValueError("dual value must be negative and finite")
        return (q * value) ** (1.0 - p) / p
    raise ValueError(f"unknown direction {direction!r}")
