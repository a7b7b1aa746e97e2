"""Market models, their coefficient grids, exact values, and optimal controls.

Three variants share a common structure: asset returns earn a market price of
risk that is perturbed along a fixed direction,

    lambda_eps = lambda + eps * lambda_prime.

``BsModel`` has constant lambda and lambda_prime.  ``KoModel`` is the
mean-reverting Gaussian risk premium: the base premium follows an
Ornstein-Uhlenbeck process driven by the orthogonal noise, and the
perturbation direction follows its own zero-start Ornstein-Uhlenbeck process
driven by the return noise, matching a small direct loading of the premium on
return shocks.  ``EaModel`` is a square-root factor model with unit base
premium, volatility sqrt(F), and perturbation direction 1/F.

Controls follow a fixed state convention used across the package: a strategy
or drift adjustment is a callable ``(t, state) -> ndarray or float`` where
``state`` is ``()`` for the constant model, ``(lam, lam_prime)`` for the
mean-reverting model, and ``(F,)`` with F already floored at zero for the
square-root model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from valexp import riccati
from valexp.riccati import DEFAULT_N_STEPS, OdeGrid
from valexp.utility import UtilitySpec

__all__ = [
    "BsModel",
    "KoModel",
    "EaModel",
    "ModelSpec",
    "KoGridBundle",
    "ko_grid_bundle",
    "ea_value_grid",
    "bs_exact_value",
    "ko_exact_value",
    "ko_base_controls",
    "ko_full_optimizer",
    "ko_gamma",
    "ea_base_controls",
    "girsanov_drifts",
    "constant_strategy",
]


def _require_finite(**kwargs: float) -> None:
    for name, value in kwargs.items():
        if not math.isfinite(float(value)):
            raise ValueError(f"{name} must be finite, got {value!r}")


@dataclass(frozen=True)
class BsModel:
    """Constant market price of risk ``lam`` perturbed by constant ``lam_prime``."""

    lam: float
    lam_prime: float
    T: float

    def __post_init__(self) -> None:
        _require_finite(lam=self.lam, lam_prime=self.lam_prime, T=self.T)
        if self.T <= 0.0:
            raise ValueError("horizon T must be positive")


@dataclass(frozen=True)
class KoModel:
    """Mean-reverting Gaussian risk premium.

    Base dynamics: d lam = kappa*(theta - lam) dt + gamma dW, lam(0) = lam0.
    Perturbation direction: d lam' = -kappa*lam' dt + dB, lam'(0) = 0, where
    B is the return noise.  The perturbed full model loads the premium on B
    with coefficient eps.
    """

    kappa: float
    theta: float
    gamma: float
    lam0: float
    T: float

    def __post_init__(self) -> None:
        _require_finite(kappa=self.kappa, theta=self.theta, gamma=self.gamma, lam0=self.lam0, T=self.T)
        if self.kappa <= 0.0:
            raise ValueError("mean-reversion speed kappa must be positive")
        if self.T <= 0.0:
            raise ValueError("horizon T must be positive")


@dataclass(frozen=True)
class EaModel:
    """Square-root factor model with premium perturbation 1/F.

    Factor: dF = kappa*(theta - F) dt + sqrt(F)*(beta dB + gamma dW), F(0) = F0.
    Returns have volatility sqrt(F) and base price of risk 1; the perturbed
    price of risk is 1 + eps/F.  The strict Feller condition
    2*kappa*theta > beta**2 + gamma**2 keeps F positive, which the
    constructor enforces; beta and gamma may take either sign.
    """

    kappa: float
    theta: float
    beta: float
    gamma: float
    F0: float
    T: float

    def __post_init__(self) -> None:
        _require_finite(
            kappa=self.kappa, theta=self.theta, beta=self.beta,
            gamma=self.gamma, F0=self.F0, T=self.T,
        )
        if self.kappa <= 0.0 or self.theta <= 0.0:
            raise ValueError("kappa and theta must be positive")
        if self.F0 <= 0.0:
            raise ValueError("initial factor F0 must be positive")
        if self.T <= 0.0:
            raise ValueError("horizon T must be positive")
        if 2.0 * self.kappa * self.theta <= self.beta**2 + self.gamma**2:
            raise ValueError(
                "strict Feller condition 2*kappa*theta > beta**2 + gamma**2 is violated"
            )


@dataclass(frozen=True)
class ModelSpec:
    """A model variant together with the utility and the perturbation size."""

    variant: BsModel | KoModel | EaModel
    utility: UtilitySpec
    epsilon: float

    def __post_init__(self) -> None:
        if not isinstance(self.variant, (BsModel, KoModel, EaModel)):
            raise ValueError(f"unsupported model variant {type(self.variant).__name__}")
        if not isinstance(self.utility, UtilitySpec):
            raise ValueError("utility must be a UtilitySpec")
        _require_finite(epsilon=self.epsilon)


@dataclass(frozen=True)
class KoGridBundle:
    """Coefficient grids for the mean-reverting model at base loading zero.

    ``value`` holds (a, b, c) at twice ``n_steps`` resolution so that the
    correction and moment solvers, which consume it, keep full Runge-Kutta
    order; ``corrections`` holds (C1, C2, C4, C5, C6) and ``moments`` the
    zeroth-order-measure moments, both at ``n_steps``.
    """

    value: OdeGrid
    corrections: OdeGrid
    moments: OdeGrid
    n_steps: int


@lru_cache(maxsize=32)
def ko_grid_bundle(model: KoModel, spec: UtilitySpec, n_steps: int = DEFAULT_N_STEPS) -> KoGridBundle:
    """Solve and cache all coefficient systems for a mean-reverting model."""
    value = riccati.ko_value_odes(
        model.kappa, model.theta, 0.0, model.gamma, model.T, spec, 2 * n_steps
    )
    b2, c2 = value.values["b"], value.values["c"]
    corrections = riccati.ko_correction_odes(
        model.kappa, model.theta, model.gamma, model.T, spec, b2, c2, n_steps
    )
    moments = riccati.ko_moment_odes(
        model.kappa, model.theta, model.gamma, model.T, spec, b2, c2, model.lam0, n_steps
    )
    return KoGridBundle(value=value, corrections=corrections, moments=moments, n_steps=n_steps)


@lru_cache(maxsize=32)
def ea_value_grid(model: EaModel, spec: UtilitySpec, n_steps: int = DEFAULT_N_STEPS) -> OdeGrid:
    """Solve and cache the (a, b) value grid for a square-root model at eps = 0."""
    return riccati.ea_value_odes(
        model.kappa, model.theta, model.beta, model.gamma, model.T, spec, n_steps
    )


@lru_cache(maxsize=64)
def _ko_value_grid(model: KoModel, spec: UtilitySpec, beta: float, n_steps: int) -> OdeGrid:
    return riccati.ko_value_odes(
        model.kappa, model.theta, beta, model.gamma, model.T, spec, n_steps
    )


def bs_exact_value(
    model: BsModel, spec: UtilitySpec, eps: float, x: float = 1.0, y: float = 1.0
) -> tuple[float, float]:
    """Closed-form primal and dual values for the constant model.

    With lam_eps = lam + eps*lam_prime,

        p*u = x**p * exp(q*lam_eps**2*T/2),
        q*v = y**(-q) ... scaled by exp(q/(1-p)*lam_eps**2*T/2).

    Returns the pair (u(x), v(y)).
    """
    p, q = spec.p, spec.q
    lam_eps = model.lam + eps * model.lam_prime
    growth = 0.5 * lam_eps**2 * model.T
    u = x**p * math.exp(q * growth) / p
    v = y ** (-q) * math.exp(q / (1.0 - p) * growth) / q
    return (u, v)


def ko_exact_value(
    model: KoModel,
    spec: UtilitySpec,
    beta: float,
    x: float = 1.0,
    n_steps: int = DEFAULT_N_STEPS,
) -> float:
    """Exact value of the fully perturbed mean-reverting model at loading ``beta``.

    Solves the coefficient system with the return-noise loading included and
    evaluates x**p/p * exp(-a(0) - b(0)*lam0 - c(0)*lam0**2/2).
    """
    grid = _ko_value_grid(model, spec, float(beta), n_steps)
    expo = -grid.initial("a") - grid.initial("b") * model.lam0 - 0.5 * grid.initial("c") * model.lam0**2
    return x**spec.p / spec.p * math.exp(expo)


def ko_base_controls(model: KoModel, t, lam_t, value_grid: OdeGrid, spec: UtilitySpec):
    """Optimal base-model controls (pi, nu) at time t and premium level lam_t.

    pi = lam/(1-p) is the myopic rule; nu = gamma*(b(t) + c(t)*lam) prices the
    orthogonal noise in the dual problem.
    """
    pi = np.asarray(lam_t, dtype=float) / (1.0 - spec.p)
    nu = model.gamma * (value_grid.interp("b", t) + value_grid.interp("c", t) * lam_t)
    return (pi, nu)


def ko_full_optimizer(t, lam_t, beta: float, value_grid: OdeGrid, spec: UtilitySpec):
    """Optimal investment fraction of the fully perturbed mean-reverting model.

    pi = (b(t)*beta + (c(t)*beta - 1)*lam) / (p - 1) on grids solved at the
    same loading ``beta``; reduces to the myopic rule at beta = 0.
    """
    b = value_grid.interp("b", t)
    c = value_grid.interp("c", t)
    return (b * beta + (c * beta - 1.0) * np.asarray(lam_t, dtype=float)) / (spec.p - 1.0)


def ko_gamma(model: KoModel, t, lam_t, lam_prime_t, correction_grid: OdeGrid, spec: UtilitySpec):
    """Integrand loadings (gamma_B, gamma_W) of the perturbation functional.

    These are the two martingale-representation coefficients of the
    conditional expectation of the weighted perturbation integral:

        gamma_B = (C2 + C6*lam) / (p - 1)
        gamma_W = gamma * (C4 + 2*C5*lam + C6*lam') / (p - 1)
    """
    c2 = correction_grid.interp("C2", t)
    c4 = correction_grid.interp("C4", t)
    c5 = correction_grid.interp("C5", t)
    c6 = correction_grid.interp("C6", t)
    denom = spec.p - 1.0
    gamma_b = (c2 + c6 * np.asarray(lam_t, dtype=float)) / denom
    gamma_w = model.gamma * (c4 + 2.0 * c5 * np.asarray(lam_t, dtype=float) + c6 * lam_prime_t) / denom
    return (gamma_b, gamma_w)


def ea_base_controls(model: EaModel, t, F_t, value_grid: OdeGrid, spec: UtilitySpec):
    """Optimal base-model controls (pi, nu) for the square-root model.

    pi = (b(t)*beta - 1)/(p - 1) is deterministic; nu = b(t)*gamma*sqrt(F).
    Raises if the factor is not positive: simulated paths must be floored
    before control evaluation (see the Monte Carlo module).
    """
    arr = np.asarray(F_t, dtype=float)
    if np.any(arr <= 0.0):
        raise ValueError("factor must be positive; floor simulated paths before evaluating controls")
    b = value_grid.interp("b", t)
    pi = (b * model.beta - 1.0) / (spec.p - 1.0) * np.ones_like(arr)
    nu = b * model.gamma * np.sqrt(arr)
    return (pi, nu)


def constant_strategy(value: float):
    """Strategy callable that invests a constant fraction regardless of state."""

    def pi(t, state):
        return float(value)

    return pi


def _zero_control(t, state):
    return 0.0


def _strategy_functions(model_spec: ModelSpec, eps: float, n_steps: int, f_min: float):
    """Build (pi, nu) callables for the eps-corrected optimal controls.

    At eps = 0 these are the base-model optimizers.  The corrections add
    (lam' + p*gamma_B)/(1-p) to pi and -p*gamma_W to nu, using the
    representation loadings where the model has any (the constant and
    square-root models have none).  For the square-root model the 1/F factor
    in the correction is evaluated at max(F, f_min).
    """
    variant = model_spec.variant
    spec = model_spec.utility
    p = spec.p
    one_m_p = 1.0 - p

    if isinstance(variant, BsModel):
        lam_eps = variant.lam + eps * variant.lam_prime

        def pi(t, state):
            return lam_eps / one_m_p

        return (pi, _zero_control)

    if isinstance(variant, KoModel):
        bundle = ko_grid_bundle(variant, spec, n_steps)
        value, corr = bundle.value, bundle.corrections
        gamma = variant.gamma

        if eps == 0.0:

            def pi(t, state):
                lam, _ = state
                return lam / one_m_p

            def nu(t, state):
                lam, _ = state
                return gamma * (value.interp("b", t) + value.interp("c", t) * lam)

            return (pi, nu)

        def pi(t, state):
            lam, lamp = state
            gb, _ = ko_gamma(variant, t, lam, lamp, corr, spec)
            return (lam + eps * (lamp + p * gb)) / one_m_p

        def nu(t, state):
            lam, lamp = state
            _, gw = ko_gamma(variant, t, lam, lamp, corr, spec)
            return gamma * (value.interp("b", t) + value.interp("c", t) * lam) - eps * p * gw

        return (pi, nu)

    grid = ea_value_grid(variant, spec, n_steps)
    beta, gamma = variant.beta, variant.gamma

    def pi(t, state):
        (f,) = state
        base = (grid.interp("b", t) * beta - 1.0) / (p - 1.0)
        if eps == 0.0:
            return base * np.ones_like(np.asarray(f, dtype=float))
        return base + eps / (one_m_p * np.maximum(f, f_min))

    def nu(t, state):
        (f,) = state
        return grid.interp("b", t) * gamma * np.sqrt(f)

    return (pi, nu)


def girsanov_drifts(model_spec: ModelSpec, n_steps: int = DEFAULT_N_STEPS):
    """Drift adjustments (mu_B, mu_W) that turn raw draws into zeroth-order-measure noise.

    Under the measure induced by the base-model optimal wealth and dual
    density, the return noise gains drift (pi0 - lam)*sigma and the
    orthogonal noise gains drift -nu0.  The returned callables follow the
    package state convention and are evaluated at eps = 0 grids.
    """
    variant = model_spec.variant
    spec = model_spec.utility
    q = spec.q

    if isinstance(variant, BsModel):
        lam = variant.lam

        def mu_b(t, state):
            return q * lam

        return (mu_b, _zero_control)

    if isinstance(variant, KoModel):
        value = ko_grid_bundle(variant, spec, n_steps).value
        gamma = variant.gamma

        def mu_b(t, state):
            lam, _ = state
            return q * lam

        def mu_w(t, state):
            lam, _ = state
            return -gamma * (value.interp("b", t) + value.interp("c", t) * lam)

        return (mu_b, mu_w)

    grid = ea_value_grid(variant, spec, n_steps)
    beta, gamma = variant.beta, variant.gamma
    p = spec.p

    def mu_b(t, state):
        (f,) = state
        pi0 = (grid.interp("b", t) * beta - 1.0) / (p - 1.0)
        return (pi0 - 1.0) * np.sqrt(f)

    def mu_w(t, state):
        (f,) = state
        return -grid.interp("b", t) * gamma * np.sqrt(f)

    return (mu_b, mu_w)
