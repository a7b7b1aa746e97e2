"""Second-order value expansions, corrected controls, and error constants.

For a perturbation of size eps the primal and dual values expand as

    u_eps ~ u0 * (1 + eps*p*D0 + eps**2/2 * p*(D00 + p*D0**2))
    v_eps ~ v0 * (1 + eps*q*D0 + eps**2/2 * q*(D00 + q*D0**2))

where D0 is the changed-measure mean of the perturbation integral and D00
collects the quadratic functionals of its martingale representation.  Both
coefficients are computed from ODE grids where the model admits them and by
Monte Carlo otherwise; the absolute corrections delta_u1 = p*u0*D0 and
delta_u2 = p*u0*(D00 + p*D0**2) are reported alongside.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from valexp import models as _models
from valexp import montecarlo as _mc
from valexp.models import BsModel, EaModel, KoModel, ModelSpec
from valexp.montecarlo import IntegrabilityError, McEstimate, SimConfig
from valexp.riccati import DEFAULT_N_STEPS, simpson_integral
from valexp.utility import UtilitySpec, certainty_equivalent, conjugacy_map

__all__ = [
    "EpsilonRow",
    "ExpansionReport",
    "LogUtilityValue",
    "FdEntry",
    "FdCheck",
    "base_values",
    "delta0",
    "delta0_via_moments",
    "delta00",
    "approx_value",
    "build_report",
    "corrected_controls",
    "error_constants",
    "log_utility_value",
    "finite_difference_check",
]


@dataclass(frozen=True)
class EpsilonRow:
    """Order-0/1/2 values and certainty equivalents at one perturbation size."""

    eps: float
    u_order0: float
    u_order1: float
    u_order2: float
    v_order0: float
    v_order1: float
    v_order2: float
    ce_order0: float
    ce_order1: float
    ce_order2: float


@dataclass(frozen=True)
class ExpansionReport:
    """Base values, expansion coefficients, and per-epsilon approximations.

    Invariants enforced at construction: both base values are negative and
    conjugate (p*u0 = (q*v0)**(1-p) to a 1e-10 relative tolerance), and each
    row's order-0 value equals u0.
    """

    utility: UtilitySpec
    u0: float
    v0: float
    delta0: float
    delta00: float
    delta00_stderr: float
    delta_u1: float
    delta_u2: float
    rows: tuple[EpsilonRow, ...]

    def __post_init__(self) -> None:
        p, q = self.utility.p, self.utility.q
        if not (self.u0 < 0.0 and self.v0 < 0.0):
            raise ValueError("base values must be negative for p < 0")
        pu = p * self.u0
        if abs(pu - (q * self.v0) ** (1.0 - p)) > 1e-10 * abs(pu):
            raise ValueError("base values violate primal-dual conjugacy")
        for row in self.rows:
            if row.u_order0 != self.u0:
                raise ValueError("order-0 value must equal u0 in every row")


@dataclass(frozen=True)
class LogUtilityValue:
    """Logarithmic-utility value, exactly quadratic in the perturbation size.

    value = constant + eps*slope + eps**2/2 * curvature.  The curvature is
    a Monte Carlo estimate for the square-root model (nonzero stderr) and
    closed form otherwise.
    """

    value: float
    constant: float
    slope: float
    curvature: float
    curvature_stderr: float


@dataclass(frozen=True)
class FdEntry:
    h: float
    first_diff: float
    second_diff: float
    first_residual: float
    second_residual: float


@dataclass(frozen=True)
class FdCheck:
    """Central finite differences of the exact value against the expansion."""

    target_first: float
    target_second: float
    entries: tuple[FdEntry, ...]


def base_values(model: ModelSpec, n_steps: int = DEFAULT_N_STEPS) -> tuple[float, float]:
    """Unperturbed primal and dual values (u0, v0) at unit wealth."""
    spec = model.utility
    variant = model.variant
    if isinstance(variant, BsModel):
        return _models.bs_exact_value(variant, spec, 0.0)
    if isinstance(variant, KoModel):
        value = _models.ko_grid_bundle(variant, spec, n_steps).value
        expo = (
            -value.initial("a")
            - value.initial("b") * variant.lam0
            - 0.5 * value.initial("c") * variant.lam0**2
        )
        u0 = math.exp(expo) / spec.p
    else:
        grid = _models.ea_value_grid(variant, spec, n_steps)
        u0 = math.exp(-grid.initial("a") - grid.initial("b") * variant.F0) / spec.p
    return (u0, float(conjugacy_map(u0, spec, "primal-to-dual")))


def delta0(model: ModelSpec, n_steps: int = DEFAULT_N_STEPS) -> float:
    """First-order expansion coefficient D0 (deterministic for all variants).

    Constant model: q*lam*lam_prime*T/p.  Mean-reverting model: the
    correction functions evaluated at time zero,
    (C1(0) + C4(0)*lam0 + C5(0)*lam0**2)/(p-1).  Square-root model: the
    time integral of the deterministic base optimizer.
    """
    spec = model.utility
    variant = model.variant
    if isinstance(variant, BsModel):
        return spec.q * variant.lam * variant.lam_prime * variant.T / spec.p
    if isinstance(variant, KoModel):
        corr = _models.ko_grid_bundle(variant, spec, n_steps).corrections
        lam0 = variant.lam0
        return (
            corr.initial("C1") + corr.initial("C4") * lam0 + corr.initial("C5") * lam0**2
        ) / (spec.p - 1.0)
    grid = _models.ea_value_grid(variant, spec, n_steps)
    pi0 = (grid.values["b"] * variant.beta - 1.0) / (spec.p - 1.0)
    return simpson_integral(pi0, grid.step)


def delta0_via_moments(model: ModelSpec, n_steps: int = DEFAULT_N_STEPS) -> float:
    """D0 through the changed-measure cross moment (mean-reverting model only).

    Integrates E~[lam * lam'] over time and divides by 1 - p.  Must agree
    with :func:`delta0` to quadrature accuracy; the two routes share no
    intermediate quantities beyond the base value grids.
    """
    variant = model.variant
    if not isinstance(variant, KoModel):
        raise ValueError("the moment route is defined for the mean-reverting model")
    moments = _models.ko_grid_bundle(variant, model.utility, n_steps).moments
    return simpson_integral(moments.values["m12"], moments.step) / (1.0 - model.utility.p)


def delta00(
    model: ModelSpec,
    n_steps: int = DEFAULT_N_STEPS,
    config: SimConfig | None = None,
) -> tuple[float, float]:
    """Second-order expansion coefficient D00 with its standard error.

    Constant model: lam_prime**2*T/(1-p), exact.  Mean-reverting model:
    Simpson quadrature of the closed-form changed-measure moments of the
    representation loadings, exact up to grid error.  Square-root model:
    the representation loadings vanish, leaving the changed-measure mean of
    the quadratic weight over 1 - p, estimated by Monte Carlo (nonzero
    standard error).
    """
    spec = model.utility
    p = spec.p
    variant = model.variant
    if isinstance(variant, BsModel):
        return (variant.lam_prime**2 * variant.T / (1.0 - p), 0.0)
    if isinstance(variant, KoModel):
        bundle = _models.ko_grid_bundle(variant, spec, n_steps)
        corr, mom = bundle.corrections, bundle.moments
        c2 = corr.values["C2"]
        c4 = corr.values["C4"]
        c5 = corr.values["C5"]
        c6 = corr.values["C6"]
        m1 = mom.values["m1"]
        m2 = mom.values["m2"]
        m1p = mom.values["m1p"]
        m12 = mom.values["m12"]
        m2p = mom.values["m2p"]
        denom2 = (p - 1.0) ** 2
        gw2 = (
            variant.gamma**2
            / denom2
            * (c4**2 + 4.0 * c5**2 * m2 + c6**2 * m2p + 4.0 * c4 * c5 * m1
               + 2.0 * c4 * c6 * m1p + 4.0 * c5 * c6 * m12)
        )
        gb2 = (c2**2 + 2.0 * c2 * c6 * m1 + c6**2 * m2) / denom2
        gb_lamp = (c2 * m1p + c6 * m12) / (p - 1.0)
        integrand = p * gw2 + (m2p + p * (gb2 + 2.0 * gb_lamp)) / (1.0 - p)
        return (simpson_integral(integrand, mom.step), 0.0)

    cfg = config if config is not None else SimConfig()
    cfg = replace(cfg, measure="P-tilde-0")
    stats = _mc.simulate(
        replace(model, epsilon=0.0), config=cfg, n_steps=n_steps, collect_dual=False
    )
    est = McEstimate.from_samples(stats.Lambda, cfg.seed)
    return (est.mean / (1.0 - p), est.stderr / (1.0 - p))


def approx_value(
    u0: float,
    v0: float,
    d0: float,
    d00: float,
    spec: UtilitySpec,
    eps: float,
    order: int,
) -> tuple[float, float]:
    """Expansion of (u, v) at perturbation size eps, truncated at ``order``."""
    if order not in (0, 1, 2):
        raise ValueError("order must be 0, 1, or 2")
    p, q = spec.p, spec.q
    u_factor = 1.0
    v_factor = 1.0
    if order >= 1:
        u_factor += eps * p * d0
        v_factor += eps * q * d0
    if order == 2:
        u_factor += 0.5 * eps**2 * p * (d00 + p * d0**2)
        v_factor += 0.5 * eps**2 * q * (d00 + q * d0**2)
    return (u0 * u_factor, v0 * v_factor)


def _ce_or_fail(u_value: float, spec: UtilitySpec) -> float:
    try:
        return float(certainty_equivalent(u_value, spec))
    except ValueError as exc:
        raise IntegrabilityError(
            "approximate value left the utility domain; the perturbation is too "
            "large for this truncation"
        ) from exc


def build_report(
    model: ModelSpec,
    epsilons,
    n_steps: int = DEFAULT_N_STEPS,
    config: SimConfig | None = None,
) -> ExpansionReport:
    """Assemble the expansion report for a sweep of perturbation sizes."""
    spec = model.utility
    p = spec.p
    u0, v0 = base_values(model, n_steps)
    d0 = delta0(model, n_steps)
    d00, d00_se = delta00(model, n_steps, config)

    rows = []
    for eps in epsilons:
        eps = float(eps)
        u1, v1 = approx_value(u0, v0, d0, d00, spec, eps, 1)
        u2, v2 = approx_value(u0, v0, d0, d00, spec, eps, 2)
        rows.append(
            EpsilonRow(
                eps=eps,
                u_order0=u0,
                u_order1=u1,
                u_order2=u2,
                v_order0=v0,
                v_order1=v1,
                v_order2=v2,
                ce_order0=_ce_or_fail(u0, spec),
                ce_order1=_ce_or_fail(u1, spec),
                ce_order2=_ce_or_fail(u2, spec),
            )
        )

    return ExpansionReport(
        utility=spec,
        u0=u0,
        v0=v0,
        delta0=d0,
        delta00=d00,
        delta00_stderr=d00_se,
        delta_u1=p * u0 * d0,
        delta_u2=p * u0 * (d00 + p * d0**2),
        rows=tuple(rows),
    )


def corrected_controls(
    model: ModelSpec,
    eps: float | None = None,
    n_steps: int = DEFAULT_N_STEPS,
    f_min: float = 1e-8,
):
    """First-order corrected controls (pi, nu) as state-convention callables.

    pi adds eps*(lam' + p*gamma_B)/(1-p) to the base optimizer and nu adds
    -eps*p*gamma_W; models without representation loadings only shift pi.
    ``eps`` defaults to the model's own epsilon.
    """
    e = model.epsilon if eps is None else float(eps)
    return _models._strategy_functions(model, e, n_steps, f_min)


def error_constants(
    model: ModelSpec,
    eps0: float,
    config: SimConfig | None = None,
    n_steps: int = DEFAULT_N_STEPS,
):
    """Monte Carlo estimates of the primal and dual error constants.

    Returns ``(c_v, c_u_of_eps)``.  ``c_v`` bounds the dual first-order
    remainder: |q| * ||eta||^2 in L^{2(1-p)} plus ||Lambda|| in L^{1-p},
    both under the physical measure, with a delta-method standard error that
    accounts for the correlation of the two sample moments.  ``c_u_of_eps``
    maps any |eps| <= eps0 to the primal second-order constant
    p**2/2 * |u0| * E~[Phi**2 * exp(|eps*p| * (sign-adjusted negative part))].
    """
    if not (eps0 > 0.0 and math.isfinite(eps0)):
        raise ValueError("eps0 must be positive")
    spec = model.utility
    p, q = spec.p, spec.q
    cfg = config if config is not None else SimConfig()

    phys = _mc.simulate(
        model, config=replace(cfg, measure="P"), n_steps=n_steps, collect_dual=False
    )
    s_eta = 2.0 * (1.0 - p)
    s_lam = 1.0 - p
    pow_eta = np.abs(phys.eta) ** s_eta
    pow_lam = phys.Lambda**s_lam
    if not (np.all(np.isfinite(pow_eta)) and np.all(np.isfinite(pow_lam))):
        raise IntegrabilityError("dual error-constant moments diverged")
    m_eta = float(np.mean(pow_eta))
    m_lam = float(np.mean(pow_lam))
    c_v = abs(q) * m_eta ** (2.0 / s_eta) + m_lam ** (1.0 / s_lam)
    g_eta = abs(q) * (2.0 / s_eta) * m_eta ** (2.0 / s_eta - 1.0)
    g_lam = (1.0 / s_lam) * m_lam ** (1.0 / s_lam - 1.0)
    n = pow_eta.size
    cov = np.cov(pow_eta, pow_lam, ddof=1)
    var = (
        g_eta**2 * cov[0, 0] + g_lam**2 * cov[1, 1] + 2.0 * g_eta * g_lam * cov[0, 1]
    ) / n
    se = math.sqrt(max(var, 0.0))
    c_v_est = McEstimate.from_interval(c_v - _mc.Z95 * se, c_v + _mc.Z95 * se, n, cfg.seed)

    tilde = _mc.simulate(
        model, config=replace(cfg, measure="P-tilde-0"), n_steps=n_steps, collect_dual=False
    )
    phi = tilde.Phi
    u0, _ = base_values(model, n_steps)
    scale = 0.5 * p**2 * abs(u0)

    def c_u_of_eps(eps: float) -> McEstimate:
        if abs(eps) > eps0:
            raise ValueError(f"|eps| must not exceed eps0={eps0}")
        if eps == 0.0:
            tilt = 1.0
        else:
            tilt = np.exp(abs(eps) * abs(p) * np.maximum(-math.copysign(1.0, eps) * phi, 0.0))
        samples = scale * phi**2 * tilt
        if not np.all(np.isfinite(samples)):
            raise IntegrabilityError("primal error-constant moment diverged")
        return McEstimate.from_samples(samples, cfg.seed)

    return (c_v_est, c_u_of_eps)


def log_utility_value(
    model: ModelSpec,
    eps: float,
    x: float = 1.0,
    config: SimConfig | None = None,
    n_steps: int = DEFAULT_N_STEPS,
) -> LogUtilityValue:
    """Logarithmic-utility value log(x) + half the expected squared premium.

    The value is exactly quadratic in eps; no expansion truncation is
    involved.  Slope and curvature are closed form except for the
    square-root model's curvature, which averages the quadratic weight by
    Monte Carlo.
    """
    if not (x > 0.0 and math.isfinite(x)):
        raise ValueError("wealth x must be positive")
    variant = model.variant
    if isinstance(variant, BsModel):
        t_hor = variant.T
        constant = math.log(x) + 0.5 * variant.lam**2 * t_hor
        slope = variant.lam * variant.lam_prime * t_hor
        curvature, se = variant.lam_prime**2 * t_hor, 0.0
    elif isinstance(variant, KoModel):
        kappa, theta, gamma = variant.kappa, variant.theta, variant.gamma
        t_hor = variant.T
        d0 = variant.lam0 - theta
        e1 = 1.0 - math.exp(-kappa * t_hor)
        e2 = 1.0 - math.exp(-2.0 * kappa * t_hor)
        sq_int = (
            theta**2 * t_hor
            + 2.0 * theta * d0 * e1 / kappa
            + d0**2 * e2 / (2.0 * kappa)
            + gamma**2 / (2.0 * kappa) * (t_hor - e2 / (2.0 * kappa))
        )
        constant = math.log(x) + 0.5 * sq_int
        # lam' starts at zero and is independent of lam, so the slope term
        # E[lam*lam'] integrates to zero.
        slope = 0.0
        curvature, se = (t_hor - e2 / (2.0 * kappa)) / (2.0 * kappa), 0.0
    else:
        kappa, theta = variant.kappa, variant.theta
        t_hor = variant.T
        e1 = 1.0 - math.exp(-kappa * t_hor)
        constant = math.log(x) + 0.5 * (theta * t_hor + (variant.F0 - theta) * e1 / kappa)
        slope = t_hor
        cfg = config if config is not None else SimConfig()
        stats = _mc.simulate(
            replace(model, epsilon=0.0), config=replace(cfg, measure="P"),
            n_steps=n_steps, collect_dual=False,
        )
        est = McEstimate.from_samples(stats.Lambda, cfg.seed)
        curvature, se = est.mean, est.stderr

    value = constant + eps * slope + 0.5 * eps**2 * curvature
    return LogUtilityValue(value, constant, slope, curvature, se)


def finite_difference_check(
    model: ModelSpec,
    h_values=(1e-3, 5e-4),
    n_steps: int = DEFAULT_N_STEPS,
) -> FdCheck:
    """Central differences of the exact value against the expansion targets.

    Available where the perturbed value is computable exactly: the constant
    model in closed form and the mean-reverting model through its perturbed
    coefficient system.  First differences target p*u0*D0 and second
    differences p*u0*(D00 + p*D0**2); both residuals shrink at second order
    in h.
    """
    spec = model.utility
    variant = model.variant
    if isinstance(variant, BsModel):

        def value_at(e: float) -> float:
            return _models.bs_exact_value(variant, spec, e)[0]

    elif isinstance(variant, KoModel):

        def value_at(e: float) -> float:
            return _models.ko_exact_value(variant, spec, e, n_steps=n_steps)

    else:
        raise ValueError("finite differences need an exactly computable perturbed value")

    u0, _ = base_values(model, n_steps)
    d0 = delta0(model, n_steps)
    d00, _ = delta00(model, n_steps)
    p = spec.p
    target_first = p * u0 * d0
    target_second = p * u0 * (d00 + p * d0**2)

    entries = []
    base = value_at(0.0)
    for h in h_values:
        h = float(h)
        up, down = value_at(h), value_at(-h)
        first = (up - down) / (2.0 * h)
        second = (up - 2.0 * base + down) / h**2
        entries.append(
            FdEntry(
                h=h,
                first_diff=first,
                second_diff=second,
                first_residual=abs(first - target_first),
                second_residual=abs(second - target_second),
            )
        )
    return FdCheck(target_first=target_first, target_second=target_second, entries=tuple(entries))
