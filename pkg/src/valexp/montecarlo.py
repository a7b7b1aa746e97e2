"""Monte Carlo wealth simulation with primal and dual certainty-equivalent bounds.

Scheme
------
All variants integrate the log-wealth, log-density, and functional
accumulators with a left-point Euler rule and exact per-step exponentiation
at the end, so wealth and dual densities stay positive by construction.  The
square-root factor uses full-truncation Euler: the raw state may dip below
zero, coefficients see the floored value, and reciprocals are evaluated at
``max(F, f_min)`` with a clamp counter reported in the results.

Sampling under the zeroth-order measure reuses the same physical-measure
dynamics with drift-adjusted Brownian increments supplied by
:func:`valexp.models.girsanov_drifts`, so one kernel serves both measures.

Determinism
-----------
Paths are generated in fixed blocks of ``BLOCK_PATHS`` rows using a
counter-based generator keyed by (seed, block index).  A block always draws
full rows and full ``CHUNK_STEPS`` column chunks, partial blocks slice the
result, and worker threads only ever compute whole blocks that are
concatenated in block order.  Estimates are therefore bit-identical across
worker counts, and a path's draws do not change when ``n_paths`` grows.
The worker count comes from the ``VALEXP_WORKERS`` environment variable
(default: up to four threads).
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from valexp import models as _models
from valexp.models import BsModel, EaModel, KoModel, ModelSpec
from valexp.riccati import DEFAULT_N_STEPS
from valexp.utility import certainty_equivalent, power_utility

__all__ = [
    "Z95",
    "BLOCK_PATHS",
    "CHUNK_STEPS",
    "WORKERS_ENV",
    "IntegrabilityError",
    "SimConfig",
    "PathStats",
    "McEstimate",
    "PtildeFunctionals",
    "BoundsTriple",
    "simulate",
    "ce_from_stats",
    "estimate_ce",
    "lower_bound",
    "upper_bound",
    "estimate_bounds",
    "weak_error_ce",
    "estimate_ptilde_functionals",
]

Z95 = 1.959964
BLOCK_PATHS = 25_000
CHUNK_STEPS = 128
WORKERS_ENV = "VALEXP_WORKERS"

_MEASURES = ("P", "P-tilde-0")
_U64 = (1 << 64) - 1


class IntegrabilityError(RuntimeError):
    """A Monte Carlo functional produced non-finite or out-of-domain statistics.

    Typical causes: the perturbation is too large for the dual moments to
    exist at the requested sample size, or a confidence interval crosses the
    domain boundary of a nonlinear transform.  More paths sometimes help;
    a genuinely diverging moment does not.
    """


@dataclass(frozen=True)
class SimConfig:
    """Simulation request: path count, step, seed, and sampling measure.

    ``measure`` is ``"P"`` for the physical measure or ``"P-tilde-0"`` for
    the zeroth-order changed measure used by expansion functionals.
    ``f_min`` floors reciprocal evaluations of the square-root factor.
    """

    n_paths: int = 100_000
    dt: float = 0.005
    seed: int = 1729
    measure: str = "P"
    f_min: float = 1e-8

    def __post_init__(self) -> None:
        if int(self.n_paths) != self.n_paths or self.n_paths < 2:
            raise ValueError("n_paths must be an integer of at least 2")
        if not (math.isfinite(self.dt) and self.dt > 0.0):
            raise ValueError("dt must be positive and finite")
        if int(self.seed) != self.seed:
            raise ValueError("seed must be an integer")
        if self.measure not in _MEASURES:
            raise ValueError(f"measure must be one of {_MEASURES}, got {self.measure!r}")
        if not (math.isfinite(self.f_min) and self.f_min > 0.0):
            raise ValueError("f_min must be positive")
        object.__setattr__(self, "n_paths", int(self.n_paths))
        object.__setattr__(self, "seed", int(self.seed))


@dataclass(frozen=True)
class PathStats:
    """Terminal path functionals from one simulation sweep.

    ``wealth_T`` and ``dual_T`` are the terminal wealth and the dual-density
    power used by the upper bound; ``eta``, ``Lambda``, ``Phi`` are the
    perturbation integrals (perturbed return integral, its quadratic
    variation weight, and the optimizer-weighted integral).  ``rep_B`` and
    ``rep_W`` optionally carry the martingale-representation integrals of
    the mean-reverting model.  Accumulators that the caller asked
    :func:`simulate` to skip come back as empty arrays, so accidental use
    fails loudly.  All arrays are finite and wealth is strictly positive;
    construction fails otherwise.
    """

    wealth_T: np.ndarray
    dual_T: np.ndarray
    eta: np.ndarray
    Lambda: np.ndarray
    Phi: np.ndarray
    clamp_count: int
    seed: int
    measure: str
    rep_B: np.ndarray | None = None
    rep_W: np.ndarray | None = None

    def __post_init__(self) -> None:
        named = {
            "wealth_T": self.wealth_T,
            "dual_T": self.dual_T,
            "eta": self.eta,
            "Lambda": self.Lambda,
            "Phi": self.Phi,
        }
        for name, arr in named.items():
            if arr.size and not np.all(np.isfinite(arr)):
                raise IntegrabilityError(f"non-finite values in {name}; reduce dt or the perturbation")
        if self.wealth_T.size and np.any(self.wealth_T <= 0.0):
            raise IntegrabilityError("terminal wealth must stay positive")


@dataclass(frozen=True)
class McEstimate:
    """Point estimate with a 95 percent normal-approximation interval.

    The interval always satisfies ci95 = mean -/+ 1.959964 * stderr.  For
    estimates reported on a transformed scale (certainty equivalents,
    dual-power bounds) ``mean`` is the midpoint of the transformed interval
    and ``stderr`` its implied half-width over 1.959964.
    """

    mean: float
    stderr: float
    ci95_lo: float
    ci95_hi: float
    n: int
    seed: int

    def __post_init__(self) -> None:
        tol = 1e-9 * max(1.0, abs(self.mean)) + 1e-12
        if abs(self.ci95_lo - (self.mean - Z95 * self.stderr)) > tol:
            raise ValueError("ci95_lo inconsistent with mean and stderr")
        if abs(self.ci95_hi - (self.mean + Z95 * self.stderr)) > tol:
            raise ValueError("ci95_hi inconsistent with mean and stderr")

    @classmethod
    def from_samples(cls, samples: np.ndarray, seed: int) -> "McEstimate":
        arr = np.asarray(samples, dtype=float)
        n = arr.size
        mean = float(np.mean(arr))
        stderr = float(np.std(arr, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        return cls(mean, stderr, mean - Z95 * stderr, mean + Z95 * stderr, n, seed)

    @classmethod
    def from_interval(cls, lo: float, hi: float, n: int, seed: int) -> "McEstimate":
        mean = 0.5 * (lo + hi)
        stderr = (hi - lo) / (2.0 * Z95)
        return cls(mean, stderr, mean - Z95 * stderr, mean + Z95 * stderr, n, seed)


@dataclass(frozen=True)
class PtildeFunctionals:
    """Monte Carlo estimates of the expansion functionals.

    ``delta0`` and ``delta0_via_phi`` estimate the first-order coefficient
    through the two integral representations that must agree; ``lambda_mean``
    is the changed-measure mean of the quadratic weight.  ``phi_moment`` is
    the exponential-tilted second moment entering the primal error constant
    at the model's own epsilon.  ``eta_norm`` and ``lambda_norm`` are the
    physical-measure Lebesgue norms entering the dual error constant.
    """

    delta0: McEstimate
    delta0_via_phi: McEstimate
    lambda_mean: McEstimate
    phi_moment: McEstimate
    eta_norm: McEstimate
    lambda_norm: McEstimate


def _worker_count() -> int:
    env = os.environ.get(WORKERS_ENV)
    if env is not None:
        count = int(env)
        if count < 1:
            raise ValueError(f"{WORKERS_ENV} must be at least 1")
        return count
    return max(1, min(4, os.cpu_count() or 1))


def _resolve_steps(horizon: float, dt: float) -> int:
    m = round(horizon / dt)
    if m < 1 or abs(m * dt - horizon) > 1e-9 * max(1.0, horizon):
        raise ValueError(f"dt={dt!r} does not divide the horizon {horizon!r}")
    return int(m)


class _Dynamics:
    """Per-variant state handling behind a common accumulator loop.

    ``fields`` returns (lam, lam_prime, sigma2) evaluated at the current
    state; ``advance`` applies one Euler step, mutating the state arrays in
    place (control callables are evaluated before the step, so they always
    see the pre-update state).
    """

    def __init__(self, variant, f_min: float, k: int) -> None:
        self.variant = variant
        self.f_min = f_min
        self.clamps = 0
        self._buf = np.empty(k)
        if isinstance(variant, KoModel):
            self.state = (np.full(k, float(variant.lam0)), np.zeros(k))
        elif isinstance(variant, EaModel):
            self._raw = np.full(k, float(variant.F0))
            self._lamp = np.empty(k)
            self._sig2h = np.empty(k)
            self.state = (np.maximum(self._raw, 0.0),)
        else:
            self.state = ()

    def fields(self, h: float):
        v = self.variant
        if isinstance(v, BsModel):
            return (v.lam, v.lam_prime, h)
        if isinstance(v, KoModel):
            return (self.state[0], self.state[1], h)
        f = self.state[0]
        self.clamps += int(np.count_nonzero(f < self.f_min))
        np.maximum(f, self.f_min, out=self._lamp)
        np.reciprocal(self._lamp, out=self._lamp)
        np.multiply(f, h, out=self._sig2h)
        return (1.0, self._lamp, self._sig2h)

    def advance(self, dB, dW, h: float) -> None:
        v = self.variant
        if isinstance(v, BsModel):
            return
        buf = self._buf
        if isinstance(v, KoModel):
            lam, lamp = self.state
            decay = 1.0 - v.kappa * h
            lam *= decay
            lam += v.kappa * v.theta * h
            np.multiply(dW, v.gamma, out=buf)
            lam += buf
            lamp *= decay
            lamp += dB
            return
        f_pos = self.state[0]
        raw = self._raw
        raw += v.kappa * v.theta * h
        np.multiply(f_pos, v.kappa * h, out=buf)
        raw -= buf
        np.multiply(dB, v.beta, out=buf)
        if v.gamma != 0.0:
            buf += v.gamma * dW
        np.sqrt(f_pos, out=f_pos)
        buf *= f_pos
        raw += buf
        np.maximum(raw, 0.0, out=f_pos)


def _run_block(
    model: ModelSpec,
    strategy,
    dual_control,
    pi0_fn,
    drifts,
    gamma_fn,
    config: SimConfig,
    m_steps: int,
    block_index: int,
    k_paths: int,
    want_dual: bool,
    want_functionals: bool,
):
    rng = np.random.Generator(
        np.random.Philox(key=np.array([config.seed & _U64, block_index], dtype=np.uint64))
    )
    h = config.dt
    sqrt_h = math.sqrt(h)
    adjust = config.measure == "P-tilde-0"
    eps = model.epsilon
    is_sqrt_factor = isinstance(model.variant, EaModel)
    dyn = _Dynamics(model.variant, config.f_min, k_paths)

    log_x = np.zeros(k_paths)
    log_z = np.zeros(k_paths) if want_dual else None
    log_h = np.zeros(k_paths) if want_dual else None
    eta = np.zeros(k_paths) if want_functionals else None
    lam_qv = np.zeros(k_paths) if want_functionals else None
    phi = np.zeros(k_paths) if want_functionals else None
    rep_b = np.zeros(k_paths) if gamma_fn is not None else None
    rep_w = np.zeros(k_paths) if gamma_fn is not None else None
    mu_b, mu_w = drifts
    t1 = np.empty(k_paths)
    t2 = np.empty(k_paths)
    eps_buf = np.empty(k_paths)
    sig_buf = np.empty(k_paths) if is_sqrt_factor else None
    chunk = np.empty((BLOCK_PATHS, CHUNK_STEPS, 2))

    for chunk_start in range(0, m_steps, CHUNK_STEPS):
        width = min(CHUNK_STEPS, m_steps - chunk_start)
        # A block always draws full rows and full chunks so per-path streams
        # do not depend on n_paths or on where the horizon ends mid-chunk.
        rng.standard_normal(out=chunk)
        draws = chunk[:k_paths]
        draws *= sqrt_h
        for j in range(width):
            t = (chunk_start + j) * h
            z_b = draws[:, j, 0]
            z_w = draws[:, j, 1]
            if adjust:
                d_b = z_b + mu_b(t, dyn.state) * h
                d_w = z_w + mu_w(t, dyn.state) * h
            else:
                d_b, d_w = z_b, z_w

            # sig2h = sigma**2 * h; sig_db = sigma * dB.
            lam, lamp, sig2h = dyn.fields(h)
            if is_sqrt_factor:
                np.sqrt(dyn.state[0], out=sig_buf)
                sig_buf *= d_b
                sig_db = sig_buf
            else:
                sig_db = d_b
            if eps == 0.0:
                lam_eps = lam
            else:
                np.multiply(lamp, eps, out=eps_buf)
                eps_buf += lam
                lam_eps = eps_buf
            pi = strategy(t, dyn.state)

            np.multiply(pi, lam_eps, out=t1)
            np.multiply(pi, pi, out=t2)
            t2 *= 0.5
            t1 -= t2
            t1 *= sig2h
            log_x += t1
            np.multiply(pi, sig_db, out=t1)
            log_x += t1
            if want_dual:
                nu = dual_control(t, dyn.state)
                np.multiply(lam_eps, lam_eps, out=t1)
                t1 *= 0.5
                t1 *= sig2h
                log_z += t1
                np.multiply(lam_eps, sig_db, out=t1)
                log_z += t1
                np.multiply(nu, nu, out=t1)
                t1 *= 0.5 * h
                log_h += t1
                np.multiply(nu, d_w, out=t1)
                log_h += t1
            if want_functionals:
                np.multiply(lam, sig2h, out=t1)
                t1 += sig_db
                t1 *= lamp
                eta += t1
                np.multiply(lamp, lamp, out=t1)
                t1 *= sig2h
                lam_qv += t1
                np.multiply(pi0_fn(t, dyn.state), lamp, out=t1)
                t1 *= sig2h
                phi += t1
            if gamma_fn is not None:
                g_b, g_w = gamma_fn(t, dyn.state[0], dyn.state[1])
                rep_b += g_b * z_b
                rep_w += g_w * z_w

            dyn.advance(d_b, d_w, h)

    if want_dual:
        np.negative(log_z, out=log_z)
        np.negative(log_h, out=log_h)
    return (log_x, log_z, log_h, eta, lam_qv, phi, rep_b, rep_w, dyn.clamps)


def simulate(
    model: ModelSpec,
    strategy=None,
    dual_control=None,
    config: SimConfig = SimConfig(),
    x0: float = 1.0,
    n_steps: int = DEFAULT_N_STEPS,
    collect_representation: bool = False,
    collect_dual: bool = True,
    collect_functionals: bool = True,
) -> PathStats:
    """Simulate terminal wealth and the expansion functionals.

    Args:
        model: model variant, utility, and perturbation size (the asset
            earns lam + epsilon*lam_prime times its volatility squared).
        strategy: investment-fraction callable following the state
            convention of :mod:`valexp.models`; ``None`` uses the base-model
            optimizer.
        dual_control: orthogonal-noise dual control; ``None`` uses the
            base-model dual optimizer.
        config: path count, step, seed, and sampling measure.
        x0: initial wealth; enters terminal wealth as an exact factor.
        n_steps: resolution of the coefficient grids behind default controls.
        collect_representation: also accumulate the representation integrals
            (mean-reverting model under the changed measure only).
        collect_dual: accumulate the dual density; switch off to save time
            when only wealth matters (``dual_T`` comes back empty).
        collect_functionals: accumulate eta, Lambda, Phi; switch off to save
            time (the fields come back empty).

    Skipped accumulators do not change the random number consumption, so
    wealth paths are bit-identical whichever combination is collected.

    Raises:
        IntegrabilityError: a path functional became non-finite.
        ValueError: the step does not divide the horizon, or x0 <= 0.
    """
    if not (x0 > 0.0 and math.isfinite(x0)):
        raise ValueError("initial wealth x0 must be positive")
    variant = model.variant
    m_steps = _resolve_steps(variant.T, config.dt)

    base_pi, base_nu = _models._strategy_functions(model, 0.0, n_steps, config.f_min)
    if strategy is None:
        strategy = base_pi
    if dual_control is None:
        dual_control = base_nu
    drifts = (
        _models.girsanov_drifts(model, n_steps)
        if config.measure == "P-tilde-0"
        else (None, None)
    )

    gamma_fn = None
    if collect_representation:
        if not (isinstance(variant, KoModel) and config.measure == "P-tilde-0"):
            raise ValueError(
                "representation integrals are defined for the mean-reverting model "
                "under the changed measure"
            )
        corr = _models.ko_grid_bundle(variant, model.utility, n_steps).corrections
        spec = model.utility

        def gamma_fn(t, lam, lamp):
            return _models.ko_gamma(variant, t, lam, lamp, corr, spec)

    n = config.n_paths
    n_blocks = (n + BLOCK_PATHS - 1) // BLOCK_PATHS
    sizes = [min(BLOCK_PATHS, n - b * BLOCK_PATHS) for b in range(n_blocks)]

    def job(b: int):
        return _run_block(
            model, strategy, dual_control, base_pi, drifts, gamma_fn,
            config, m_steps, b, sizes[b], collect_dual, collect_functionals,
        )

    workers = _worker_count()
    if workers == 1 or n_blocks == 1:
        results = [job(b) for b in range(n_blocks)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, range(n_blocks)))

    def gather(i: int, wanted: bool) -> np.ndarray:
        if not wanted:
            return np.zeros(0)
        return np.concatenate([r[i] for r in results])

    log_x = gather(0, True)
    clamps = sum(r[8] for r in results)
    q = model.utility.q
    if collect_dual:
        dual_t = np.exp(-q * (gather(1, True) + gather(2, True)))
    else:
        dual_t = np.zeros(0)

    stats = PathStats(
        wealth_T=x0 * np.exp(log_x),
        dual_T=dual_t,
        eta=gather(3, collect_functionals),
        Lambda=gather(4, collect_functionals),
        Phi=gather(5, collect_functionals),
        clamp_count=clamps,
        seed=config.seed,
        measure=config.measure,
        rep_B=gather(6, True) if collect_representation else None,
        rep_W=gather(7, True) if collect_representation else None,
    )
    return stats


def ce_from_stats(stats: PathStats, spec) -> McEstimate:
    """Certainty-equivalent estimate from simulated terminal wealth.

    Averages realized utility and maps the normal-approximation interval
    through the inverse utility, which is increasing, so the endpoints keep
    their order.  The reported mean is the transformed interval's midpoint.
    """
    est_u = McEstimate.from_samples(power_utility(stats.wealth_T, spec), stats.seed)
    if est_u.ci95_hi >= 0.0:
        raise IntegrabilityError("utility confidence interval leaves the negative domain")
    ce_lo = float(certainty_equivalent(est_u.ci95_lo, spec))
    ce_hi = float(certainty_equivalent(est_u.ci95_hi, spec))
    return McEstimate.from_interval(ce_lo, ce_hi, est_u.n, stats.seed)


def estimate_ce(
    model: ModelSpec,
    strategy,
    eps: float,
    config: SimConfig,
    x0: float = 1.0,
    n_steps: int = DEFAULT_N_STEPS,
) -> McEstimate:
    """Certainty equivalent of a strategy in the eps-perturbed market."""
    model_eps = replace(model, epsilon=float(eps))
    cfg = replace(config, measure="P")
    stats = simulate(
        model_eps, strategy=strategy, config=cfg, x0=x0, n_steps=n_steps,
        collect_dual=False, collect_functionals=False,
    )
    return ce_from_stats(stats, model.utility)


def lower_bound(
    model: ModelSpec,
    eps: float,
    config: SimConfig,
    n_steps: int = DEFAULT_N_STEPS,
) -> McEstimate:
    """Primal certainty-equivalent bound: the corrected strategy's own CE."""
    model_eps = replace(model, epsilon=float(eps))
    pi_corr, _ = _models._strategy_functions(model_eps, float(eps), n_steps, config.f_min)
    return estimate_ce(model, pi_corr, eps, config, n_steps=n_steps)


def weak_error_ce(
    model: ModelSpec,
    eps: float,
    dts,
    config: SimConfig,
    n_steps: int = DEFAULT_N_STEPS,
) -> list[McEstimate]:
    """Base-strategy CE estimates across a ladder of step sizes (same seed)."""
    return [
        estimate_ce(model, None, eps, replace(config, dt=float(dt)), n_steps=n_steps)
        for dt in dts
    ]


def _dual_to_ce(dual_t: np.ndarray, q: float, seed: int) -> McEstimate:
    est = McEstimate.from_samples(dual_t, seed)
    if est.ci95_lo <= 0.0 or not math.isfinite(est.mean):
        raise IntegrabilityError(
            "dual moment confidence interval is not positive; the perturbation may be "
            "too large for this sample size"
        )
    # 1/q is negative, so the endpoints swap under the power map.
    inv_q = 1.0 / q
    return McEstimate.from_interval(est.ci95_hi**inv_q, est.ci95_lo**inv_q, est.n, seed)


def upper_bound(
    model: ModelSpec,
    eps: float,
    config: SimConfig,
    n_steps: int = DEFAULT_N_STEPS,
) -> McEstimate:
    """Dual certainty-equivalent bound from the corrected dual control.

    Averages (Z*H)**(-q) for the minimal perturbed return density Z and the
    corrected orthogonal control's exponential H, then maps the interval
    through the decreasing function m -> m**(1/q).
    """
    model_eps = replace(model, epsilon=float(eps))
    _, nu_corr = _models._strategy_functions(model_eps, float(eps), n_steps, config.f_min)
    cfg = replace(config, measure="P")
    stats = simulate(
        model_eps, dual_control=nu_corr, config=cfg, n_steps=n_steps,
        collect_functionals=False,
    )
    return _dual_to_ce(stats.dual_T, model.utility.q, config.seed)


@dataclass(frozen=True)
class BoundsTriple:
    """Base-strategy estimate with primal and dual bounds at one epsilon."""

    base_ce: McEstimate
    lower: McEstimate
    upper: McEstimate


def estimate_bounds(
    model: ModelSpec,
    eps: float,
    config: SimConfig,
    n_steps: int = DEFAULT_N_STEPS,
) -> BoundsTriple:
    """Base certainty equivalent plus both bounds in two sweeps.

    The base-strategy wealth and the corrected dual density share one
    simulation; the corrected-strategy wealth takes the second.  Identical
    seeds make the results bit-equal to the three standalone estimators.
    """
    model_eps = replace(model, epsilon=float(eps))
    pi_corr, nu_corr = _models._strategy_functions(model_eps, float(eps), n_steps, config.f_min)
    cfg = replace(config, measure="P")

    joint = simulate(
        model_eps, dual_control=nu_corr, config=cfg, n_steps=n_steps,
        collect_functionals=False,
    )
    base_ce = ce_from_stats(joint, model.utility)
    upper = _dual_to_ce(joint.dual_T, model.utility.q, config.seed)

    corr = simulate(
        model_eps, strategy=pi_corr, config=cfg, n_steps=n_steps,
        collect_dual=False, collect_functionals=False,
    )
    lower = ce_from_stats(corr, model.utility)
    return BoundsTriple(base_ce=base_ce, lower=lower, upper=upper)


def _norm_estimate(samples: np.ndarray, exponent: float, seed: int) -> McEstimate:
    """L^s norm of samples with a delta-method standard error, s = exponent."""
    powered = np.abs(samples) ** exponent
    m = float(np.mean(powered))
    if not math.isfinite(m) or m <= 0.0:
        raise IntegrabilityError("norm moment is degenerate or diverged")
    se_m = float(np.std(powered, ddof=1) / math.sqrt(powered.size))
    norm = m ** (1.0 / exponent)
    se = norm / (exponent * m) * se_m
    return McEstimate.from_interval(norm - Z95 * se, norm + Z95 * se, powered.size, seed)


def estimate_ptilde_functionals(
    model: ModelSpec,
    config: SimConfig,
    n_steps: int = DEFAULT_N_STEPS,
) -> PtildeFunctionals:
    """Estimate the expansion functionals on two sweeps sharing one seed.

    The changed-measure sweep provides the first-order coefficient through
    both of its representations, the quadratic-weight mean, and the tilted
    second moment behind the primal error constant.  The physical-measure
    sweep provides the Lebesgue norms behind the dual error constant.
    """
    spec = model.utility
    p = spec.p
    eps = model.epsilon

    tilde_cfg = replace(config, measure="P-tilde-0")
    tilde = simulate(model, config=tilde_cfg, n_steps=n_steps, collect_dual=False)
    delta0 = McEstimate.from_samples(tilde.eta, config.seed)
    delta0_phi = McEstimate.from_samples(tilde.Phi, config.seed)
    lambda_mean = McEstimate.from_samples(tilde.Lambda, config.seed)
    neg_part = np.maximum(-np.sign(eps) * tilde.Phi, 0.0) if eps != 0.0 else 0.0
    tilted = tilde.Phi**2 * np.exp(abs(eps) * abs(p) * neg_part)
    if not np.all(np.isfinite(tilted)):
        raise IntegrabilityError("tilted second moment diverged at this epsilon")
    phi_moment = McEstimate.from_samples(tilted, config.seed)

    phys_cfg = replace(config, measure="P")
    phys = simulate(model, config=phys_cfg, n_steps=n_steps, collect_dual=False)
    eta_norm = _norm_estimate(phys.eta, 2.0 * (1.0 - p), config.seed)
    lambda_norm = _norm_estimate(phys.Lambda, 1.0 - p, config.seed)

    return PtildeFunctionals(
        delta0=delta0,
        delta0_via_phi=delta0_phi,
        lambda_mean=lambda_mean,
        phi_moment=phi_moment,
        eta_norm=eta_norm,
        lambda_norm=lambda_norm,
    )
