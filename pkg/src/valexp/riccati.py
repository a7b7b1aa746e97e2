"""Fixed-step Runge-Kutta integration of the model coefficient systems.

Every system here is small (two to five scalar components) and smooth, so the
classical fourth-order scheme on a uniform grid is used throughout.  Backward
systems carry terminal data, which is written into the grid exactly rather
than integrated; the moment system is integrated forward from time zero.

Coefficient functions enter the correction and moment systems as sampled
grids.  The Runge-Kutta stages evaluate them at step midpoints, so callers
should supply samples at twice the target resolution: every stage point then
lands on an exact sample node and the scheme keeps its full order.  Off-node
times fall back to linear interpolation, which is still consistent but only
second-order accurate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

__all__ = [
    "DEFAULT_N_STEPS",
    "OdeBlowUpError",
    "OdeGrid",
    "OdeSystem",
    "KoCoefficients",
    "integrate_backward",
    "integrate_forward",
    "ko_value_odes",
    "ko_correction_odes",
    "ko_moment_odes",
    "ea_value_odes",
    "simpson_integral",
]

DEFAULT_N_STEPS = 10_000


class OdeBlowUpError(RuntimeError):
    """Raised when integration produces a non-finite or inadmissible state.

    For the negative-exponent utilities supported here all systems stay
    bounded, so this error signals bad parameters or a bug, not a numerical
    edge case to be retried.  ``t_failure`` records the grid time at which
    the state first became invalid.
    """

    def __init__(self, t_failure: float, message: str | None = None) -> None:
        self.t_failure = float(t_failure)
        super().__init__(message or f"ODE state became non-finite at t={t_failure:.6g}")


@dataclass(frozen=True)
class OdeSystem:
    """Autonomous-in-form ODE system ``dy/dt = rhs(t, y)`` with boundary data.

    Args:
        names: component names, in the order produced by ``rhs``.
        rhs: callback mapping (t, state tuple) to the derivative tuple.
        boundary: terminal values for backward integration, initial values
            for forward integration.
    """

    names: tuple[str, ...]
    rhs: Callable[[float, tuple[float, ...]], tuple[float, ...]]
    boundary: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.names) != len(self.boundary):
            raise ValueError("names and boundary must have equal length")


@dataclass(frozen=True)
class OdeGrid:
    """Solution values on a uniform time grid over [0, T].

    Immutable after construction; the arrays are copied and marked read-only.

    Args:
        t_grid: strictly increasing uniform grid from 0 to the horizon.
        values: component name -> array of samples, aligned with ``t_grid``.
        step: grid spacing (redundant with ``t_grid`` but kept explicit).
    """

    t_grid: np.ndarray
    values: Mapping[str, np.ndarray]
    step: float

    def __post_init__(self) -> None:
        t = np.array(self.t_grid, dtype=float)
        if t.ndim != 1 or t.size < 2:
            raise ValueError("t_grid must be a 1-d array with at least two nodes")
        tol = 1e-12 * max(1.0, abs(float(t[-1])))
        if abs(float(t[0])) > tol:
            raise ValueError("t_grid must start at 0")
        if np.max(np.abs(np.diff(t) - self.step)) > tol:
            raise ValueError("t_grid must be uniform with the stated step")
        vals = {}
        for name, arr in self.values.items():
            a = np.array(arr, dtype=float)
            if a.shape != t.shape:
                raise ValueError(f"component {name!r} has shape {a.shape}, expected {t.shape}")
            a.flags.writeable = False
            vals[name] = a
        t.flags.writeable = False
        object.__setattr__(self, "t_grid", t)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "step", float(self.step))

    @property
    def n_steps(self) -> int:
        return self.t_grid.size - 1

    @property
    def horizon(self) -> float:
        return float(self.t_grid[-1])

    def initial(self, name: str) -> float:
        """Value of a component at t = 0."""
        return float(self.values[name][0])

    def terminal(self, name: str) -> float:
        """Value of a component at the horizon."""
        return float(self.values[name][-1])

    def interp(self, name: str, t):
        """Linear interpolation of a component at times ``t`` (scalar or array)."""
        return np.interp(t, self.t_grid, self.values[name])

    def to_csv(self, path) -> None:
        """Dump the grid as CSV with a ``t`` column followed by each component."""
        names = list(self.values)
        data = np.column_stack([self.t_grid] + [self.values[n] for n in names])
        header = ",".join(["t"] + names)
        np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.17g")


@dataclass(frozen=True)
class KoCoefficients:
    """Quadratic-system coefficients shared by the value and dual equations.

    With conjugate exponent q and factor loadings (beta, gamma):
    alpha1 = theta * kappa, alpha2 = (1 + q) * beta**2 + gamma**2,
    alpha3 = beta**2 + gamma**2, alpha4 = q * beta - kappa.
    """

    alpha1: float
    alpha2: float
    alpha3: float
    alpha4: float

    @classmethod
    def from_params(cls, kappa: float, theta: float, beta: float, gamma: float, q: float) -> "KoCoefficients":
        return cls(
            alpha1=theta * kappa,
            alpha2=(1.0 + q) * beta**2 + gamma**2,
            alpha3=beta**2 + gamma**2,
            alpha4=q * beta - kappa,
        )


def _march(system: OdeSystem, horizon: float, n_steps: int, backward: bool) -> OdeGrid:
    if n_steps < 2:
        raise ValueError("n_steps must be at least 2")
    if not (horizon > 0.0) or not math.isfinite(horizon):
        raise ValueError("horizon must be positive and finite")
    h = horizon / n_steps
    dim = len(system.names)
    out = np.empty((n_steps + 1, dim))
    y = tuple(float(v) for v in system.boundary)
    rhs = system.rhs

    sign = -1.0 if backward else 1.0
    hh = sign * h
    start = n_steps if backward else 0
    out[start] = y
    indices = range(n_steps, 0, -1) if backward else range(n_steps)
    for k in indices:
        t = k * h
        k1 = rhs(t, y)
        y2 = tuple(yi + 0.5 * hh * ki for yi, ki in zip(y, k1))
        k2 = rhs(t + 0.5 * hh, y2)
        y3 = tuple(yi + 0.5 * hh * ki for yi, ki in zip(y, k2))
        k3 = rhs(t + 0.5 * hh, y3)
        y4 = tuple(yi + hh * ki for yi, ki in zip(y, k3))
        k4 = rhs(t + hh, y4)
        y = tuple(
            yi + (hh / 6.0) * (a + 2.0 * b + 2.0 * c + d)
            for yi, a, b, c, d in zip(y, k1, k2, k3, k4)
        )
        if not all(math.isfinite(v) for v in y):
            raise OdeBlowUpError(t + hh)
        out[k - 1 if backward else k + 1] = y

    t_grid = np.linspace(0.0, horizon, n_steps + 1)
    values = {name: out[:, j].copy() for j, name in enumerate(system.names)}
    return OdeGrid(t_grid=t_grid, values=values, step=h)


def integrate_backward(system: OdeSystem, horizon: float, n_steps: int) -> OdeGrid:
    """Integrate from terminal data at the horizon down to t = 0.

    Classical fourth-order Runge-Kutta with fixed step ``horizon / n_steps``.
    The terminal boundary is written into the grid exactly.  Raises
    :class:`OdeBlowUpError` if the state becomes non-finite.
    """
    return _march(system, horizon, n_steps, backward=True)


def integrate_forward(system: OdeSystem, horizon: float, n_steps: int) -> OdeGrid:
    """Integrate from initial data at t = 0 up to the horizon (same scheme)."""
    return _march(system, horizon, n_steps, backward=False)


class _SampledCoefficient:
    """Time-dependent coefficient backed by uniform samples on [0, T].

    Lookup snaps to the nearest node when the query sits on one (the intended
    use: stage points of a solver running at half the sample resolution) and
    falls back to clamped linear interpolation otherwise.
    """

    __slots__ = ("_samples", "_inv_h", "_n")

    def __init__(self, samples: np.ndarray, horizon: float) -> None:
        arr = np.asarray(samples, dtype=float)
        if arr.ndim != 1 or arr.size < 3:
            raise ValueError("coefficient samples must be a 1-d array with at least 3 nodes")
        self._samples = arr.tolist()
        self._n = arr.size - 1
        self._inv_h = self._n / horizon

    def __call__(self, t: float) -> float:
        u = t * self._inv_h
        j = round(u)
        if abs(u - j) <= 1e-9 and 0 <= j <= self._n:
            return self._samples[j]
        i = int(math.floor(u))
        if i < 0:
            return self._samples[0]
        if i >= self._n:
            return self._samples[self._n]
        w = u - i
        return self._samples[i] * (1.0 - w) + self._samples[i + 1] * w


def ko_value_odes(
    kappa: float,
    theta: float,
    beta: float,
    gamma: float,
    horizon: float,
    spec,
    n_steps: int = DEFAULT_N_STEPS,
) -> OdeGrid:
    """Solve the value-function coefficient system for the mean-reverting model.

    The candidate value is exp(-a - b*x - c*x**2/2) on the factor x; (a, b, c)
    satisfy, with zero terminal data and coefficients from
    :class:`KoCoefficients`,

        -a' = alpha1*b + alpha3*c/2 - alpha2*b**2/2
        -b' = alpha4*b + alpha1*c - alpha2*b*c
        -c' = -q + 2*alpha4*c - alpha2*c**2

    Returns a grid with components ``a``, ``b``, ``c``.  The solution ``c``
    must stay nonnegative for p < 0; violation raises :class:`OdeBlowUpError`.
    """
    q = spec.q
    co = KoCoefficients.from_params(kappa, theta, beta, gamma, q)
    a1, a2, a3, a4 = co.alpha1, co.alpha2, co.alpha3, co.alpha4

    def rhs(t: float, y: tuple[float, ...]) -> tuple[float, ...]:
        _, b, c = y
        da = -(a1 * b + 0.5 * a3 * c - 0.5 * a2 * b * b)
        db = -(a4 * b + a1 * c - a2 * b * c)
        dc = -(-q + 2.0 * a4 * c - a2 * c * c)
        return (da, db, dc)

    grid = integrate_backward(OdeSystem(("a", "b", "c"), rhs, (0.0, 0.0, 0.0)), horizon, n_steps)
    c = grid.values["c"]
    if float(np.min(c)) < -1e-12:
        k = int(np.argmin(c))
        raise OdeBlowUpError(float(grid.t_grid[k]), "quadratic value coefficient went negative")
    return grid


def ko_correction_odes(
    kappa: float,
    theta: float,
    gamma: float,
    horizon: float,
    spec,
    b_grid: np.ndarray,
    c_grid: np.ndarray,
    n_steps: int = DEFAULT_N_STEPS,
) -> OdeGrid:
    """Solve the first-order correction system for the mean-reverting model.

    The gradient coefficients (C1, C2, C4, C5, C6) of the conditional
    expectation of the perturbation integral satisfy, with b~ = kappa*theta
    - gamma**2 * b and c~ = kappa + gamma**2 * c evaluated on the base-model
    grids, zero terminal data and

        -C1' = b~*C4 + gamma**2*C5
        -C2' = b~*C6 - kappa*C2
        -C4' = q*C2 - c~*C4 + 2*b~*C5
        -C5' = q*C6 - 2*c~*C5
        -C6' = -(kappa + c~)*C6 - 1

    The C3 slot of the reference indexing is identically zero and omitted.
    ``b_grid``/``c_grid`` are uniform samples of the base-model value
    coefficients on [0, horizon]; supply them at twice ``n_steps`` resolution
    for full fourth-order accuracy (see module docstring).
    """
    b_arr = np.asarray(b_grid, dtype=float)
    c_arr = np.asarray(c_grid, dtype=float)
    if b_arr.shape != c_arr.shape:
        raise ValueError("b_grid and c_grid must have equal shapes")
    q = spec.q
    g2 = gamma**2
    kt = kappa * theta
    b_of = _SampledCoefficient(b_arr, horizon)
    c_of = _SampledCoefficient(c_arr, horizon)

    def rhs(t: float, y: tuple[float, ...]) -> tuple[float, ...]:
        c1, c2, c4, c5, c6 = y
        btil = kt - g2 * b_of(t)
        ctil = kappa + g2 * c_of(t)
        return (
            -(btil * c4 + g2 * c5),
            -(btil * c6 - kappa * c2),
            -(q * c2 - ctil * c4 + 2.0 * btil * c5),
            -(q * c6 - 2.0 * ctil * c5),
            -(-(kappa + ctil) * c6 - 1.0),
        )

    system = OdeSystem(("C1", "C2", "C4", "C5", "C6"), rhs, (0.0,) * 5)
    return integrate_backward(system, horizon, n_steps)


def ko_moment_odes(
    kappa: float,
    theta: float,
    gamma: float,
    horizon: float,
    spec,
    b_grid: np.ndarray,
    c_grid: np.ndarray,
    lam0: float,
    n_steps: int = DEFAULT_N_STEPS,
) -> OdeGrid:
    """Solve the joint second-moment system under the zeroth-order measure.

    Under that measure the factor drifts at b~ - c~*lambda and the
    perturbation direction at q*lambda - kappa*lambda'.  Writing m1, m2 for
    the first two moments of lambda, m1p for the mean of lambda', m12 for
    the cross moment, and m2p for the second moment of lambda', the system
    is forward in time from (lam0, lam0**2, 0, 0, 0):

        m1'  = b~ - c~*m1
        m2'  = 2*(b~*m1 - c~*m2) + gamma**2
        m1p' = q*m1 - kappa*m1p
        m12' = b~*m1p + q*m2 - (c~ + kappa)*m12
        m2p' = 2*(q*m12 - kappa*m2p) + 1

    Grid components are ``m1``, ``m2``, ``m1p``, ``m12``, ``m2p``.
    """
    b_arr = np.asarray(b_grid, dtype=float)
    c_arr = np.asarray(c_grid, dtype=float)
    if b_arr.shape != c_arr.shape:
        raise ValueError("b_grid and c_grid must have equal shapes")
    q = spec.q
    g2 = gamma**2
    kt = kappa * theta
    b_of = _SampledCoefficient(b_arr, horizon)
    c_of = _SampledCoefficient(c_arr, horizon)

    def rhs(t: float, y: tuple[float, ...]) -> tuple[float, ...]:
        m1, m2, m1p, m12, m2p = y
        btil = kt - g2 * b_of(t)
        ctil = kappa + g2 * c_of(t)
        return (
            btil - ctil * m1,
            2.0 * (btil * m1 - ctil * m2) + g2,
            q * m1 - kappa * m1p,
            btil * m1p + q * m2 - (ctil + kappa) * m12,
            2.0 * (q * m12 - kappa * m2p) + 1.0,
        )

    names = ("m1", "m2", "m1p", "m12", "m2p")
    system = OdeSystem(names, rhs, (float(lam0), float(lam0) ** 2, 0.0, 0.0, 0.0))
    return integrate_forward(system, horizon, n_steps)


def ea_value_odes(
    kappa: float,
    theta: float,
    beta: float,
    gamma: float,
    horizon: float,
    spec,
    n_steps: int = DEFAULT_N_STEPS,
) -> OdeGrid:
    """Solve the value-function coefficient system for the square-root model.

    The candidate value is exp(-a - b*F) in the factor F; with zero terminal
    data and coefficients from :class:`KoCoefficients`,

        -a' = alpha1 * b
        -b' = alpha4*b - alpha2*b**2/2 - q/2

    Returns a grid with components ``a`` and ``b``.
    """
    q = spec.q
    co = KoCoefficients.from_params(kappa, theta, beta, gamma, q)
    a1, a2, a4 = co.alpha1, co.alpha2, co.alpha4

    def rhs(t: float, y: tuple[float, ...]) -> tuple[float, ...]:
        _, b = y
        return (-(a1 * b), -(a4 * b - 0.5 * a2 * b * b - 0.5 * q))

    return integrate_backward(OdeSystem(("a", "b"), rhs, (0.0, 0.0)), horizon, n_steps)


def simpson_integral(samples: np.ndarray, step: float) -> float:
    """Composite Simpson rule on uniform samples (even interval count required)."""
    arr = np.asarray(samples, dtype=float)
    n = arr.size - 1
    if n < 2 or n % 2 != 0:
        raise ValueError("Simpson rule needs an even, positive number of intervals")
    return float(step / 3.0 * (arr[0] + arr[-1] + 4.0 * arr[1:-1:2].sum() + 2.0 * arr[2:-1:2].sum()))
