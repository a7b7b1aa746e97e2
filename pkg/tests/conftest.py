"""Shared fixtures: canonical model instances and small simulation configs.

Monte Carlo tests default to a single worker so results do not depend on
the machine; the dedicated determinism tests override the worker count
explicitly.
"""

import pytest

from valexp.models import BsModel, EaModel, KoModel, ModelSpec
from valexp.montecarlo import WORKERS_ENV, SimConfig
from valexp.utility import UtilitySpec


@pytest.fixture(autouse=True)
def _single_worker(monkeypatch):
    monkeypatch.setenv(WORKERS_ENV, "1")


@pytest.fixture
def spec():
    return UtilitySpec(p=-1.0)


@pytest.fixture
def bs_model():
    return BsModel(lam=0.3, lam_prime=0.1, T=2.0)


@pytest.fixture
def ko_model():
    """Mean-reverting market at the reference calibration, low start."""
    return KoModel(kappa=0.0404, theta=0.117, gamma=0.04395, lam0=0.1, T=10.0)


@pytest.fixture
def ea_model():
    """Square-root factor market at the reference calibration."""
    return EaModel(kappa=5.0, theta=0.0169, beta=-0.1, gamma=0.1744, F0=0.01, T=10.0)


@pytest.fixture
def bs_spec(bs_model, spec):
    return ModelSpec(variant=bs_model, utility=spec, epsilon=0.05)


@pytest.fixture
def ko_spec(ko_model, spec):
    return ModelSpec(variant=ko_model, utility=spec, epsilon=-0.05)


@pytest.fixture
def ea_spec(ea_model, spec):
    return ModelSpec(variant=ea_model, utility=spec, epsilon=0.01)


@pytest.fixture
def fast_sim():
    """Small path count and coarse step for cheap smoke-level sweeps."""
    return SimConfig(n_paths=4_000, dt=0.05, seed=99)
