"""Utility, conjugate, and certainty-equivalent identities.

The conjugate is checked against its own definition as a supremum rather
than against the closed form it implements.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from valexp.utility import (
    UtilitySpec,
    certainty_equivalent,
    conjugacy_map,
    conjugate_utility,
    power_utility,
)


def test_handpicked_values():
    spec = UtilitySpec(p=-1.0)
    assert power_utility(1.0, spec) == -1.0
    assert power_utility(2.0, spec) == -0.5
    # q = -1/2, so V(y) = y**(1/2) / (-1/2).
    assert conjugate_utility(1.0, spec) == -2.0
    assert conjugate_utility(4.0, spec) == -4.0
    assert power_utility(4.0, UtilitySpec(p=-0.5)) == -1.0


def test_conjugate_exponent_range():
    for p in (-1e-6, -0.5, -1.0, -7.0, -1e6):
        q = UtilitySpec(p=p).q
        assert -1.0 < q < 0.0
        # 1 + q cancels to 1/(1-p), so the product carries ~|p| ulps of error.
        assert (1.0 - p) * (1.0 + q) == pytest.approx(1.0, abs=1e-15 * max(1.0, abs(p)))


def test_spec_rejects_bad_exponent():
    for bad in (0.0, 1.0, float("nan"), float("inf")):
        with pytest.raises(ValueError):
            UtilitySpec(p=bad)


def test_certainty_equivalent_inverts_utility():
    spec = UtilitySpec(p=-2.5)
    x = np.array([0.25, 1.0, 3.0, 40.0])
    np.testing.assert_allclose(certainty_equivalent(power_utility(x, spec), spec), x, rtol=1e-12)


def test_certainty_equivalent_rejects_positive_values():
    spec = UtilitySpec(p=-1.0)
    with pytest.raises(ValueError):
        certainty_equivalent(0.5, spec)
    with pytest.raises(ValueError):
        certainty_equivalent(0.0, spec)


def test_domain_validation():
    spec = UtilitySpec(p=-1.0)
    for fn in (power_utility, conjugate_utility):
        with pytest.raises(ValueError):
            fn(0.0, spec)
        with pytest.raises(ValueError):
            fn(np.array([1.0, -2.0]), spec)
        with pytest.raises(ValueError):
            fn(float("inf"), spec)


def test_conjugate_matches_supremum_on_grid():
    """V(y) must equal sup_x U(x) - x*y, probed on a dense grid."""
    spec = UtilitySpec(p=-1.0)
    for y in (0.3, 1.3, 5.0):
        x_star = y ** (1.0 / (spec.p - 1.0))
        x = np.linspace(0.2 * x_star, 5.0 * x_star, 20_001)
        sampled = np.max(power_utility(x, spec) - x * y)
        v = conjugate_utility(y, spec)
        assert v >= sampled - 1e-12
        assert v == pytest.approx(sampled, rel=1e-6)


@settings(max_examples=500, deadline=None)
@given(
    p=st.floats(min_value=-10.0, max_value=-0.1),
    y=st.floats(min_value=1e-3, max_value=1e3),
    x=st.floats(min_value=1e-3, max_value=1e3),
)
def test_fenchel_inequality(p, y, x):
    """U(x) - x*y <= V(y), with equality at x = y**(1/(p-1))."""
    spec = UtilitySpec(p=p)
    v = conjugate_utility(y, spec)
    assert power_utility(x, spec) - x * y <= v + 1e-9 * max(1.0, abs(v))
    x_star = y ** (1.0 / (p - 1.0))
    touch = power_utility(x_star, spec) - x_star * y
    assert touch == pytest.approx(v, rel=1e-9)


def test_conjugacy_map_roundtrip_and_value():
    spec = UtilitySpec(p=-1.0)
    # p*u = (q*v)**(1-p): u = -1 pairs with v = -2 at p = -1.
    assert conjugacy_map(-1.0, spec, "primal-to-dual") == pytest.approx(-2.0, rel=1e-14)
    assert conjugacy_map(-2.0, spec, "dual-to-primal") == pytest.approx(-1.0, rel=1e-14)
    for p in (-0.5, -3.0):
        s = UtilitySpec(p=p)
        for u in (-0.2, -1.0, -9.0):
            v = conjugacy_map(u, s, "primal-to-dual")
            assert conjugacy_map(v, s, "dual-to-primal") == pytest.approx(u, rel=1e-12)
            assert p * u == pytest.approx((s.q * v) ** (1.0 - p), rel=1e-12)


def test_conjugacy_map_validation():
    spec = UtilitySpec(p=-1.0)
    with pytest.raises(ValueError):
        conjugacy_map(1.0, spec, "primal-to-dual")
    with pytest.raises(ValueError):
        conjugacy_map(-1.0, spec, "sideways")
