import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from parasys.errors import ValidationError
from parasys.extrapolation import estimate_intervals, sneiberg_window

pos = st.floats(0.01, 100.0)


def test_hand_values():
    w = sneiberg_window(0.5, 1, 1)
    assert abs(w.radius - 1 / 36) <= 1e-15
    assert w.inverse_bound == 8
    assert sneiberg_window(0.9, 2, 3).radius == pytest.approx(float(Fraction(1, 780)), abs=1e-16)
    assert sneiberg_window(0.5, 1e6, 1).radius < 1e-7


def test_range_errors():
    for theta in (0.0, 1.0, -0.1, 1.5):
        with pytest.raises(ValidationError):
            sneiberg_window(theta, 1, 1)
    with pytest.raises(ValidationError):
        sneiberg_window(0.5, 0, 1)


@given(theta=st.floats(0.01, 0.99), beta=pos, gamma=pos)
def test_symmetry_and_containment(theta, beta, gamma):
    w = sneiberg_window(theta, beta, gamma)
    assert w.radius == pytest.approx(sneiberg_window(1 - theta, beta, gamma).radius, rel=1e-12)
    lo, hi = w.window
    assert 0 < lo <= theta <= hi < 1


@given(theta=st.floats(0.01, 0.99), beta=pos, gamma=pos, k=st.floats(1.01, 10))
def test_monotone(theta, beta, gamma, k):
    r = sneiberg_window(theta, beta, gamma).radius
    assert sneiberg_window(theta, beta * k, gamma).radius < r
    assert sneiberg_window(theta, beta, gamma * k).radius < r


def test_interval_example():
    est = estimate_intervals(0, 1, 1, 1)
    assert est.beta0 == 3 and est.gamma0 == 3
    assert est.provenance[0]["radius"] == pytest.approx(1 / 228, abs=1e-16)
    assert est.I_t == pytest.approx((1 / (0.5 + 1 / 228), 1 / (0.5 - 1 / 228)), abs=1e-14)
    assert est.provenance[1]["beta"] == 24  # stage-1 inverse bound 8 * beta0
    assert est.provenance[1]["radius"] == pytest.approx(1 / 1740, abs=1e-16)
    assert est.I_x == pytest.approx((1 / (0.5 + 1 / 1740), 1 / (0.5 - 1 / 1740)), abs=1e-14)
    assert est.I_t[0] < 2 < est.I_t[1] and est.I_x[0] < 2 < est.I_x[1]


def test_intervals_shrink_with_worse_data():
    base = estimate_intervals(0, 1, 1, 1)
    more_M = estimate_intervals(0, 1, 3, 1)
    less_gamma = estimate_intervals(0, 0.1, 1, 1)
    for est in (more_M, less_gamma):
        assert base.I_t[0] < est.I_t[0] < 2 < est.I_t[1] < base.I_t[1]
        assert base.I_x[0] < est.I_x[0] < 2 < est.I_x[1] < base.I_x[1]
    tiny = estimate_intervals(0, 1e-6, 1, 1)
    assert tiny.I_t[1] - tiny.I_t[0] < 1e-5


def test_stage_two_not_wider_than_direct_window():
    est = estimate_intervals(0.2, 0.7, 1.5, 1.0)
    direct = sneiberg_window(0.5, est.beta0, est.gamma0).radius
    assert est.provenance[1]["radius"] <= direct


def test_delta_override_and_json():
    est = estimate_intervals(0, 1, 1, 1, delta=0.5)
    assert est.I_x[0] < 2 < est.I_x[1]
    assert 1.5 < est.I_x[0] and est.I_x[1] < 2.5
    data = json.loads(est.to_json())
    assert data["inputs"]["delta"] == 0.5 and len(data["provenance"]) == 4
    with pytest.raises(ValidationError):
        estimate_intervals(1, 1, 1, 1)
