from __future__ import annotations

import math
from fractions import Fraction

import mpmath
import pytest
from hypothesis import given
from hypothesis import strategies as st

from renormkit.errors import ValidationError
from renormkit.hetreturn import (
    SaddleModel,
    _q_from_w,
    brute_force_fixed_point,
    convergence_sweep,
    find_fixed_point,
    first_return,
    limit_map,
    local_power,
    local_step,
    rescale_return,
    shipped_saddles,
    shipped_transitions,
    size_ordering_report,
)


def test_local_power_trivial_and_closed_form():
    model = shipped_saddles()
    assert local_power(model, 1, 0, 0.3, 0.2) == (0.3, 0.2)
    x3, y0 = local_power(model, 1, 3, 1.0, 1.0)
    assert x3 == 0.001953125 and y0 == 0.125


@pytest.mark.parametrize("j,k", [(1, 4), (2, 8), (1, 12)])
def test_local_power_with_remainder_matches_forward_iteration(j, k):
    model = shipped_saddles(remainder=0.5)
    with mpmath.workdps(40):
        x0, yk = mpmath.mpf("0.3"), mpmath.mpf("0.4")
        xk, y0 = local_power(model, j, k, x0, yk, tol=mpmath.mpf(10) ** -35)
        x, y = x0, y0
        for _ in range(k):
            x, y = local_step(model, j, x, y)
        assert abs(x - xk) < 1e-30 and abs(y - yk) < 1e-30


def test_shipped_saddle_values():
    model = shipped_saddles()
    assert model.J1 == 0.25 and model.J2 == 2.0
    assert model.theta() == pytest.approx(0.5)
    assert model.tc_margin() > 0
    model.validate()


def test_with_theta_adjusts_gam2():
    model = shipped_saddles().with_theta(0.6)
    assert model.theta() == pytest.approx(0.6, abs=1e-14)
    assert model.lam2 == 0.25


@pytest.mark.parametrize("kwargs,field", [
    ({"lam1": 1.5}, "lam1"), ({"gam2": 0.5}, "gam2"), ({"gam1": 9.0}, "J1"), ({"gam2": 3.0}, "J2"),
])
def test_saddle_validation(kwargs, field):
    base = dict(lam1=0.125, gam1=2.0, lam2=0.25, gam2=8.0)
    base.update(kwargs)
    with pytest.raises(ValidationError) as info:
        SaddleModel(**base).validate()
    assert info.value.field == field


def test_transition_validation():
    from dataclasses import replace
    t = shipped_transitions(1)
    t.validate()
    with pytest.raises(ValidationError):
        replace(t, c2=1.0).validate()
    with pytest.raises(ValidationError):
        replace(t, d1=0.0).validate()


def test_ordering_report_for_shipped_set():
    rep = size_ordering_report(shipped_saddles(), 8)
    assert rep["k1"] == 4
    assert rep["ordering"] == [True, True, False]
    assert rep["third_predicted"] is False


@given(st.floats(0.05, 0.9), st.floats(1.1, 5.0), st.floats(0.05, 0.9), st.floats(1.1, 20.0))
def test_third_ratio_follows_multiplier_inequality(lam1, gam1, lam2, gam2):
    model = SaddleModel(lam1, gam1, lam2, gam2)
    margin = model.tc_margin()
    if abs(margin) < 1e-6:
        return
    rep = size_ordering_report(model, 8, Fraction(1, 2))
    # third ratio is gam1^-k1 / lam2^k2 with k1 = k2 / 2
    expected = -4 * math.log(gam1) - 8 * math.log(lam2) < 0
    assert rep["ordering"][2] == expected


def test_odd_iterates_rejected():
    with pytest.raises(ValidationError):
        size_ordering_report(shipped_saddles(), 6)


def test_limit_map_example():
    F = limit_map(1.0, [0.0], 1.0)
    assert F(0.5, 0.2) == (0.2, -0.5 + 0.2 ** 2)
    G = limit_map(2.0, [0.1, -0.3], 1.0)
    assert G(1.0, 0.5) == (0.5, -2.0 + 0.1 - 0.15 + 0.125)


@pytest.fixture(scope="module")
def ret_m1():
    return first_return(shipped_saddles(), shipped_transitions(1), 8)


def test_fixed_point_newton_matches_brute_force(ret_m1):
    (p, q), _ = find_fixed_point(ret_m1, seed=(0.2, 0.0))
    (pb, qb), res = brute_force_fixed_point(ret_m1, box=0.25, centre=(0.25, 0.0), n=11, levels=40)
    assert res < 1e-10
    assert abs(p - pb) < 1e-9 and abs(q - qb) < 1e-12


def test_strip_check(ret_m1):
    from renormkit.errors import DomainViolation
    with pytest.raises(DomainViolation):
        ret_m1(0.9, 0.0)


def test_perturbed_return_stays_close_to_model(ret_m1):
    # same (p, w) in both maps; q is the strip offset reaching that tangency coordinate
    pert = first_return(shipped_saddles(remainder=0.3), shipped_transitions(1), 8)
    out = []
    for ret in (pert, ret_m1):
        with mpmath.workdps(ret.dps):
            p = mpmath.mpf("0.17")
            out.append(ret(p, _q_from_w(ret, p, mpmath.mpf("0.05"))))
    (a, b) = out
    assert abs(a[0] - b[0]) < 1e-9 and abs(a[1] - b[1]) < 1e-3


@pytest.mark.parametrize("m", [1, 2])
def test_rescaled_return_converges(m):
    rows = convergence_sweep(m=m, resolution=11)
    dist = [r.distance for r in rows]
    assert dist[0] > dist[1] > dist[2]
    assert dist[-1] < 1e-2
    assert all(r.closed_form_gap < 1e-30 for r in rows)


def test_rescaled_coordinates_round_trip():
    rr = rescale_return(shipped_saddles(), shipped_transitions(1), 8, 1.0, [0.2])
    with mpmath.workdps(rr.ret.dps):
        p, q = rr._to_strip(mpmath.mpf("0.3"), mpmath.mpf("-0.4"))
        X, Y = rr._from_strip(p, q)
        assert abs(X - mpmath.mpf("0.3")) < 1e-30 and abs(Y + mpmath.mpf("0.4")) < 1e-30


def test_rescaling_requires_linear_model():
    with pytest.raises(ValidationError):
        rescale_return(shipped_saddles(remainder=0.1), shipped_transitions(1), 8, 1.0, [0.0])
    with pytest.raises(ValidationError):
        rescale_return(shipped_saddles(), shipped_transitions(1), 8, 1.0, [0.0, 0.0])
