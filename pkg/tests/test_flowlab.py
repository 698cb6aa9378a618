from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from renormkit.errors import DomainViolation, ValidationError
from renormkit.flowlab import (
    FlowConstants,
    alpha_beta,
    assemble_renormalized,
    block_error,
    build_scheme,
    bump,
    cross_validate_block,
    dump_scheme,
    load_scheme,
    single_block_rescaled,
    solve_mu,
    target_defined,
    targets_from_composition,
    verify_sweep,
)
from renormkit.mapcore import HenonLikeMap, MapComposition, Phi0, Psi1, Psi2, SampleGrid
from renormkit.polynomial import Polynomial
from renormkit.presets import flow_target


def test_bump_support_and_peak():
    z = np.array([-0.6, -0.5, 0.0, 0.25, 0.5])
    b = bump(z)
    assert b[0] == 0 and b[1] == 0 and b[4] == 0
    assert b[2] == 1.0
    assert 0 < b[3] < 1


def test_flow_constants_validation():
    with pytest.raises(ValidationError):
        FlowConstants(delta=0.03)
    with pytest.raises(ValidationError):
        FlowConstants(delta=-0.05)


@given(st.floats(1e-5, 0.9))
def test_alpha_beta_monotone_in_mu(mu):
    a1, b1 = alpha_beta(mu)
    a2, b2 = alpha_beta(mu * 1.1)
    assert a2 < a1 and b2 < b1


def test_solve_mu_inverts_beta():
    mu = solve_mu(300, -0.97, 0.05)
    assert 0 < mu <= 1


@pytest.mark.parametrize("name", ["q11", "q21", "poly"])
def test_parameter_residuals(name):
    targets, K, _, _ = flow_target(name)
    for m in (6, 8, 10):
        res = build_scheme(targets, m=m, K=K).residuals()
        assert max(res.values()) < 1e-9


def test_eps_shrinks_with_m():
    targets, K, _, _ = flow_target("poly")
    eps = [max(float(np.max(np.abs(e))) for e in build_scheme(targets, m=m, K=K).eps)
           for m in (6, 8, 10)]
    assert eps[0] > eps[1] > eps[2]


def test_block_error_scales_with_eta():
    targets, K, _, _ = flow_target("q21")
    ratios = []
    for m in (6, 8, 10):
        sch = build_scheme(targets, m=m, K=K)
        ratios.append(block_error(sch, 1, 1, SampleGrid.ball(2, 21)) / sch.eta)
    c = np.mean(ratios)
    assert all(0.5 * c <= r <= 1.5 * c for r in ratios)


def test_zero_target_block_is_quarter_turn_in_limit():
    sch = build_scheme(([np.zeros(2)], []), m=10)
    f = single_block_rescaled(sch, 1, 1)
    pts = SampleGrid.ball(2, 11).points
    want = np.stack([pts[:, 1], -pts[:, 0]], axis=1)
    assert np.max(np.abs(f(pts) - want)) < 0.2


def test_q11_end_to_end_decreases():
    targets, K, radius, centre = flow_target("q11")
    grid = SampleGrid.ball(2, 15, radius, center=centre)
    rows = verify_sweep(targets, (6, 8, 10), K=K, grid=grid)
    errs = [r.end_to_end for r in rows]
    assert errs[0] > errs[1] > errs[2]
    assert errs[-1] < 0.1


def test_single_factor_target_has_no_end_to_end_domain():
    targets, K, _, _ = flow_target("q21")
    sch = build_scheme(targets, m=8, K=K)
    assert not target_defined(sch, SampleGrid.ball(2, 11))
    rows = verify_sweep(targets, (6,), K=K)
    assert np.isnan(rows[0].end_to_end)


def test_strip_violation_is_reported():
    targets, K, _, _ = flow_target("q11")
    sch = build_scheme(targets, m=6, K=K, R=0.05)
    with pytest.raises(DomainViolation):
        assemble_renormalized(sch, SampleGrid.ball(2, 5, 1.0, center=(-1.5, 0.0)))


def test_closed_form_blocks_match_direct_integration():
    rows = cross_validate_block(m=6.0)
    assert rows and all(r.passed for r in rows)


def test_scheme_dump_round_trip():
    targets, K, _, _ = flow_target("poly")
    sch = build_scheme(targets, m=8, K=K)
    text = dump_scheme(sch)
    assert dump_scheme(load_scheme(text)) == text


def test_bad_inputs():
    with pytest.raises(ValidationError):
        build_scheme(([], []), m=-1)
    with pytest.raises(ValidationError):
        build_scheme(([[np.nan, 0.0]], []), m=6)
    with pytest.raises(ValidationError):
        load_scheme("not a scheme")


def test_targets_from_composition():
    h1 = HenonLikeMap(2, Polynomial(1, {(1,): 0.3, (2,): 0.2}))
    comp = MapComposition((Phi0(2), Psi2(2), Phi0(2), h1, Psi1(2, 0.5)))
    a, b, K = targets_from_composition(comp)
    assert K == 0.5 and len(a) == 1 and len(b) == 0
    assert np.allclose(a[0], [0.0, 0.3, 0.2])
