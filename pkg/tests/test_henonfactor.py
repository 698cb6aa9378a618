from __future__ import annotations

from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from renormkit.errors import ValidationError
from renormkit.henonfactor import (
    NonAutonomousField,
    RidgeTerm,
    blocks_to_henon,
    convergence_table,
    factorize,
    fragment,
    linear_pair_blocks,
    planar_henon_eval,
    planar_henon_factors,
    reference_flow,
    ridge_decompose,
    shear_flow,
    shear_to_henon,
    split_field,
)
from renormkit.mapcore import HenonLikeMap, SampleGrid
from renormkit.polynomial import Polynomial
from renormkit.presets import nonlinear_field, rotation_field


def apply_in_order(factors, x):
    for f in factors:
        x = f(x)
    return x


def random_points(n, count, seed):
    return SampleGrid.random(n, count, np.random.default_rng(seed)).points


@given(st.integers(0, 8), st.integers(0, 10_000))
def test_ridge_reconstruction(degree, seed):
    psi = Polynomial.random(2, degree, np.random.default_rng(seed))
    dec = ridge_decompose(psi)
    assert (dec.expand(2) - psi.to_float()).max_abs_coeff() < 1e-10


def test_ridge_with_parameters():
    psi = Polynomial.random(3, 4, np.random.default_rng(2))
    for index in (0, 1):
        dec = ridge_decompose(psi, index)
        assert (dec.expand(3) - psi).max_abs_coeff() < 1e-10


def test_polarization_of_xy():
    psi = Polynomial(2, {(1, 1): 1.0})
    dec = ridge_decompose(psi)
    pts = random_points(2, 20, 0)
    total = sum(t(pts) for t in dec.terms)
    assert np.max(np.abs(total - pts[:, 0] * pts[:, 1])) < 1e-12


@given(st.integers(0, 10_000))
def test_vertical_shear_from_three_quarter_turns(seed):
    rng = np.random.default_rng(seed)
    s = Polynomial.random(1, 4, rng)
    quarter = HenonLikeMap(2, Polynomial.zero(1))
    pts = random_points(2, 50, seed)
    got = apply_in_order([quarter] * 3 + [HenonLikeMap(2, s)], pts)
    want = np.stack([pts[:, 0], pts[:, 1] + s(pts[:, :1])], axis=1)
    assert np.max(np.abs(got - want)) < 1e-12


@pytest.mark.parametrize("n", [3, 4])
def test_planar_henon_embedding(n):
    rng = np.random.default_rng(n)
    pts = random_points(n, 200, n)
    for index in range(n - 1):
        h = Polynomial.random(n, 3, rng).set_variable(index, 0)
        got = apply_in_order(planar_henon_factors(index, h), pts)
        want = planar_henon_eval(pts, index, h)
        assert np.max(np.abs(got - want)) < 1e-12


def test_planar_henon_rejects_dependence_on_replaced_coordinate():
    h = Polynomial.variable(3, 0)
    with pytest.raises(ValidationError):
        planar_henon_factors(0, h)


@pytest.mark.parametrize("alpha,beta", [(1.0, 0.0), (0.6, 0.8), (0.0, 1.0), (-0.28, 0.96)])
def test_shear_factorization_is_exact(alpha, beta):
    profile = Polynomial(2, {(2, 0): 0.3, (3, 0): -0.2, (4, 0): 0.05})
    S = shear_flow(RidgeTerm(0, alpha, beta, profile), 0.7)
    pts = random_points(2, 200, 1)
    assert np.max(np.abs(apply_in_order(shear_to_henon(S), pts) - S(pts))) < 1e-12
    assert np.max(np.abs(S.jacobian_det(pts) - 1)) < 1e-12


def test_split_field_exact():
    X = nonlinear_field(0)
    assert X.is_divergence_free()
    pairs = split_field(X)
    assert len(pairs) == 2
    total = [Polynomial.zero(4) for _ in range(3)]
    for p in pairs:
        assert p.divergence().is_zero()
        total = [a + b for a, b in zip(total, p.components(3))]
    for a, b in zip(total, X.components):
        assert (a - b).is_zero()


def test_stream_function_generates_pair():
    X = NonAutonomousField.from_expressions(["-y + x**2*t", "x - 2*x*y*t"])
    (p,) = split_field(X)
    psi = p.stream()
    assert (psi.diff(1) - p.eta).is_zero()
    assert (psi.diff(0) + p.zeta).is_zero()


def test_random_field_has_rational_coefficients():
    X = NonAutonomousField.random_divergence_free(3, 2, np.random.default_rng(0))
    assert all(isinstance(c, Fraction) for comp in X.components for c in comp.terms.values())


def test_fragment():
    assert fragment(4) == [(0.0, 0.25), (0.25, 0.5), (0.5, 0.75), (0.75, 1.0)]
    with pytest.raises(ValidationError):
        fragment(0)


def test_rotation_factorization_first_order():
    X = rotation_field()
    grid = SampleGrid.ball(2, 9)
    rows = convergence_table(X, [8, 16, 32], grid)
    for r in rows[1:]:
        assert 1.5 <= r.ratio <= 2.5
    ref = reference_flow(X, grid.points)
    exact = np.stack([np.cos(1) * grid.points[:, 0] - np.sin(1) * grid.points[:, 1],
                      np.sin(1) * grid.points[:, 0] + np.cos(1) * grid.points[:, 1]], axis=1)
    assert np.max(np.abs(ref - exact)) < 1e-10


def test_factorization_is_volume_preserving():
    comp = factorize(nonlinear_field(0), 4)
    pts = random_points(3, 20, 3)
    det = np.linalg.det(comp.jacobian(pts))
    assert np.max(np.abs(det - 1)) < 1e-10
    assert all(isinstance(f, HenonLikeMap) for f in comp.factors)


@pytest.mark.parametrize("shift", [(0.0, 0.0), (0.3, -0.2)])
def test_linear_pair_blocks_exact(shift):
    A = np.array([[1.2, 0.5], [0.4, 1.0]])
    A[1, 1] = (1 + A[0, 1] * A[1, 0]) / A[0, 0]
    factors = blocks_to_henon(linear_pair_blocks(A, 0, 2, shift))
    pts = random_points(2, 50, 5)
    want = pts @ A.T + np.array(shift)
    assert np.max(np.abs(apply_in_order(factors, pts) - want)) < 1e-12
