from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from renormkit.errors import DomainViolation, ManifestParseError, ValidationError
from renormkit.mapcore import (
    AffineMap,
    HenonLikeMap,
    InverseFactor,
    MapComposition,
    Phi0,
    Psi1,
    Psi2,
    SampleGrid,
    SmoothMap,
    c0_c1_distance,
    dumps_manifest,
    fd_jacobian,
    load_manifest,
    loads_manifest,
    newton_inverse,
    ruelle_takens_chain,
    save_manifest,
    volume_defect,
)
from renormkit.polynomial import Polynomial


def random_henon(n, degree, seed):
    rng = np.random.default_rng(seed)
    return HenonLikeMap(n, Polynomial.random(n - 1, degree, rng, scale=0.5))


@given(st.integers(2, 4), st.integers(0, 6), st.integers(0, 10_000))
def test_henon_det_is_one(n, degree, seed):
    f = random_henon(n, degree, seed)
    pts = SampleGrid.random(n, 50, np.random.default_rng(seed)).points
    det = np.linalg.det(f.jacobian(pts))
    assert np.max(np.abs(det - 1)) < 1e-12


@given(st.integers(2, 4), st.integers(0, 6), st.integers(0, 10_000))
def test_henon_inverse_round_trip(n, degree, seed):
    f = random_henon(n, degree, seed)
    pts = SampleGrid.random(n, 50, np.random.default_rng(seed)).points
    assert np.max(np.abs(f.inverse_call(f(pts)) - pts)) < 1e-10
    assert np.max(np.abs(f(f.inverse_call(pts)) - pts)) < 1e-10


@given(st.integers(2, 4), st.integers(0, 4), st.integers(0, 10_000))
def test_reversed_inverse(n, degree, seed):
    f = random_henon(n, degree, seed)
    g = f.reversed_inverse()
    pts = SampleGrid.random(n, 30, np.random.default_rng(seed)).points
    want = f.inverse_call(pts)
    got = g(pts[:, ::-1])[:, ::-1]
    assert np.max(np.abs(got - want)) < 1e-12


def test_henon_shape_and_sign():
    f = HenonLikeMap(3, Polynomial.zero(2))
    assert np.allclose(f([1.0, 2.0, 3.0]), [2.0, 3.0, 1.0])
    f2 = HenonLikeMap(2, Polynomial.zero(1))
    assert np.allclose(f2([1.0, 2.0]), [2.0, -1.0])


def test_henon_rejects_wrong_h():
    with pytest.raises(ValidationError):
        HenonLikeMap(3, Polynomial.zero(3))
    with pytest.raises(ValidationError):
        HenonLikeMap(1)


def test_analytic_jacobian_matches_finite_differences():
    f = random_henon(3, 4, 7)
    pts = SampleGrid.random(3, 20, np.random.default_rng(0)).points
    assert np.max(np.abs(f.jacobian(pts) - fd_jacobian(f, pts))) < 1e-7


@pytest.mark.parametrize("factor", [Psi1(2, 0.7), Psi2(3), Phi0(3),
                                    AffineMap([[2.0, 1.0], [1.0, 1.0]], [0.1, -0.2])])
def test_elementary_factor_inverse(factor):
    n = factor.dimension
    pts = SampleGrid.random(n, 40, np.random.default_rng(1)).points
    if isinstance(factor, Psi2):
        pts[:, -1] = np.abs(pts[:, -1]) + 0.1
    assert np.max(np.abs(factor.inverse_call(factor(pts)) - pts)) < 1e-12
    assert np.max(np.abs(factor.jacobian(pts) - fd_jacobian(factor, pts))) < 1e-6


def test_psi2_domain():
    with pytest.raises(DomainViolation):
        Psi2(2)([0.3, -0.1])


def test_composition_order_is_written_order():
    a = AffineMap([[1.0, 0.0], [0.0, 1.0]], [1.0, 0.0])
    r = Phi0(2)
    comp = MapComposition((r, a))  # a first, then r
    assert np.allclose(comp([0.0, 0.0]), r(a([0.0, 0.0])))
    assert np.allclose(comp.inverse()(comp([0.3, 0.4])), [0.3, 0.4])
    assert np.allclose(comp.inverse_call(comp([0.3, 0.4])), [0.3, 0.4])


def test_composition_dimension_mismatch():
    with pytest.raises(ValidationError):
        MapComposition((Phi0(2), Phi0(3)))


def test_sample_grid_ball():
    g = SampleGrid.ball(2, 41)
    assert g.contains_all()
    assert np.any(np.all(g.points == 0, axis=1))
    g3 = SampleGrid.ball(3, 11, radius=0.5, center=(1, 0, 0))
    assert g3.contains_all()
    with pytest.raises(ValidationError):
        SampleGrid.ball(2, 1)


def test_newton_inverse_and_distances():
    F = SmoothMap.from_expressions(["x+0.1*y**3", "y+0.05*x**2*y"])
    x0 = np.array([0.3, -0.4])
    y = F(x0)
    assert np.max(np.abs(newton_inverse(F, y, y) - x0)) < 1e-12
    g = SampleGrid.ball(2, 11)
    c0, c1 = c0_c1_distance(F, F, g)
    assert c0 == 0 and c1 == 0
    assert volume_defect(HenonLikeMap(2, Polynomial.random(1, 3, np.random.default_rng(0))), g) < 1e-12


def test_smooth_map_expression_jacobian():
    F = SmoothMap.from_expressions(["x+0.2*y**2", "y+0.1*x**2"])
    pts = SampleGrid.random(2, 10, np.random.default_rng(2)).points
    assert F.check_jacobian(pts) < 1e-6
    assert np.allclose(F.det_jacobian(pts), 1 - 0.08 * pts[:, 0] * pts[:, 1])


def test_ruelle_takens_chain_reconstructs():
    F = SmoothMap.from_expressions(["x+0.2*y**2", "y+0.1*x**2"])
    chain = ruelle_takens_chain(F, 8)
    pts = SampleGrid.random(2, 30, np.random.default_rng(3), radius=0.8).points
    y = pts
    for f in chain:
        y = f(y)
    assert np.max(np.abs(y - F(pts))) < 1e-8


def test_ruelle_takens_rejects_folding_isotopy():
    F = SmoothMap.from_expressions(["-x", "-y"])
    with pytest.raises(ValidationError):
        ruelle_takens_chain(F, 4)


def _sample_composition():
    h = Polynomial(2, {(1, 1): 0.1, (0, 3): 1e-17, (2, 0): -0.3})
    return MapComposition((HenonLikeMap(3, h), Psi2(3), Psi1(3, 0.123456789), Phi0(3),
                           InverseFactor(HenonLikeMap(3, h)),
                           AffineMap(np.eye(3) * 2.0, [0.1, 0.2, 1 / 3])),
                          {"kind": "test", "N": 4})


def test_manifest_round_trip_bit_exact(tmp_path):
    comp = _sample_composition()
    text = dumps_manifest(comp)
    back = loads_manifest(text)
    assert dumps_manifest(back) == text
    path = tmp_path / "m.txt"
    save_manifest(comp, path)
    again = load_manifest(path)
    pts = np.array([[0.1, 0.2, 0.3], [0.2, -0.1, 0.5]])
    assert np.array_equal(again(pts), comp(pts))
    assert again.metadata == comp.metadata


@pytest.mark.parametrize("text,field", [
    ("", "header"),
    ("bogus 1\nfactors 0\n", "header"),
    ("renormkit-manifest 99\nfactors 0\n", "version"),
    ("renormkit-manifest 1\nfactors 2\nphi0 n=2\n", "factors"),
    ("renormkit-manifest 1\nfactors 1\nhenon h=0\n", "n"),
    ("renormkit-manifest 1\nfactors 1\nwobble n=2\n", "tag"),
])
def test_manifest_parse_errors(text, field):
    with pytest.raises(ManifestParseError) as info:
        loads_manifest(text)
    assert info.value.field == field
