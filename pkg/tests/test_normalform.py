from __future__ import annotations

from fractions import Fraction

import mpmath
import numpy as np
import pytest
import sympy
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from renormkit.errors import ValidationError
from renormkit.normalform import (
    companion_normalize,
    conservative_tune,
    elliptic_check,
    first_integral,
    flow_interpolate,
    flow_linear_data,
    linear_invariants,
    normal_form_reduce,
    return_family,
    time_one_map,
)
from renormkit.series import TruncatedSeries, identity_map, linear_map

small = st.fractions(min_value=-1, max_value=1, max_denominator=9)
eps_values = st.fractions(min_value=Fraction(-1, 5), max_value=Fraction(1, 5), max_denominator=20)


def unipotent_map(order, eps1, eps2, higher):
    """u' = u + v + ..., v' = eps2 u + (1 + eps1) v + ... with given higher terms."""
    first = {(1, 0): Fraction(1), (0, 1): Fraction(1)}
    second = {(1, 0): eps2, (0, 1): 1 + eps1}
    for (k, i, j), c in higher.items():
        (first if k == 0 else second)[(i, j)] = c
    return TruncatedSeries(order, first), TruncatedSeries(order, second)


@st.composite
def exact_maps(draw, order=4):
    higher = {}
    for k in (0, 1):
        for n in range(2, order + 1):
            for i in range(n + 1):
                higher[(k, i, n - i)] = draw(small)
    return unipotent_map(order, draw(eps_values), draw(eps_values), higher)


@given(exact_maps())
def test_reduction_residual_is_exactly_zero(F):
    nf = normal_form_reduce(F)
    for comp in nf.residual(F):
        assert comp.is_zero()
    G = nf.normal_form
    # first component is u + z, second has no z^j with j >= 2
    assert G[0] == TruncatedSeries.u(4) + TruncatedSeries.v(4)
    assert all(j <= 1 for (i, j) in G[1].coeffs)


def test_degree_two_against_symbolic_oracle():
    a, b, c, e1, e2 = Fraction(3, 7), Fraction(-1, 3), Fraction(2, 5), Fraction(1, 10), Fraction(-1, 20)
    F = unipotent_map(2, e1, e2, {(1, 2, 0): a, (1, 1, 1): b, (1, 0, 2): c})
    nf = normal_form_reduce(F)

    # oracle: U = u + A u^2, Z = U o F - U; require Z o F = linear + p20 U^2 + p11 U Z mod degree 3
    u, v, A, p20, p11 = sympy.symbols("u v A p20 p11")
    R = sympy.Rational
    Fu = u + v
    Fv = R(e2) * u + (1 + R(e1)) * v + R(a) * u ** 2 + R(b) * u * v + R(c) * v ** 2
    U = u + A * u ** 2
    Z = sympy.expand(U.subs({u: Fu, v: Fv}, simultaneous=True) - U)
    lhs = sympy.expand(Z.subs({u: Fu, v: Fv}, simultaneous=True))
    rhs = sympy.expand(R(e2) * U + (1 + R(e1)) * Z + p20 * U ** 2 + p11 * U * Z)
    diff = sympy.Poly(sympy.expand(lhs - rhs), u, v)
    eqs = [diff.coeff_monomial(u ** i * v ** j) for i, j in ((2, 0), (1, 1), (0, 2))]
    sol = sympy.solve(eqs, [A, p20, p11], dict=True)[0]
    assert nf.phi(2, 0) == Fraction(str(sol[p20]))
    assert nf.phi(1, 1) == Fraction(str(sol[p11]))
    assert nf.amplitudes[2][0] == Fraction(str(sol[A]))


def test_single_quadratic_term():
    # u' = u + v + a u^2 gives z' = z + 2a u z + a z^2 before the shear removes z^2
    a = Fraction(2, 3)
    F = unipotent_map(2, Fraction(0), Fraction(0), {(0, 2, 0): a})
    nf = normal_form_reduce(F)
    assert nf.phi(1, 1) == 2 * a and nf.phi(0, 2) == 0
    assert nf.amplitudes[2] == [-a / 2]


def test_normal_form_input_is_left_alone():
    F = unipotent_map(4, Fraction(1, 7), Fraction(-1, 9),
                      {(1, 2, 0): Fraction(1, 2), (1, 3, 1): Fraction(-2, 3), (1, 4, 0): Fraction(5)})
    nf = normal_form_reduce(F)
    assert nf.amplitudes == {}
    ident = identity_map(4)
    assert nf.transform[0] == ident[0] and nf.transform[1] == ident[1]
    assert nf.normal_form[1] == F[1]


def test_linear_part_checks():
    F = unipotent_map(3, Fraction(0), Fraction(0), {})
    far = (F[0], F[1] + TruncatedSeries.v(3, 2))
    with pytest.raises(ValidationError):
        normal_form_reduce(far)
    shifted = (F[0] + 1, F[1])
    with pytest.raises(ValidationError):
        normal_form_reduce(shifted)


@given(eps_values, eps_values)
def test_linear_flow_data_reproduces_invariants(e1, e2):
    if e1 == 0 and e2 == 0:
        e1 = Fraction(1, 50)
    with mpmath.workdps(30):
        a, b = flow_linear_data(e1, e2)
    M = expm(np.array([[0.0, 1.0], [float(a), float(b)]]))
    assert abs(np.trace(M) - 2 - float(e1)) < 1e-12
    assert abs(np.linalg.det(M) - (1 + float(e1) - float(e2))) < 1e-12


def test_companion_form_preserves_invariants():
    F = (TruncatedSeries(3, {(1, 0): Fraction(9, 10), (0, 1): Fraction(1, 2), (2, 0): Fraction(1)}),
         TruncatedSeries(3, {(1, 0): Fraction(-1, 10), (0, 1): Fraction(6, 5), (1, 1): Fraction(1, 3)}))
    G, P = companion_normalize(F)
    assert linear_invariants(G) == linear_invariants(F)
    assert G[0].coeff(1, 0) == 1 and G[0].coeff(0, 1) == 1


@given(exact_maps(order=4))
def test_exact_interpolation_round_trip(F):
    F = (F[0], F[1] - TruncatedSeries.u(4, F[1].coeff(1, 0)) - TruncatedSeries.v(4, F[1].coeff(0, 1) - 1))
    interp = flow_interpolate(F)
    assert interp.mismatch() == 0
    assert all(isinstance(c, Fraction) for c in interp.psi0 + interp.psi1)


def test_interpolation_with_nonzero_eps():
    F = unipotent_map(4, Fraction(-1, 30), Fraction(1, 20),
                      {(1, 2, 0): Fraction(1, 2), (1, 1, 1): Fraction(1, 3), (0, 0, 2): Fraction(1, 5),
                       (1, 3, 0): Fraction(-1, 4), (1, 0, 3): Fraction(1, 7)})
    with mpmath.workdps(30):
        interp = flow_interpolate(F)
        assert interp.mismatch() < 1e-25
        lin0, lin1 = flow_linear_data(Fraction(-1, 30), Fraction(1, 20))
        assert abs(interp.psi0[1] - lin0) < 1e-25 and abs(interp.psi1[0] - lin1) < 1e-25


def test_time_one_map_of_nilpotent_field_is_polynomial():
    T = time_one_map([0, 0, Fraction(1)], [0], 3)
    # u' = v, v' = u^2: exact Lie series terms
    assert T[0].coeff(0, 1) == 1 and T[0].coeff(2, 0) == Fraction(1, 2)
    assert T[1].coeff(2, 0) == 1 and T[1].coeff(1, 1) == 1


def test_rotation_interpolates_to_harmonic_oscillator():
    with mpmath.workdps(30):
        c, s = mpmath.cos(1), mpmath.sin(1)
        R = linear_map(5, [[c, s], [-s, c]])
        interp = flow_interpolate(R)
        assert interp.mismatch() < 1e-25
        assert abs(interp.psi0[1] + 1) < 1e-25
        assert all(abs(x) < 1e-25 for k, x in enumerate(interp.psi0) if k != 1)
        assert all(abs(x) < 1e-25 for x in interp.psi1)


def test_return_family_shape():
    F = return_family([Fraction(1, 2)], Fraction(1, 3), order=3)
    assert F[0] == TruncatedSeries.u(3) + TruncatedSeries.v(3)
    assert F[1].coeff(1, 0) == Fraction(1, 2) and F[1].coeff(2, 0) == Fraction(1, 3)


@pytest.fixture(scope="module")
def tuned():
    return conservative_tune(2)


def test_tuning_converges(tuned):
    assert tuned.max_residual() < 1e-12
    assert tuned.s in (1, -1)
    assert tuned.Psi[0] == 0 and tuned.Psi[1] > 0


def test_tuning_sign_rule(tuned):
    assert (tuned.psi1[1] <= 0) == (tuned.s == 1)
    for i in range(1, 3):
        assert abs(tuned.psi0[i] - tuned.s * tuned.psi1[i]) < 1e-12


def test_tuning_from_solution_needs_no_correction(tuned):
    again = conservative_tune(2, ehat0=tuned.ehat)
    assert again.iterations == 0
    assert again.ehat == tuned.ehat


def test_tuning_order_range():
    with pytest.raises(ValidationError):
        conservative_tune(5)


def test_first_integral_is_conserved_by_independent_solver():
    Psi = [0.0, 0.58, 0.15]

    def rhs(t, y):
        u, v = y
        return [v, -(Psi[1] * u + Psi[2] * u ** 2) * (1 + v)]

    sol = solve_ivp(rhs, (0, 50), [0.05, 0.03], method="Radau", rtol=1e-12, atol=1e-14)
    H = first_integral(Psi, sol.y[0], sol.y[1])
    assert np.max(np.abs(H - H[0])) < 1e-10


def test_elliptic_check_linear_case():
    rep = elliptic_check([0.0, 1.0], iterations=500)
    assert rep.passed
    got = sorted(rep.multipliers, key=lambda z: z.imag)
    want = [np.exp(-1j), np.exp(1j)]
    assert max(abs(g - w) for g, w in zip(got, want)) < 1e-10


def test_elliptic_check_rejects_saddle():
    with pytest.raises(ValidationError):
        elliptic_check([0.0, -1.0])
