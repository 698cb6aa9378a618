from __future__ import annotations

from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from renormkit.polynomial import Polynomial, monomials
from renormkit.series import (
    TruncatedSeries,
    compose_maps,
    identity_map,
    invert_near_identity,
    linear_map,
    solve_linear,
)

fractions = st.fractions(min_value=-2, max_value=2, max_denominator=7)


@st.composite
def series(draw, order=4, min_degree=0):
    coeffs = {}
    for i in range(order + 1):
        for j in range(order + 1 - i):
            if i + j >= min_degree:
                coeffs[(i, j)] = draw(fractions)
    return TruncatedSeries(order, coeffs)


@st.composite
def near_identity(draw, order=4):
    pu = draw(series(order, min_degree=2))
    pv = draw(series(order, min_degree=2))
    return identity_map(order)[0] + pu, identity_map(order)[1] + pv


def test_monomial_count():
    assert len(monomials(2, 3)) == 10
    assert len(monomials(3, 2, min_degree=1)) == 9


def test_polynomial_exact_arithmetic():
    x = Polynomial.variable(2, 0, Fraction(1))
    y = Polynomial.variable(2, 1, Fraction(1))
    p = (x + y) * (x - y)
    assert p.coeff((2, 0)) == 1 and p.coeff((0, 2)) == -1 and p.coeff((1, 1)) == 0


@given(series(), series())
def test_product_commutes(a, b):
    assert a * b == b * a


@given(series(), series(), series())
def test_product_distributes(a, b, c):
    assert a * (b + c) == a * b + a * c


@given(series(min_degree=0))
def test_truncation_drops_high_degree(a):
    t = a.truncate(2)
    assert all(i + j <= 2 for i, j in t.coeffs)


@given(near_identity())
def test_inverse_is_exact_through_order(f):
    g = invert_near_identity(f)
    fg = compose_maps(f, g)
    gf = compose_maps(g, f)
    ident = identity_map(4)
    for comp, want in zip(fg + gf, ident + ident):
        assert (comp - want).is_zero()


@given(series(min_degree=1), near_identity(), near_identity())
def test_composition_is_associative(a, f, g):
    left = a.compose(*compose_maps(f, g))
    right = a.compose(*f).compose(*g)
    assert left == right


def test_compose_rejects_constant_term():
    a = TruncatedSeries.u(3)
    with pytest.raises(ValueError):
        a.compose(TruncatedSeries.constant(3, 1), TruncatedSeries.v(3))


def test_linear_map_and_evaluation():
    L = linear_map(3, [[2, 1], [0, 1]])
    assert L[0](Fraction(1), Fraction(2)) == 4
    assert L[1](Fraction(1), Fraction(2)) == 2


def test_division_of_integers_is_exact():
    s = TruncatedSeries(2, {(1, 0): 1}) / 3
    assert s.coeff(1, 0) == Fraction(1, 3)


@given(st.lists(st.lists(fractions, min_size=3, max_size=3), min_size=3, max_size=3),
       st.lists(fractions, min_size=3, max_size=3))
def test_solve_linear_exact(mat, x):
    # shift the diagonal to keep the matrix invertible
    a = [[mat[i][j] + (5 if i == j else 0) for j in range(3)] for i in range(3)]
    rhs = [sum(a[i][j] * x[j] for j in range(3)) for i in range(3)]
    assert solve_linear(a, rhs) == x


def test_solve_linear_singular():
    with pytest.raises(ZeroDivisionError):
        solve_linear([[Fraction(1), Fraction(2)], [Fraction(2), Fraction(4)]], [Fraction(1), Fraction(1)])
