"""Sparse multivariate polynomials with generic coefficients.

Coefficients may be floats or ``fractions.Fraction``; arithmetic never
coerces, so exact identities (divergence, re-summation) can be checked with
rational data and fast evaluation still works on float arrays.
"""

from __future__ import annotations

from fractions import Fraction
from itertools import combinations_with_replacement
from numbers import Number
from typing import Iterable, Mapping

import numpy as np

__all__ = ["Polynomial", "monomials"]


def monomials(nvars: int, degree: int, min_degree: int = 0) -> list[tuple[int, ...]]:
    """All exponent tuples in ``nvars`` variables with total degree in [min_degree, degree]."""
    out = []
    for deg in range(min_degree, degree + 1):
        for combo in combinations_with_replacement(range(nvars), deg):
            exps = [0] * nvars
            for v in combo:
                exps[v] += 1
            out.append(tuple(exps))
    return out


class Polynomial:
    """Polynomial in ``nvars`` variables stored as {exponent tuple: coefficient}."""

    __slots__ = ("nvars", "terms")

    def __init__(self, nvars: int, terms: Mapping[tuple[int, ...], Number] | None = None):
        self.nvars = int(nvars)
        clean = {}
        for exps, c in (terms or {}).items():
            exps = tuple(int(e) for e in exps)
            if len(exps) != self.nvars:
                raise ValueError(f"exponent {exps} does not match {self.nvars} variables")
            if any(e < 0 for e in exps):
                raise ValueError(f"negative exponent in {exps}")
            if c != 0:
                clean[exps] = clean.get(exps, 0) + c
        self.terms = {k: v for k, v in clean.items() if v != 0}

    # construction helpers
    @classmethod
    def zero(cls, nvars: int) -> "Polynomial":
        return cls(nvars)

    @classmethod
    def constant(cls, nvars: int, value) -> "Polynomial":
        return cls(nvars, {(0,) * nvars: value})

    @classmethod
    def variable(cls, nvars: int, index: int, coeff=1) -> "Polynomial":
        exps = [0] * nvars
        exps[index] = 1
        return cls(nvars, {tuple(exps): coeff})

    @classmethod
    def linear(cls, coeffs: Iterable, const=0) -> "Polynomial":
        coeffs = list(coeffs)
        p = cls.constant(len(coeffs), const)
        for i, c in enumerate(coeffs):
            p = p + cls.variable(len(coeffs), i, c)
        return p

    @classmethod
    def random(cls, nvars: int, degree: int, rng: np.random.Generator, scale: float = 1.0,
               min_degree: int = 0) -> "Polynomial":
        exps = monomials(nvars, degree, min_degree)
        vals = rng.uniform(-scale, scale, size=len(exps))
        return cls(nvars, {e: float(v) for e, v in zip(exps, vals)})

    @classmethod
    def from_expression(cls, text: str, variables: list[str]) -> "Polynomial":
        """Parse a polynomial expression string (rational coefficients kept exact)."""
        import sympy

        syms = sympy.symbols(variables)
        local = {name: s for name, s in zip(variables, syms)}
        expr = sympy.sympify(text, locals=local)
        try:
            poly = sympy.Poly(expr, *syms)
        except sympy.PolynomialError as exc:
            raise ValueError(f"not a polynomial in {variables}: {text!r}") from exc
        terms = {}
        for exps, c in poly.terms():
            if c.is_Rational:
                terms[exps] = Fraction(int(c.p), int(c.q))
            else:
                terms[exps] = float(c)
        return cls(len(variables), terms)

    # basic properties
    def degree(self) -> int:
        return max((sum(e) for e in self.terms), default=0)

    def degree_in(self, index: int) -> int:
        return max((e[index] for e in self.terms), default=0)

    def is_zero(self, tol: float = 0.0) -> bool:
        return all(abs(c) <= tol for c in self.terms.values())

    def coeff(self, exps: tuple[int, ...]):
        return self.terms.get(tuple(exps), 0)

    def max_abs_coeff(self) -> float:
        return max((abs(float(c)) for c in self.terms.values()), default=0.0)

    def to_float(self) -> "Polynomial":
        return Polynomial(self.nvars, {e: float(c) for e, c in self.terms.items()})

    def copy(self) -> "Polynomial":
        return Polynomial(self.nvars, dict(self.terms))

    # arithmetic
    def _coerce(self, other) -> "Polynomial":
        if isinstance(other, Polynomial):
            if other.nvars != self.nvars:
                raise ValueError("polynomials live in different variable counts")
            return other
        return Polynomial.constant(self.nvars, other)

    def __add__(self, other):
        other = self._coerce(other)
        terms = dict(self.terms)
        for e, c in other.terms.items():
            terms[e] = terms.get(e, 0) + c
        return Polynomial(self.nvars, terms)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(self.nvars, {e: -c for e, c in self.terms.items()})

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        if not isinstance(other, Polynomial):
            return Polynomial(self.nvars, {e: c * other for e, c in self.terms.items()})
        other = self._coerce(other)
        terms: dict = {}
        for e1, c1 in self.terms.items():
            for e2, c2 in other.terms.items():
                e = tuple(a + b for a, b in zip(e1, e2))
                terms[e] = terms.get(e, 0) + c1 * c2
        return Polynomial(self.nvars, terms)

    __rmul__ = __mul__

    def __pow__(self, k: int):
        if k < 0:
            raise ValueError("negative power")
        out = Polynomial.constant(self.nvars, 1)
        base = self
        while k:
            if k & 1:
                out = out * base
            base = base * base
            k >>= 1
        return out

    def __eq__(self, other):
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self.nvars == other.nvars and (self - other).is_zero()

    def __hash__(self):
        return hash((self.nvars, frozenset(self.terms.items())))

    def __repr__(self):
        if not self.terms:
            return f"Polynomial({self.nvars}, 0)"
        parts = []
        for e, c in sorted(self.terms.items(), key=lambda t: (sum(t[0]), t[0])):
            mono = "*".join(f"x{i + 1}^{k}" if k > 1 else f"x{i + 1}" for i, k in enumerate(e) if k)
            parts.append(f"{c}" + (f"*{mono}" if mono else ""))
        return f"Polynomial({self.nvars}, " + " + ".join(parts) + ")"

    # calculus
    def diff(self, index: int) -> "Polynomial":
        terms = {}
        for e, c in self.terms.items():
            k = e[index]
            if k:
                e2 = list(e)
                e2[index] = k - 1
                terms[tuple(e2)] = c * k
        return Polynomial(self.nvars, terms)

    def integrate(self, index: int) -> "Polynomial":
        """Antiderivative in one variable that vanishes where that variable is 0."""
        terms = {}
        for e, c in self.terms.items():
            k = e[index]
            e2 = list(e)
            e2[index] = k + 1
            if isinstance(c, (int, Fraction)):
                terms[tuple(e2)] = Fraction(c) / (k + 1)
            else:
                terms[tuple(e2)] = c / (k + 1)
        return Polynomial(self.nvars, terms)

    def set_variable(self, index: int, value) -> "Polynomial":
        """Substitute a constant for one variable (the variable count is kept)."""
        terms: dict = {}
        for e, c in self.terms.items():
            e2 = list(e)
            k = e2[index]
            e2[index] = 0
            e2 = tuple(e2)
            terms[e2] = terms.get(e2, 0) + c * (value ** k if k else 1)
        return Polynomial(self.nvars, terms)

    def compose(self, substitutions: list["Polynomial"]) -> "Polynomial":
        """Replace variable i by ``substitutions[i]`` (all in a common variable count)."""
        if len(substitutions) != self.nvars:
            raise ValueError("need one substitution per variable")
        target = substitutions[0].nvars if substitutions else 0
        cache: dict[tuple[int, int], Polynomial] = {}

        def power(i, k):
            key = (i, k)
            if key not in cache:
                cache[key] = substitutions[i] ** k
            return cache[key]

        out = Polynomial.zero(target)
        for e, c in self.terms.items():
            term = Polynomial.constant(target, c)
            for i, k in enumerate(e):
                if k:
                    term = term * power(i, k)
            out = out + term
        return out

    def embed(self, nvars: int, positions: list[int]) -> "Polynomial":
        """View as a polynomial in ``nvars`` variables, variable i going to ``positions[i]``."""
        terms = {}
        for e, c in self.terms.items():
            e2 = [0] * nvars
            for i, k in enumerate(e):
                e2[positions[i]] += k
            terms[tuple(e2)] = c
        return Polynomial(nvars, terms)

    def drop_variable(self, index: int) -> "Polynomial":
        """Remove a variable the polynomial does not depend on."""
        if self.degree_in(index):
            raise ValueError(f"polynomial depends on variable {index}")
        terms = {e[:index] + e[index + 1:]: c for e, c in self.terms.items()}
        return Polynomial(self.nvars - 1, terms)

    def rename(self, mapping: dict[int, int]) -> "Polynomial":
        """Move variables: ``mapping[old] = new`` (unlisted variables stay put)."""
        positions = [mapping.get(i, i) for i in range(self.nvars)]
        return self.embed(self.nvars, positions)

    def homogeneous_part(self, degree: int, indices: list[int]) -> "Polynomial":
        """Terms whose degree in the variables ``indices`` equals ``degree``."""
        return Polynomial(self.nvars, {e: c for e, c in self.terms.items()
                                       if sum(e[i] for i in indices) == degree})

    # evaluation
    def __call__(self, x) -> np.ndarray:
        """Evaluate at points ``x`` with shape (..., nvars)."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.nvars:
            raise ValueError(f"expected trailing dimension {self.nvars}, got {x.shape}")
        out = np.zeros(x.shape[:-1])
        if not self.terms:
            return out
        maxdeg = [self.degree_in(i) for i in range(self.nvars)]
        powers = []
        for i in range(self.nvars):
            col = x[..., i]
            p = [np.ones_like(col)]
            for _ in range(maxdeg[i]):
                p.append(p[-1] * col)
            powers.append(p)
        for e, c in self.terms.items():
            term = np.full(x.shape[:-1], float(c))
            for i, k in enumerate(e):
                if k:
                    term = term * powers[i][k]
            out = out + term
        return out
