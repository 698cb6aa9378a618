"""Bivariate truncated power series with exact or high-precision coefficients.

A ``TruncatedSeries`` in (u, v) keeps every monomial of total degree at most
``order``. Coefficients are whatever numbers the caller supplies (``Fraction``
for residual-free checks, ``mpmath.mpf`` otherwise); arithmetic never coerces
between them. Maps of the plane are plain pairs of series.
"""

from __future__ import annotations

from fractions import Fraction
from math import comb
from typing import Callable, Iterable, Mapping

__all__ = [
    "TruncatedSeries",
    "MapSeries",
    "compose_maps",
    "identity_map",
    "invert_near_identity",
    "linear_map",
    "map_residual",
    "solve_linear",
]


class TruncatedSeries:
    """Series sum c[i, j] u^i v^j over i + j <= order; immutable."""

    __slots__ = ("order", "coeffs")

    def __init__(self, order: int, coeffs: Mapping[tuple[int, int], object] | None = None):
        if order < 0:
            raise ValueError("order must be non-negative")
        self.order = int(order)
        clean = {}
        for (i, j), c in (coeffs or {}).items():
            if i < 0 or j < 0:
                raise ValueError(f"negative exponent ({i}, {j})")
            if i + j <= self.order and c != 0:
                clean[(int(i), int(j))] = c
        self.coeffs = clean

    # construction
    @classmethod
    def zero(cls, order: int) -> "TruncatedSeries":
        return cls(order)

    @classmethod
    def constant(cls, order: int, value) -> "TruncatedSeries":
        return cls(order, {(0, 0): value})

    @classmethod
    def u(cls, order: int, coeff=1) -> "TruncatedSeries":
        return cls(order, {(1, 0): coeff})

    @classmethod
    def v(cls, order: int, coeff=1) -> "TruncatedSeries":
        return cls(order, {(0, 1): coeff})

    @classmethod
    def monomial(cls, order: int, i: int, j: int, coeff=1) -> "TruncatedSeries":
        return cls(order, {(i, j): coeff})

    @classmethod
    def in_u(cls, order: int, coeffs: Iterable) -> "TruncatedSeries":
        """Series sum coeffs[i] u^i."""
        return cls(order, {(i, 0): c for i, c in enumerate(coeffs)})

    # access
    def coeff(self, i: int, j: int):
        return self.coeffs.get((i, j), 0)

    def __getitem__(self, key: tuple[int, int]):
        return self.coeffs.get(tuple(key), 0)

    def truncate(self, order: int) -> "TruncatedSeries":
        return TruncatedSeries(min(order, self.order), self.coeffs)

    def with_order(self, order: int) -> "TruncatedSeries":
        return TruncatedSeries(order, self.coeffs)

    def homogeneous(self, degree: int) -> "TruncatedSeries":
        return TruncatedSeries(self.order, {k: c for k, c in self.coeffs.items() if sum(k) == degree})

    def valuation(self) -> int:
        """Lowest total degree present (order + 1 for the zero series)."""
        return min((i + j for i, j in self.coeffs), default=self.order + 1)

    def is_zero(self, tol=0) -> bool:
        return all(abs(c) <= tol for c in self.coeffs.values())

    def max_abs(self) -> float:
        return max((abs(float(c)) for c in self.coeffs.values()), default=0.0)

    def map_coeffs(self, fn: Callable) -> "TruncatedSeries":
        return TruncatedSeries(self.order, {k: fn(c) for k, c in self.coeffs.items()})

    # arithmetic
    def _lift(self, other) -> "TruncatedSeries":
        if isinstance(other, TruncatedSeries):
            return other
        return TruncatedSeries.constant(self.order, other)

    def __add__(self, other):
        other = self._lift(other)
        order = min(self.order, other.order)
        out = dict(self.coeffs)
        for k, c in other.coeffs.items():
            out[k] = out.get(k, 0) + c
        return TruncatedSeries(order, out)

    __radd__ = __add__

    def __neg__(self):
        return TruncatedSeries(self.order, {k: -c for k, c in self.coeffs.items()})

    def __sub__(self, other):
        return self + (-self._lift(other))

    def __rsub__(self, other):
        return self._lift(other) - self

    def __mul__(self, other):
        if not isinstance(other, TruncatedSeries):
            return TruncatedSeries(self.order, {k: c * other for k, c in self.coeffs.items()})
        order = min(self.order, other.order)
        out: dict = {}
        for (i1, j1), c1 in self.coeffs.items():
            d1 = i1 + j1
            if d1 > order:
                continue
            for (i2, j2), c2 in other.coeffs.items():
                if d1 + i2 + j2 <= order:
                    key = (i1 + i2, j1 + j2)
                    out[key] = out.get(key, 0) + c1 * c2
        return TruncatedSeries(order, out)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        def div(c):
            if isinstance(c, int) and isinstance(scalar, int):
                return Fraction(c, scalar)
            return c / scalar

        return TruncatedSeries(self.order, {k: div(c) for k, c in self.coeffs.items()})

    def __pow__(self, k: int):
        if k < 0:
            raise ValueError("negative power")
        out = TruncatedSeries.constant(self.order, 1)
        base = self
        while k:
            if k & 1:
                out = out * base
            k >>= 1
            if k:
                base = base * base
        return out

    def __eq__(self, other):
        if not isinstance(other, TruncatedSeries):
            return NotImplemented
        return (self - other).is_zero()

    def __hash__(self):
        return hash((self.order, frozenset(self.coeffs.items())))

    def __repr__(self):
        if not self.coeffs:
            return f"TruncatedSeries({self.order}, 0)"
        parts = [f"{c}*u^{i}v^{j}" for (i, j), c in sorted(self.coeffs.items(), key=lambda t: (sum(t[0]), -t[0][0]))]
        return f"TruncatedSeries({self.order}, " + " + ".join(parts) + ")"

    # calculus and substitution
    def diff(self, index: int) -> "TruncatedSeries":
        out = {}
        for (i, j), c in self.coeffs.items():
            e = (i, j)[index]
            if e:
                key = (i - 1, j) if index == 0 else (i, j - 1)
                out[key] = c * e
        return TruncatedSeries(self.order, out)

    def compose(self, fu: "TruncatedSeries", fv: "TruncatedSeries") -> "TruncatedSeries":
        """Substitute u -> fu, v -> fv; both must vanish at the origin."""
        if fu.coeff(0, 0) != 0 or fv.coeff(0, 0) != 0:
            raise ValueError("substituted series must have zero constant term")
        order = min(self.order, fu.order, fv.order)
        fu, fv = fu.truncate(order), fv.truncate(order)
        pu = [TruncatedSeries.constant(order, 1)]
        pv = [TruncatedSeries.constant(order, 1)]
        degs = [i + j for i, j in self.coeffs] or [0]
        for _ in range(min(max(degs), order)):
            pu.append(pu[-1] * fu)
            pv.append(pv[-1] * fv)
        out = TruncatedSeries.zero(order)
        for (i, j), c in self.coeffs.items():
            if i + j <= order:
                out = out + (pu[i] * pv[j]) * c
        return out

    def __call__(self, u, v):
        """Evaluate at a point (any numeric type supporting + and *)."""
        total = 0
        for (i, j), c in self.coeffs.items():
            total = total + c * u ** i * v ** j
        return total


MapSeries = tuple[TruncatedSeries, TruncatedSeries]


def identity_map(order: int) -> MapSeries:
    return TruncatedSeries.u(order), TruncatedSeries.v(order)


def linear_map(order: int, matrix) -> MapSeries:
    """(u, v) -> matrix @ (u, v)."""
    (a, b), (c, d) = matrix
    return (TruncatedSeries(order, {(1, 0): a, (0, 1): b}),
            TruncatedSeries(order, {(1, 0): c, (0, 1): d}))


def compose_maps(outer: MapSeries, inner: MapSeries) -> MapSeries:
    """outer o inner."""
    return outer[0].compose(*inner), outer[1].compose(*inner)


def map_residual(a: MapSeries, b: MapSeries) -> MapSeries:
    return a[0] - b[0], a[1] - b[1]


def invert_near_identity(f: MapSeries) -> MapSeries:
    """Inverse of a map whose linear part is the identity.

    Writes f = id + N and iterates g <- id - N o g; each pass fixes one more
    degree, so ``order`` passes are exact through the truncation.
    """
    order = min(f[0].order, f[1].order)
    ident = identity_map(order)
    for k, comp in enumerate(f):
        lin = (comp.coeff(1, 0), comp.coeff(0, 1))
        if comp.coeff(0, 0) != 0 or lin != ((1, 0) if k == 0 else (0, 1)):
            raise ValueError("map is not tangent to the identity at the origin")
    nonlinear = (f[0] - ident[0], f[1] - ident[1])
    g = ident
    for _ in range(order):
        corr = compose_maps(nonlinear, g)
        g = (ident[0] - corr[0], ident[1] - corr[1])
    return g


def solve_linear(matrix: list[list], rhs: list) -> list:
    """Gaussian elimination over any field (Fraction stays exact)."""
    n = len(rhs)
    a = [list(row) + [b] for row, b in zip(matrix, rhs)]
    for col in range(n):
        pivot = max(range(col, n), key=lambda r: abs(a[r][col]))
        if a[pivot][col] == 0:
            raise ZeroDivisionError("singular linear system")
        a[col], a[pivot] = a[pivot], a[col]
        for r in range(col + 1, n):
            f = a[r][col] / a[col][col]
            if f != 0:
                for c in range(col, n + 1):
                    a[r][c] -= f * a[col][c]
    x = [0] * n
    for r in range(n - 1, -1, -1):
        s = a[r][n] - sum(a[r][c] * x[c] for c in range(r + 1, n))
        x[r] = s / a[r][r]
    return x


def binomial(n: int, k: int) -> int:
    return comb(n, k) if 0 <= k <= n else 0
