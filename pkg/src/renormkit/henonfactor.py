"""Factorization of volume-preserving maps into polynomial Hénon-like maps.

The input is a divergence-free polynomial field X(x, t) on [0, 1]; its time-1
map is approximated by a composition of Hénon-like maps as follows.

1. Cut [0, 1] into N slabs and freeze the field at each slab midpoint.
2. Split the frozen field into planar pair fields acting on (x_i, x_{i+1}),
   each generated by a polynomial stream function.
3. Write each stream function as a sum of ridge terms phi(alpha x_i + beta x_{i+1})
   with coefficients polynomial in the other coordinates.
4. The flow of a single ridge term is an exact shear; each shear is an exact
   product of planar maps (x, y) -> (y, -x + h(y)), and those embed exactly
   into n-dimensional Hénon-like maps.

Only steps 1-2 introduce error (first order in 1/N, from freezing and from
composing the pair and ridge flows one after another).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from fractions import Fraction
from math import comb
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import solve_triangular

from .errors import NumericalError, ValidationError
from .mapcore import HenonLikeMap, MapComposition, SampleGrid
from .polynomial import Polynomial, monomials

__all__ = [
    "NonAutonomousField",
    "PairField",
    "RidgeTerm",
    "RidgeDecomposition",
    "ShearMap",
    "split_field",
    "fragment",
    "ridge_decompose",
    "shear_flow",
    "shear_to_henon",
    "planar_henon_eval",
    "planar_henon_factors",
    "shift_map",
    "sum_map",
    "factorize",
    "factorize_error",
    "reference_flow",
    "convergence_table",
    "write_convergence_csv",
    "linear_pair_blocks",
    "blocks_to_henon",
    "fit_hamiltonian",
    "theorem3_pipeline",
    "Theorem3Result",
]

RIDGE_COND_LIMIT = 1e12


# ---------------------------------------------------------------------------
# fields


@dataclass(frozen=True)
class NonAutonomousField:
    """Polynomial field X(x, t); components are polynomials in (x_1..x_n, t)."""

    dimension: int
    components: tuple

    def __post_init__(self):
        comps = tuple(self.components)
        object.__setattr__(self, "components", comps)
        if len(comps) != self.dimension:
            raise ValidationError("need one component per coordinate", field="components")
        for c in comps:
            if not isinstance(c, Polynomial):
                raise ValidationError("field components must be polynomials", field="components")
            if c.nvars != self.dimension + 1:
                raise ValidationError("components must be polynomials in (x_1..x_n, t)",
                                      field="components")

    @classmethod
    def from_expressions(cls, expressions: Sequence[str], variables: Sequence[str] | None = None,
                         time: str = "t") -> "NonAutonomousField":
        n = len(expressions)
        if variables is None:
            variables = ["x", "y", "z"][:n] if n <= 3 else [f"x{i + 1}" for i in range(n)]
        names = list(variables) + [time]
        comps = []
        for e in expressions:
            try:
                comps.append(Polynomial.from_expression(str(e), names))
            except ValueError as exc:
                raise ValidationError(f"unsupported field component: {exc}", field="field") from exc
        return cls(n, tuple(comps))

    @classmethod
    def autonomous(cls, components: Sequence[Polynomial]) -> "NonAutonomousField":
        n = len(components)
        return cls(n, tuple(c.embed(n + 1, list(range(n))) for c in components))

    @classmethod
    def random_divergence_free(cls, n: int, degree: int, rng: np.random.Generator,
                               scale: float = 1.0, time_degree: int = 1,
                               denominator: int = 64) -> "NonAutonomousField":
        """Sum of random pair fields; rational coefficients make the divergence exactly zero."""
        comps = [Polynomial.zero(n + 1) for _ in range(n)]
        exps = [e for e in monomials(n + 1, degree + 1, 2) if e[-1] <= time_degree]
        for i in range(n - 1):
            psi = Polynomial(n + 1, {
                e: Fraction(int(rng.integers(-denominator, denominator + 1)), denominator) * Fraction(scale)
                for e in exps})
            comps[i] = comps[i] + psi.diff(i + 1)
            comps[i + 1] = comps[i + 1] - psi.diff(i)
        return cls(n, tuple(comps))

    @property
    def time_index(self) -> int:
        return self.dimension

    def divergence(self) -> Polynomial:
        out = Polynomial.zero(self.dimension + 1)
        for i, c in enumerate(self.components):
            out = out + c.diff(i)
        return out

    def is_divergence_free(self, tol: float = 0.0) -> bool:
        return self.divergence().is_zero(tol)

    def degree(self) -> int:
        return max((c.degree() for c in self.components), default=0)

    def frozen(self, t: float) -> list[Polynomial]:
        """Components with t substituted, as polynomials in x only."""
        return [c.set_variable(self.time_index, t).drop_variable(self.time_index) for c in self.components]

    def __call__(self, x, t: float) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        xt = np.concatenate([x, np.full((len(x), 1), t)], axis=1)
        return np.stack([c(xt) for c in self.components], axis=-1)

    def is_zero(self) -> bool:
        return all(c.is_zero() for c in self.components)


@dataclass(frozen=True)
class PairField:
    """Planar field on (x_i, x_{i+1}) (0-based index ``i``): x_i' = eta, x_{i+1}' = zeta."""

    index: int
    eta: Polynomial
    zeta: Polynomial

    @property
    def nvars(self) -> int:
        return self.eta.nvars

    def divergence(self) -> Polynomial:
        return self.eta.diff(self.index) + self.zeta.diff(self.index + 1)

    def stream(self) -> Polynomial:
        """psi with eta = d psi / d x_{i+1} and zeta = - d psi / d x_i."""
        i = self.index
        psi = self.eta.integrate(i + 1) - self.zeta.set_variable(i + 1, 0).integrate(i)
        return psi

    def components(self, n: int) -> list[Polynomial]:
        out = [Polynomial.zero(self.nvars) for _ in range(n)]
        out[self.index] = self.eta
        out[self.index + 1] = self.zeta
        return out


def split_field(X: NonAutonomousField) -> list[PairField]:
    """Pair fields X^(1..n-1) with sum X, each divergence-free (exact arithmetic)."""
    n = X.dimension
    for c in X.components:
        if not isinstance(c, Polynomial):
            raise ValidationError("only polynomial fields are supported", field="field")
    xi = X.components
    if n == 2:
        return [PairField(0, xi[0], xi[1])]
    pairs = []
    zeta_prev = None
    for i in range(n - 1):
        eta = xi[0] if i == 0 else xi[i] - zeta_prev
        if i <= n - 3:
            zeta = -(eta.diff(i).integrate(i + 1))
        else:
            zeta = xi[n - 1]
        pairs.append(PairField(i, eta, zeta))
        zeta_prev = zeta
    return pairs


def fragment(N: int) -> list[tuple[float, float]]:
    """N equal slabs [m/N, (m+1)/N] of [0, 1], earliest first."""
    if N < 1:
        raise ValidationError("N must be at least 1", field="N")
    return [(m / N, (m + 1) / N) for m in range(N)]


# ---------------------------------------------------------------------------
# ridge decomposition


@dataclass(frozen=True)
class RidgeTerm:
    """phi(alpha x_i + beta x_{i+1}) with unit (alpha, beta).

    ``profile`` is a polynomial in n variables whose slot ``index`` carries the
    ridge variable w = alpha x_i + beta x_{i+1}; slot ``index + 1`` is unused and
    the remaining slots are parameters.
    """

    index: int
    alpha: float
    beta: float
    profile: Polynomial

    @property
    def direction(self) -> tuple[float, float]:
        return (self.alpha, self.beta)

    def expand(self) -> Polynomial:
        """The term as a polynomial in all coordinates."""
        n = self.profile.nvars
        i = self.index
        subs = [Polynomial.variable(n, k) for k in range(n)]
        subs[i] = Polynomial.variable(n, i, self.alpha) + Polynomial.variable(n, i + 1, self.beta)
        return self.profile.compose(subs)

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = x.copy()
        y[:, self.index] = self.alpha * x[:, self.index] + self.beta * x[:, self.index + 1]
        return self.profile(y)


@dataclass(frozen=True)
class RidgeDecomposition:
    index: int
    terms: tuple
    residual: float = 0.0

    def expand(self, nvars: int) -> Polynomial:
        out = Polynomial.zero(nvars)
        for t in self.terms:
            out = out + t.expand()
        return out


def _nodes(k: int) -> np.ndarray:
    if k == 0:
        return np.array([0.0])
    return np.cos(np.pi * np.arange(k + 1) / k)


def ridge_decompose(psi: Polynomial, index: int = 0, tol: float = 1e-10,
                    cond_limit: float = RIDGE_COND_LIMIT) -> RidgeDecomposition:
    """Write psi as a sum of ridge functions in the plane (x_index, x_index+1).

    For each degree k of psi in that plane, the homogeneous part is expanded as
    sum_j c_j (x + t_j y)^k over the k+1 Chebyshev extrema t_j = cos(j pi / k);
    coefficients that depend on the remaining coordinates are carried along
    linearly.  Terms sharing a node are merged into one profile.
    """
    n = psi.nvars
    i = index
    psi = psi.to_float()
    # group coefficients: degree k -> m (power of y) -> parameter polynomial
    groups: dict[int, dict[int, Polynomial]] = {}
    for e, c in psi.terms.items():
        k = e[i] + e[i + 1]
        m = e[i + 1]
        rest = list(e)
        rest[i] = 0
        rest[i + 1] = 0
        slot = groups.setdefault(k, {})
        slot[m] = slot.get(m, Polynomial.zero(n)) + Polynomial(n, {tuple(rest): c})
    profiles: dict[float, Polynomial] = {}
    for k in sorted(groups):
        t = _nodes(k)
        mat = np.array([[comb(k, m) * tj ** m for tj in t] for m in range(k + 1)])
        cond = np.linalg.cond(mat)
        if cond > cond_limit:
            raise NumericalError(f"ridge node system for degree {k} is ill-conditioned "
                                 f"(cond {cond:.2e}); split the degree range", degree=k, cond=cond)
        q, r = np.linalg.qr(mat)
        inv = solve_triangular(r, q.T)
        upow = Polynomial(n, {tuple(k if s == i else 0 for s in range(n)): 1.0})
        for j, tj in enumerate(t):
            coeff = Polynomial.zero(n)
            for m, par in groups[k].items():
                w = inv[j, m]
                if w != 0.0:
                    coeff = coeff + par * float(w)
            if coeff.is_zero(1e-15):
                continue
            key = float(tj)
            profiles[key] = profiles.get(key, Polynomial.zero(n)) + coeff * upow
    terms = []
    for tj, prof in profiles.items():
        if prof.is_zero(1e-15):
            continue
        norm = float(np.hypot(1.0, tj))
        alpha, beta = 1.0 / norm, tj / norm
        # phi(w) = P(w * norm), since w = u / norm with u = x + t y
        subs = [Polynomial.variable(n, s) for s in range(n)]
        subs[i] = Polynomial.variable(n, i, norm)
        terms.append(RidgeTerm(i, alpha, beta, prof.compose(subs)))
    dec = RidgeDecomposition(i, tuple(terms))
    residual = (dec.expand(n) - psi).max_abs_coeff()
    if residual > tol * max(1.0, psi.max_abs_coeff()):
        raise NumericalError(f"ridge reconstruction residual {residual:.2e} exceeds {tol:.1e}",
                             residual=residual)
    return RidgeDecomposition(i, tuple(terms), residual)


# ---------------------------------------------------------------------------
# shears


@dataclass(frozen=True)
class ShearMap:
    """Time-tau flow of the ridge Hamiltonian phi(alpha x_i + beta x_{i+1}).

    Moves points by tau * phi'(w) * (beta, -alpha) in the (x_i, x_{i+1}) plane.
    """

    index: int
    alpha: float
    beta: float
    profile: Polynomial
    tau: float

    def derivative(self) -> Polynomial:
        return self.profile.diff(self.index)

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        i = self.index
        y = x.copy()
        y[:, i] = self.alpha * x[:, i] + self.beta * x[:, i + 1]
        g = self.tau * self.derivative()(y)
        out = x.copy()
        out[:, i] = x[:, i] + g * self.beta
        out[:, i + 1] = x[:, i + 1] - g * self.alpha
        return out

    def jacobian_det(self, x) -> np.ndarray:
        """Closed form: the displacement is along the level lines of w, so det = 1."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        i = self.index
        y = x.copy()
        y[:, i] = self.alpha * x[:, i] + self.beta * x[:, i + 1]
        g2 = self.tau * self.derivative().diff(self.index)(y)
        a = 1 + g2 * self.beta * self.alpha
        b = g2 * self.beta * self.beta
        c = -g2 * self.alpha * self.alpha
        d = 1 - g2 * self.alpha * self.beta
        return a * d - b * c


def shear_flow(term: RidgeTerm, tau: float) -> ShearMap:
    return ShearMap(term.index, term.alpha, term.beta, term.profile, float(tau))


# planar building block P_h(x_i, x_{i+1}) = (x_{i+1}, -x_i + h(x_{i+1}; others))


def planar_henon_eval(x, index: int, h: Polynomial) -> np.ndarray:
    """Direct evaluation of the planar Hénon family acting on (x_i, x_{i+1})."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    out = x.copy()
    out[:, index] = x[:, index + 1]
    out[:, index + 1] = -x[:, index] + h(x)
    return out


def shift_map(n: int) -> HenonLikeMap:
    """(x_1..x_n) -> (x_2..x_n, (-1)^(n+1) x_1)."""
    return HenonLikeMap(n, Polynomial.zero(n - 1))


def sum_map(n: int) -> HenonLikeMap:
    """(x_1..x_n) -> (x_2..x_n, sum_j (-1)^(n+j) x_j)."""
    coeffs = [(-1) ** (n + j) for j in range(2, n + 1)]
    return HenonLikeMap(n, Polynomial.linear(coeffs))


def planar_henon_factors(index: int, h: Polynomial) -> list[HenonLikeMap]:
    """Hénon-like factors (application order) equal to the planar family at pair ``index``.

    n = 2 gives the single map (x, y) -> (y, -x + h(y)).  For n >= 3 the
    product S^(n-i-1) H S Q^(n-1) S^(i+1) is used (1-based i), with S the
    cyclic shift, Q the alternating-sum map and H carrying h.
    """
    n = h.nvars
    if h.degree_in(index):
        raise ValidationError("h must not depend on the coordinate being replaced", field="h")
    if n == 2:
        return [HenonLikeMap(2, h.drop_variable(0))]
    i1 = index + 1  # 1-based pair index
    sign = (-1) ** (n + 1)
    subs: list[Polynomial | None] = [None] * n

    def var(k, c=1):  # 1-based variable
        return Polynomial.variable(n, k - 1, c)

    subs[i1 - 1] = Polynomial.zero(n)  # unused slot
    subs[i1] = var(n)  # x_{i+1} -> x_n
    for k in range(1, i1):  # x_1..x_{i-1} -> x_{n-i+1}..x_{n-1}
        subs[k - 1] = var(n - i1 + k)
    for r in range(1, n - i1):  # x_{i+1+r} -> sign * x_{1+r}
        subs[i1 + r] = var(1 + r, sign)
    hh = h.compose(subs)
    # the x_1 term of the alternating sum is the Hénon sign term itself
    lin = Polynomial.linear([0] + [(-1) ** (n + j) for j in range(2, n)] + [-1])
    hh = (hh + lin).drop_variable(0)
    S = shift_map(n)
    Q = sum_map(n)
    H = HenonLikeMap(n, hh)
    return [S] * (i1 + 1) + [Q] * (n - 1) + [S] + [H] + [S] * (n - i1 - 1)


def _reslot(p: Polynomial, src: int, dst: int, scale: float = 1.0) -> Polynomial:
    """Replace variable ``src`` by ``scale`` times variable ``dst`` (dst unused in p)."""
    n = p.nvars
    subs = [Polynomial.variable(n, k) for k in range(n)]
    subs[src] = Polynomial.variable(n, dst, scale)
    return p.compose(subs)


def _vertical(index: int, s: Polynomial) -> list[tuple[int, Polynomial]]:
    """(x_i, x_{i+1} + s(x_i)) as planar blocks (application order); s lives in slot i."""
    n = s.nvars
    zero = Polynomial.zero(n)
    return [(index, zero)] * 3 + [(index, _reslot(s, index, index + 1))]


def _horizontal(index: int, s: Polynomial) -> list[tuple[int, Polynomial]]:
    """(x_i + s(x_{i+1}), x_{i+1}); s lives in slot i+1."""
    n = s.nvars
    zero = Polynomial.zero(n)
    flipped = _reslot(s, index + 1, index + 1, -1.0)
    return [(index, zero)] * 2 + [(index, flipped)] + [(index, zero)]


def _simplify(blocks: list[tuple[int, Polynomial]]) -> list[tuple[int, Polynomial]]:
    """Cancel runs of four h = 0 blocks on the same pair (the quarter turn has order 4)."""
    out: list[tuple[int, Polynomial]] = []
    for b in blocks:
        out.append(b)
        if len(out) >= 4 and all(o[0] == b[0] and o[1].is_zero() for o in out[-4:]):
            del out[-4:]
    return out


def shear_blocks(S: ShearMap) -> list[tuple[int, Polynomial]]:
    """Planar blocks (index, h) in application order whose product is the shear."""
    i = S.index
    n = S.profile.nvars
    g = S.derivative() * S.tau  # phi'(w) tau, w in slot i
    if g.is_zero():
        return []
    a, b = S.alpha, S.beta
    if abs(a) >= abs(b):
        t = b / a
        # u = x + t y; in (u, y): y -> y - a tau phi'(a u)
        s = _reslot(g, i, i, a) * (-a)
        lin_fwd = Polynomial.variable(n, i + 1, t)
        lin_back = Polynomial.variable(n, i + 1, -t)
        core = _vertical(i, s)
        if t == 0.0:
            return _simplify(core)
        return _simplify(_horizontal(i, lin_fwd) + core + _horizontal(i, lin_back))
    t = a / b
    # u = y + t x; in (x, u): x -> x + b tau phi'(b u)
    s = _reslot(_reslot(g, i, i, b) * b, i, i + 1)
    lin_fwd = Polynomial.variable(n, i, t)
    lin_back = Polynomial.variable(n, i, -t)
    return _simplify(_vertical(i, lin_fwd) + _horizontal(i, s) + _vertical(i, lin_back))


def blocks_to_henon(blocks: list[tuple[int, Polynomial]]) -> list[HenonLikeMap]:
    out: list[HenonLikeMap] = []
    for index, h in blocks:
        out.extend(planar_henon_factors(index, h))
    return out


def shear_to_henon(S: ShearMap, n: int | None = None) -> list[HenonLikeMap]:
    """Hénon-like factors in application order whose product equals the shear exactly."""
    if n is not None and n != S.profile.nvars:
        raise ValidationError("dimension does not match the shear profile", field="n")
    return blocks_to_henon(shear_blocks(S))


# ---------------------------------------------------------------------------
# factorization of a field's time-1 map


def factorize(X: NonAutonomousField, N: int) -> MapComposition:
    """Hénon-like composition approximating the time-1 map of X (first order in 1/N)."""
    if N < 1:
        raise ValidationError("N must be at least 1", field="N")
    n = X.dimension
    pairs = split_field(X)
    blocks: list[tuple[int, Polynomial]] = []
    tau = 1.0 / N
    for t0, t1 in fragment(N):
        tm = 0.5 * (t0 + t1)
        for pf in pairs:
            psi = pf.stream().set_variable(n, tm).drop_variable(n)
            if psi.is_zero():
                continue
            dec = ridge_decompose(psi, pf.index)
            for term in dec.terms:
                blocks.extend(shear_blocks(shear_flow(term, tau)))
    blocks = _simplify(blocks)
    factors = blocks_to_henon(blocks)
    return MapComposition(tuple(reversed(factors)),
                          {"kind": "factorize", "N": N, "n": n})


def reference_flow(X: NonAutonomousField, points, rtol: float = 1e-12, atol: float = 1e-12,
                   t_span=(0.0, 1.0)) -> np.ndarray:
    """Time-1 map of X by high-accuracy adaptive integration (all points at once)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    m, n = pts.shape

    def rhs(t, z):
        return X(z.reshape(m, n), t).ravel()

    sol = solve_ivp(rhs, t_span, pts.ravel(), method="DOP853", rtol=rtol, atol=atol)
    if not sol.success:
        raise NumericalError(f"reference integration failed: {sol.message}")
    return sol.y[:, -1].reshape(m, n)


def factorize_error(X: NonAutonomousField, N: int, grid: SampleGrid,
                    reference: np.ndarray | None = None) -> tuple[float, MapComposition]:
    comp = factorize(X, N)
    ref = reference_flow(X, grid.points) if reference is None else reference
    approx = comp(grid.points)
    return float(np.max(np.linalg.norm(approx - ref, axis=1))), comp


@dataclass
class ConvergenceRow:
    N: int
    error: float
    factors: int
    max_degree: int
    ratio: float | None = None
    extra: dict = field(default_factory=dict)


def convergence_table(X: NonAutonomousField, Ns: Sequence[int], grid: SampleGrid) -> list[ConvergenceRow]:
    ref = reference_flow(X, grid.points)
    rows: list[ConvergenceRow] = []
    for N in Ns:
        err, comp = factorize_error(X, N, grid, ref)
        ratio = rows[-1].error / err if rows and err > 0 else None
        rows.append(ConvergenceRow(N, err, len(comp), comp.max_degree(), ratio))
    return rows


def write_convergence_csv(rows: Sequence[ConvergenceRow], path, params: dict | None = None) -> None:
    params = dict(params or {})
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(params) + ["N", "error", "factor_count", "max_degree", "ratio"])
        for r in rows:
            w.writerow([params[k] for k in params] +
                       [r.N, repr(r.error), r.factors, r.max_degree, "" if r.ratio is None else repr(r.ratio)])


# ---------------------------------------------------------------------------
# exact Hénon products for affine volume-preserving maps of a coordinate pair


def _shear_upper(index: int, n: int, p: float, c: float = 0.0) -> list[tuple[int, Polynomial]]:
    """(x_i + p x_{i+1} + c, x_{i+1})."""
    s = Polynomial.variable(n, index + 1, p) + c
    return _horizontal(index, s) if not s.is_zero() else []


def _shear_lower(index: int, n: int, q: float, c: float = 0.0) -> list[tuple[int, Polynomial]]:
    """(x_i, x_{i+1} + q x_i + c)."""
    s = Polynomial.variable(n, index, q) + c
    return _vertical(index, s) if not s.is_zero() else []


def linear_pair_blocks(matrix, index: int, n: int, shift=(0.0, 0.0)) -> list[tuple[int, Polynomial]]:
    """Planar blocks for v -> M v + shift on (x_i, x_{i+1}), det M = 1.

    Uses M = U((a-1)/c) L(c) U((d-1)/c) when c != 0 and M = (M L(1)) L(-1)
    otherwise, with U, L the upper and lower unit shears.
    """
    M = np.asarray(matrix, dtype=float)
    if abs(np.linalg.det(M) - 1.0) > 1e-12:
        raise ValidationError("linear part must have determinant 1", field="matrix")
    a, b = M[0]
    c, d = M[1]
    blocks: list[tuple[int, Polynomial]] = []
    if np.array_equal(M, np.eye(2)):
        pass
    elif abs(c) < 1e-14:
        M2 = M @ np.array([[1.0, 0.0], [1.0, 1.0]])
        blocks = _shear_lower(index, n, -1.0) + linear_pair_blocks(M2, index, n)
    else:
        blocks = (_shear_upper(index, n, (d - 1) / c) + _shear_lower(index, n, c)
                  + _shear_upper(index, n, (a - 1) / c))
    sx, sy = shift
    if sx:
        blocks = blocks + _shear_upper(index, n, 0.0, sx)
    if sy:
        blocks = blocks + _shear_lower(index, n, 0.0, sy)
    return _simplify(blocks)


# ---------------------------------------------------------------------------
# fitting a Hamiltonian field to a near-identity area-preserving map


@dataclass
class HamiltonianFit:
    hamiltonian: Polynomial
    residual: float
    samples: int

    def field(self) -> NonAutonomousField:
        H = self.hamiltonian
        return NonAutonomousField.autonomous([H.diff(1), -H.diff(0)])


def _flow_rk4(H: Polynomial, pts: np.ndarray, steps: int = 24) -> np.ndarray:
    Hx, Hy = H.diff(0), H.diff(1)

    def f(z):
        return np.column_stack([Hy(z), -Hx(z)])

    h = 1.0 / steps
    z = pts.copy()
    for _ in range(steps):
        k1 = f(z)
        k2 = f(z + 0.5 * h * k1)
        k3 = f(z + 0.5 * h * k2)
        k4 = f(z + h * k3)
        z = z + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return z


def fit_hamiltonian(target, points, degree: int, refine: bool = True) -> HamiltonianFit:
    """Polynomial H (degree <= ``degree``) whose time-1 flow approximates ``target``.

    The initial guess solves target(x) - x = J grad H((x + target(x)) / 2) by
    linear least squares (the midpoint generating function of an area-preserving
    map); ``refine`` then minimises the time-1 flow mismatch directly.
    """
    from scipy.optimize import least_squares

    pts = np.atleast_2d(np.asarray(points, dtype=float))
    img = np.asarray(target(pts))
    mid = 0.5 * (pts + img)
    exps = monomials(2, degree, 1)
    basis = [Polynomial(2, {e: 1.0}) for e in exps]
    cols = []
    for b in basis:
        cols.append(np.concatenate([b.diff(1)(mid), -b.diff(0)(mid)]))
    A = np.column_stack(cols)
    rhs = np.concatenate([img[:, 0] - pts[:, 0], img[:, 1] - pts[:, 1]])
    scale = np.linalg.norm(A, axis=0)
    scale[scale == 0] = 1.0
    coef, *_ = np.linalg.lstsq(A / scale, rhs, rcond=None)
    coef = coef / scale

    def build(c):
        return Polynomial(2, {e: float(v) for e, v in zip(exps, c)})

    if refine:
        def resid(c):
            return (_flow_rk4(build(c), pts) - img).ravel()

        sol = least_squares(resid, coef, method="lm", xtol=1e-13, ftol=1e-13)
        coef = sol.x
    H = build(coef)
    err = float(np.max(np.linalg.norm(_flow_rk4(H, pts) - img, axis=1)))
    return HamiltonianFit(H, err, len(pts))


# ---------------------------------------------------------------------------
# full pipeline for a general (not volume-preserving) map


@dataclass
class Theorem3Result:
    composition: MapComposition
    error: float
    N: int
    degree: int
    fits: tuple
    K: float

    @property
    def factor_count(self) -> int:
        return len(self.composition)

    @property
    def max_degree(self) -> int:
        return self.composition.max_degree()


def theorem3_pipeline(F, N: int = 32, degree: int = 6, grid: SampleGrid | None = None,
                      fit_resolution: int = 15, variant: str = "plain", fields=None,
                      refine: bool = True, K: float | None = None,
                      safety: float = 4.0) -> Theorem3Result:
    """Approximate F by  [Hénon block] ∘ Psi2 ∘ [Hénon block] ∘ Psi1.

    The volume-preserving parts of the Lemma-1 split are written as
    Phi1 = A1∘R1 and Phi2 = R2∘A2, where A1, A2 are the exact affine maps they
    reduce to when F is the identity and R1, R2 are near-identity remainders.
    The affine parts are factored exactly; R1, R2 are replaced by the flows of
    fitted Hamiltonians (``degree`` + 1 in H so Hénon factors have degree
    <= ``degree``) and factorized with N slabs.  ``variant="phi0"`` emits the
    equivalent form with explicit quarter-turn factors Phi0.

    Each remainder is fitted in coordinates translated to the centre of its
    sample cloud (the translations are exact blocks).  A larger K than the
    minimum keeps R1 close to the identity; ``safety`` scales the estimate.
    User-supplied ``fields`` act on untranslated coordinates.
    """
    from .lemma1 import estimate_K, lemma1_decompose
    from .mapcore import Phi0, Psi1, Psi2

    n = F.dimension
    if n != 2 and fields is None:
        raise ValidationError("Hamiltonian fitting is implemented for n = 2; supply fields for n > 2",
                              field="fields")
    if K is None:
        K = estimate_K(F, SampleGrid.ball(n, 21 if n == 2 else 11, 1.5), safety=safety)
    dec = lemma1_decompose(F, K=K)
    K = dec.K
    lnK = float(np.log(K))
    if grid is None:
        grid = SampleGrid.ball(n, 41)
    fit_grid = SampleGrid.ball(n, fit_resolution, 1.1 * F.domain_radius)

    def r1(y):
        z = dec.phi1(y)
        z[:, -2] *= K
        z[:, -1] /= K
        return z

    def r2(w):
        z = np.array(w, dtype=float, copy=True)
        z[:, -2] = w[:, -2] / K
        z[:, -1] = K * w[:, -1] + lnK
        return dec.phi2(z)

    i = n - 2
    fits = []
    fitted_fields = []
    centres = [np.zeros(n), np.zeros(n)]
    if fields is None:
        y_samples = dec.psi1(fit_grid.points)
        w_samples = F(fit_grid.points)
        for k, (target, samples) in enumerate(((r1, y_samples), (r2, w_samples))):
            c = np.zeros(n)
            c[i:] = np.round(samples[:, i:].mean(axis=0), 12)
            centres[k] = c

            def shifted(u, target=target, c=c):
                return target(u + c) - c

            fit = fit_hamiltonian(shifted, samples - c, degree + 1, refine=refine)
            fits.append(fit)
            fitted_fields.append(fit.field())
    else:
        fitted_fields = list(fields)

    eye = np.eye(2)

    def block_factors(X, c) -> list[HenonLikeMap]:
        comp = factorize(X, N)
        inner = list(reversed(comp.factors))  # application order
        to_local = blocks_to_henon(linear_pair_blocks(eye, i, n, shift=tuple(-c[i:])))
        back = blocks_to_henon(linear_pair_blocks(eye, i, n, shift=tuple(c[i:])))
        return to_local + inner + back

    a1 = linear_pair_blocks(np.diag([1.0 / K, K]), i, n)
    a2 = linear_pair_blocks(np.diag([K, 1.0 / K]), i, n, shift=(0.0, -lnK / K))
    zero = Polynomial.zero(n)
    quarter = [(i, zero)]  # the planar block with h = 0 is Phi0 on the last pair
    if variant == "phi0":
        # Phi0^{-1} = three quarter turns; Phi0 itself is emitted as its own factor
        first = block_factors(fitted_fields[0], centres[0]) + blocks_to_henon(a1 + quarter * 3)
        second = (blocks_to_henon(a2) + block_factors(fitted_fields[1], centres[1])
                  + blocks_to_henon(quarter * 3))
        app = ([Psi1(n, K)] + first + [Phi0(n)] + [Psi2(n)] + second + [Phi0(n)])
    elif variant == "plain":
        first = block_factors(fitted_fields[0], centres[0]) + blocks_to_henon(a1)
        second = blocks_to_henon(a2) + block_factors(fitted_fields[1], centres[1])
        app = [Psi1(n, K)] + first + [Psi2(n)] + second
    else:
        raise ValidationError(f"unknown variant {variant!r}", field="variant")
    comp = MapComposition(tuple(reversed(app)), {"kind": "theorem3", "N": N, "degree": degree,
                                                   "K": K, "n": n, "variant": variant})
    err = float(np.max(np.linalg.norm(comp(grid.points) - F(grid.points), axis=1)))
    return Theorem3Result(comp, err, N, degree, tuple(fits), K)
