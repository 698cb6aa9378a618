"""Normal forms near a double unit multiplier, flow interpolation and conservative tuning.

A planar map with fixed point 0 and linear part close to [[1, 1], [0, 1]] is
reduced, degree by degree, to ``u' = u + z, z' = (1 + eps1) z + eps2 u + phi0(u)
+ z phi1(u)``. The reduced coefficients are then matched by the time-1 map of
``u' = v, v' = psi0(u) + v psi1(u)``. Tuning a return-map family so that
``psi0 = s psi1`` produces the conservative flow ``u' = v, v' = -Psi(u)(1 + v)``.

All series work goes through ``TruncatedSeries``: with ``Fraction`` inputs
every identity is checked with zero residual.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import mpmath
import numpy as np
from scipy.integrate import solve_ivp

from .errors import ConvergenceFailure, NumericalError, ValidationError
from .series import (
    MapSeries,
    TruncatedSeries,
    compose_maps,
    identity_map,
    invert_near_identity,
    linear_map,
    map_residual,
    solve_linear,
)

__all__ = [
    "NormalFormResult",
    "normal_form_reduce",
    "companion_normalize",
    "linear_invariants",
    "time_one_map",
    "flow_linear_data",
    "FlowInterpolation",
    "flow_interpolate",
    "return_family",
    "TuneResult",
    "conservative_tune",
    "EllipticReport",
    "elliptic_check",
    "first_integral",
]

EPS_LIMIT = 1.0


def _map_order(F: MapSeries) -> int:
    return min(F[0].order, F[1].order)


def _truncate_map(F: MapSeries, order: int) -> MapSeries:
    return F[0].truncate(order), F[1].truncate(order)


def linear_invariants(F: MapSeries):
    """(eps1, eps2) of the linear part: trace = 2 + eps1, det = 1 + eps1 - eps2."""
    a, b = F[0].coeff(1, 0), F[0].coeff(0, 1)
    c, d = F[1].coeff(1, 0), F[1].coeff(0, 1)
    tr = a + d
    det = a * d - b * c
    return tr - 2, tr - 1 - det


def companion_normalize(F: MapSeries) -> tuple[MapSeries, MapSeries]:
    """Linear change w = (a - 1) u + b v putting the linear part in companion form.

    Returns (conjugated map, change of variables). The conjugated map has
    linear part [[1, 1], [eps2, 1 + eps1]].
    """
    if F[0].coeff(0, 0) != 0 or F[1].coeff(0, 0) != 0:
        raise ValidationError("map must fix the origin", field="constant_term")
    a, b = F[0].coeff(1, 0), F[0].coeff(0, 1)
    if a == 1 and b == 1:
        return F, identity_map(_map_order(F))
    if b == 0:
        raise ValidationError("first component does not depend linearly on v", field="linear_part")
    order = _map_order(F)
    one = Fraction(1) if isinstance(b, (int, Fraction)) else mpmath.mpf(1)
    P = linear_map(order, [[one, 0], [a - 1, b]])
    Pinv = linear_map(order, [[one, 0], [(1 - a) / b, one / b]])
    G = compose_maps(P, compose_maps(F, Pinv))
    # the first row is u + v up to rounding; store it exactly
    first = dict(G[0].coeffs)
    first[(1, 0)] = first[(0, 1)] = one
    return (TruncatedSeries(order, first), G[1]), P


def _check_linear_part(F: MapSeries):
    if F[0].coeff(0, 0) != 0 or F[1].coeff(0, 0) != 0:
        raise ValidationError("map must fix the origin", field="constant_term")
    if F[0].coeff(1, 0) != 1 or F[0].coeff(0, 1) != 1:
        raise ValidationError("first component must start with u + v", field="linear_part")
    eps1 = F[1].coeff(0, 1) - 1
    eps2 = F[1].coeff(1, 0)
    if abs(eps1) >= EPS_LIMIT or abs(eps2) >= EPS_LIMIT:
        raise ValidationError(f"linear part too far from the unipotent block (eps = {eps1}, {eps2})",
                              field="linear_part", eps1=float(eps1), eps2=float(eps2))
    return eps1, eps2


@dataclass
class NormalFormResult:
    """Reduced map, the change of variables old -> new, and its exact residual."""

    normal_form: MapSeries
    transform: MapSeries
    order: int
    eps1: object
    eps2: object
    amplitudes: dict = field(default_factory=dict)

    def phi(self, i: int, j: int):
        """Coefficient of u^i z^j (i + j >= 2) in the second component."""
        return self.normal_form[1].coeff(i, j)

    def residual(self, F: MapSeries) -> MapSeries:
        """transform o F - normal_form o transform (zero through ``order``)."""
        left = compose_maps(self.transform, F)
        right = compose_maps(self.normal_form, self.transform)
        return map_residual(left, right)


def _shear_step(G: MapSeries, n: int, amps: Sequence) -> MapSeries:
    """The change (u, z) -> (U, U o G - U) with U = u + sum A_l u^(n-l) z^l."""
    order = _map_order(G)
    U = TruncatedSeries.u(order)
    for l, a in enumerate(amps):
        if a != 0:
            U = U + TruncatedSeries.monomial(order, n - l, l, a)
    Z = U.compose(*G) - U
    return U, Z


def _conjugate(T: MapSeries, G: MapSeries) -> MapSeries:
    return compose_maps(T, compose_maps(G, invert_near_identity(T)))


def to_mpf(x):
    """mpmath number from int, float, Fraction or mpf."""
    if isinstance(x, Fraction):
        return mpmath.mpf(x.numerator) / x.denominator
    return mpmath.mpf(x)


def _map_to_mpf(F: MapSeries) -> MapSeries:
    return F[0].map_coeffs(to_mpf), F[1].map_coeffs(to_mpf)


def _unit(value):
    return Fraction(1) if isinstance(value, (int, Fraction)) else mpmath.mpf(1)


def normal_form_reduce(F: MapSeries, order: int | None = None) -> NormalFormResult:
    """Remove every u^i z^j term with j >= 2 from the second component.

    ``F`` must have linear part [[1, 1], [eps2, 1 + eps1]] with |eps| < 1.
    The reduction first passes to z = u' - u, then for each degree n solves a
    linear system for the shear amplitudes A_0..A_{n-2}; the system matrix is
    assembled from unit perturbations so it is exact for any eps.
    """
    order = _map_order(F) if order is None else int(order)
    if order < 1:
        raise ValidationError("order must be at least 1", field="order")
    F = _truncate_map(F, order)
    eps1, eps2 = _check_linear_part(F)
    exact = all(isinstance(c, (int, Fraction)) for comp in F for c in comp.coeffs.values())
    one = Fraction(1) if exact else mpmath.mpf(1)

    u = TruncatedSeries.u(order)
    Q = (u, F[0] - u)
    G = _conjugate(Q, F)
    transform = Q
    amplitudes = {}
    for n in range(2, order + 1):
        Gn = _truncate_map(G, n)
        targets = [(n - j, j) for j in range(2, n + 1)]
        base = _conjugate(_shear_step(Gn, n, []), Gn)
        base_vals = [base[1].coeff(*t) for t in targets]
        if all(v == 0 for v in base_vals):
            continue
        columns = []
        for l in range(n - 1):
            amps = [0] * (n - 1)
            amps[l] = one
            probe = _conjugate(_shear_step(Gn, n, amps), Gn)
            columns.append([probe[1].coeff(*t) - b for t, b in zip(targets, base_vals)])
        matrix = [[columns[l][r] for l in range(n - 1)] for r in range(n - 1)]
        amps = solve_linear(matrix, [-b for b in base_vals])
        T = _shear_step(G, n, amps)
        G = _conjugate(T, G)
        transform = compose_maps(T, transform)
        amplitudes[n] = amps
    return NormalFormResult(G, transform, order, eps1, eps2, amplitudes)


# flow interpolation

def _lie_derivative(h: TruncatedSeries, field_: MapSeries) -> TruncatedSeries:
    return h.diff(0) * field_[0] + h.diff(1) * field_[1]


def flow_field(psi0: Sequence, psi1: Sequence, order: int) -> MapSeries:
    """The field (v, psi0(u) + v psi1(u)) as truncated series."""
    p0 = TruncatedSeries.in_u(order, psi0)
    p1 = TruncatedSeries.in_u(order, psi1)
    return TruncatedSeries.v(order), p0 + TruncatedSeries.v(order) * p1


def time_one_map(psi0: Sequence, psi1: Sequence, order: int, tol=None, max_terms: int = 400) -> MapSeries:
    """Taylor series of the time-1 map, summed as the Lie series sum L^k(id)/k!.

    For a nilpotent linear part the sum terminates; otherwise terms are added
    until they fall below ``tol`` (default: the working mpmath precision).
    """
    X = flow_field(psi0, psi1, order)
    out = []
    if tol is None:
        tol = mpmath.mpf(10) ** (-mpmath.mp.dps)
    for coord in identity_map(order):
        total = coord
        term = coord
        for k in range(1, max_terms + 1):
            term = _lie_derivative(term, X) / k
            if term.is_zero():
                break
            total = total + term
            if term.max_abs() < tol and all(not isinstance(c, (int, Fraction)) for c in term.coeffs.values()):
                break
        else:
            raise ConvergenceFailure("Lie series of the time-1 map did not converge", terms=max_terms)
        out.append(total)
    return out[0], out[1]


def flow_linear_data(eps1, eps2) -> tuple:
    """(psi0'(0), psi1(0)) making the flow's time-1 linear part similar to [[1, 1], [eps2, 1 + eps1]].

    The flow eigenvalues are logarithms of the map eigenvalues
    1 + eps1/2 +- sqrt(eps2 + eps1^2/4); complex pairs are handled with the
    principal branch and the (real) symmetric functions are returned.
    """
    if eps1 == 0 and eps2 == 0:
        return Fraction(0), Fraction(0)
    e1, e2 = to_mpf(eps1), to_mpf(eps2)
    root = mpmath.sqrt(mpmath.mpc(e2 + e1 ** 2 / 4))
    lp = mpmath.log(1 + e1 / 2 + root)
    lm = mpmath.log(1 + e1 / 2 - root)
    return mpmath.re(-lp * lm), mpmath.log(1 + e1 - e2)


def _reduced_pair(time1: MapSeries, order: int) -> NormalFormResult:
    G, _ = companion_normalize(time1)
    return normal_form_reduce(G, order)


@dataclass
class FlowInterpolation:
    """psi0, psi1 coefficient lists (index = power of u) and the match check."""

    psi0: list
    psi1: list
    eps1: object
    eps2: object
    order: int
    target: NormalFormResult
    matched: NormalFormResult

    def mismatch(self) -> float:
        """Largest coefficient difference between the two reduced maps."""
        diff = map_residual(self.target.normal_form, self.matched.normal_form)
        return max(diff[0].max_abs(), diff[1].max_abs())


def flow_interpolate(F: MapSeries, order: int | None = None, eps: tuple | None = None) -> FlowInterpolation:
    """Find psi0, psi1 whose time-1 map has the same normal form as ``F`` through ``order``.

    ``F`` may have any linear part with companion invariants |eps| < 1; it is
    brought to companion form first. If ``eps`` is given it must match the
    invariants of the linear part.
    """
    order = _map_order(F) if order is None else int(order)
    F = _truncate_map(F, order)
    eps1, eps2 = linear_invariants(F)
    if eps is not None and (abs(eps[0] - eps1) > 1e-12 or abs(eps[1] - eps2) > 1e-12):
        raise ValidationError("given eps does not match the linear part", field="eps",
                              expected=[float(eps1), float(eps2)])
    lin0, lin1 = flow_linear_data(eps1, eps2)
    exact = all(isinstance(c, (int, Fraction)) for comp in F for c in comp.coeffs.values())
    if not (exact and isinstance(lin0, Fraction)):
        F = _map_to_mpf(F)
        lin0, lin1 = to_mpf(lin0), to_mpf(lin1)
    target = _reduced_pair(F, order)
    zero = lin0 * 0
    psi0 = [zero] * (order + 1)
    psi1 = [zero] * (order + 1)
    psi0[1], psi1[0] = lin0, lin1
    one = _unit(lin0)
    for n in range(2, order + 1):
        goal = [target.normal_form[1].coeff(n, 0), target.normal_form[1].coeff(n - 1, 1)]

        def reduced(p0, p1):
            nf = _reduced_pair(time_one_map(p0, p1, n), n).normal_form[1]
            return [nf.coeff(n, 0), nf.coeff(n - 1, 1)]

        base = reduced(psi0, psi1)
        probe0 = list(psi0)
        probe0[n] = one
        probe1 = list(psi1)
        probe1[n - 1] = one
        c0 = [a - b for a, b in zip(reduced(probe0, psi1), base)]
        c1 = [a - b for a, b in zip(reduced(psi0, probe1), base)]
        sol = solve_linear([[c0[0], c1[0]], [c0[1], c1[1]]], [g - b for g, b in zip(goal, base)])
        psi0[n], psi1[n - 1] = sol
    matched = _reduced_pair(time_one_map(psi0, psi1, order), order)
    return FlowInterpolation(psi0[:order + 1], psi1[:order], eps1, eps2, order, target, matched)


# conservative tuning

def return_family(ehat: Sequence, kappa=0, order: int = 3) -> MapSeries:
    """Shifted return map with B = 1 in (u, v) = (X, Y - X) coordinates.

    u' = u + v, v' = v + sum_s ehat[s-1] (u + v)^s + kappa u (u + v); the kappa
    term stands in for the O(|XY| + X^2) corrections of a finite return map.
    """
    u = TruncatedSeries.u(order)
    v = TruncatedSeries.v(order)
    w = u + v
    second = v + u * w * kappa
    for s, e in enumerate(ehat, start=1):
        second = second + (w ** s) * e
    return w, second


@dataclass
class TuneResult:
    """Tuned parameters, the sign s and Psi coefficients (index = power of u)."""

    ehat: list
    s: int
    psi0: list
    psi1: list
    Psi: list
    residual: list
    iterations: int
    kappa: float

    def max_residual(self) -> float:
        return max((abs(float(r)) for r in self.residual), default=0.0)


def _tune_residual(ehat, kappa, m, s):
    interp = flow_interpolate(return_family(ehat, kappa, m + 1), m + 1)
    res = [interp.psi0[i] - s * interp.psi1[i] for i in range(1, m + 1)]
    return res, interp


def conservative_tune(m: int, kappa=0.5, ehat0: Sequence | None = None, tol: float = 1e-12,
                      max_iter: int = 30, dps: int = 40) -> TuneResult:
    """Newton on ehat_1..ehat_m so that psi0 = s psi1 through degree m.

    s = 1 if psi1'(0) <= 0 and -1 otherwise, evaluated at the solution; the
    conservative nonlinearity is Psi(u) = -psi1(s u).
    """
    if not 1 <= m <= 4:
        raise ValidationError("tangency order must be in 1..4", field="m")
    with mpmath.workdps(dps):
        kap = mpmath.mpf(kappa)
        e = [mpmath.mpf(x) for x in (ehat0 if ehat0 is not None else [0] * m)]
        if len(e) != m:
            raise ValidationError("need one starting value per parameter", field="ehat0")
        _, interp = _tune_residual(e, kap, m, 1)
        s = 1 if interp.psi1[1] <= 0 else -1
        h = mpmath.mpf(10) ** (-(dps // 2))
        for flip in range(2):
            it = 0
            while True:
                res, interp = _tune_residual(e, kap, m, s)
                if max(abs(r) for r in res) < tol:
                    break
                if it >= max_iter:
                    raise ConvergenceFailure("conservative tuning did not converge",
                                             residual=[float(r) for r in res], ehat=[float(x) for x in e])
                jac = []
                for k in range(m):
                    ek = list(e)
                    ek[k] += h
                    rk, _ = _tune_residual(ek, kap, m, s)
                    jac.append([(a - b) / h for a, b in zip(rk, res)])
                matrix = [[jac[k][r] for k in range(m)] for r in range(m)]
                step = solve_linear(matrix, [-r for r in res])
                e = [x + dx for x, dx in zip(e, step)]
                it += 1
            if (interp.psi1[1] <= 0) == (s == 1):
                break
            s = -s
        Psi = [-interp.psi1[i] * s ** i for i in range(m + 1)]
        return TuneResult(
            ehat=[float(x) for x in e], s=s,
            psi0=[float(x) for x in interp.psi0], psi1=[float(x) for x in interp.psi1],
            Psi=[float(x) for x in Psi], residual=[float(r) for r in res],
            iterations=it, kappa=float(kappa),
        )


# elliptic verification

def first_integral(Psi: Sequence[float], u, v):
    """H(u, v) = int_0^u Psi + v - ln(1 + v)."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    V = sum(c * u ** (i + 1) / (i + 1) for i, c in enumerate(Psi))
    return V + v - np.log1p(v)


def _separatrix_level(Psi: Sequence[float]) -> float:
    """Energy of the nearest other equilibrium on the u-axis (inf if none)."""
    roots = np.roots(list(reversed([float(c) for c in Psi]))) if len(Psi) > 1 else []
    real = [r.real for r in np.atleast_1d(roots) if abs(r.imag) < 1e-12 and abs(r.real) > 1e-12]
    levels = [float(first_integral(Psi, r, 0.0)) for r in real]
    return min(levels, default=np.inf)


@dataclass
class EllipticReport:
    """Energy drift of the time-1 map and the multipliers at the origin."""

    step_drift: float
    total_drift: float
    multipliers: list
    iterations: int
    points: list
    drift_curve: list
    tol_step: float = 1e-8
    tol_total: float = 1e-6
    tol_multiplier: float = 1e-6

    @property
    def multiplier_defect(self) -> float:
        return max(abs(abs(complex(m)) - 1) for m in self.multipliers)

    @property
    def passed(self) -> bool:
        return (self.step_drift < self.tol_step and self.total_drift < self.tol_total
                and self.multiplier_defect < self.tol_multiplier)


def elliptic_check(Psi: Sequence[float], iterations: int = 10_000, radius: float = 0.1,
                   n_points: int = 4, rtol: float = 1e-11, atol: float = 1e-13) -> EllipticReport:
    """Iterate the time-1 map of u' = v, v' = -Psi(u)(1 + v) and track H.

    Sample points lie on a circle of the given radius, shrunk if necessary so
    their energy stays below a quarter of the separatrix level. Multipliers
    come from the variational equation over unit time.
    """
    Psi = [float(c) for c in Psi]
    if len(Psi) < 2 or Psi[0] != 0:
        raise ValidationError("Psi must vanish at 0", field="Psi")
    if Psi[1] <= 0:
        raise ValidationError("Psi'(0) must be positive for a centre", field="Psi")
    angles = 2 * np.pi * (np.arange(n_points) + 0.5) / n_points
    r = radius
    level = _separatrix_level(Psi)
    while True:
        pts = np.stack([r * np.cos(angles), r * np.sin(angles)], axis=1)
        if np.all(first_integral(Psi, pts[:, 0], pts[:, 1]) < 0.25 * level):
            break
        r *= 0.5
    times = np.arange(iterations + 1, dtype=float)
    k = len(pts)

    def stacked(t, y):
        u, v = y[:k], y[k:]
        return np.concatenate([v, -np.polyval(coeffs, u) * (1 + v)])

    coeffs = np.array(Psi, dtype=float)[::-1]
    sol = solve_ivp(stacked, (0.0, float(iterations)), np.concatenate([pts[:, 0], pts[:, 1]]),
                    method="DOP853", t_eval=times, rtol=rtol, atol=atol)
    if not sol.success or sol.y.shape[1] != iterations + 1:
        raise NumericalError("integration of the conservative flow failed", message_detail=sol.message)
    H = first_integral(Psi, sol.y[:k], sol.y[k:])
    dev = np.abs(H - H[:, :1])
    step = float(np.max(np.abs(np.diff(H, axis=1))))
    total = float(dev.max())
    curve = np.maximum.accumulate(dev.max(axis=0))
    a = Psi[1]

    def variational(t, y):
        return [y[2], y[3], -a * y[0], -a * y[1]]

    sol = solve_ivp(variational, (0.0, 1.0), [1.0, 0.0, 0.0, 1.0], method="DOP853", rtol=1e-13, atol=1e-15)
    M = sol.y[:, -1].reshape(2, 2)
    mult = np.linalg.eigvals(M)
    stride = max(1, iterations // 100)
    return EllipticReport(step, total, [complex(x) for x in mult], iterations, pts.tolist(),
                          curve[::stride].tolist())
