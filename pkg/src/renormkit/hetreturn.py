"""First-return maps near a heteroclinic cycle of two planar saddles.

The cycle is P -> Q (transverse connection) and Q -> P (tangency of order m).
Near each saddle the k-th iterate is handled in cross-form: given the
incoming x and the outgoing y, return the outgoing x and the incoming y.
The global transitions are affine except for the tangency term. The return
map on the strip near P is evaluated in mpmath (the scales involved span
dozens of decades), shifted and rescaled so that it tends to the Hénon-type
map (X, Y) -> (Y, -B X + sum E_s Y^s + d Y^(m+1)).

Normal-form, flow-interpolation and conservative-tuning tools for the
rescaled map live in ``normalform`` and are re-exported here.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, replace
from fractions import Fraction
from typing import Callable, Sequence

import mpmath
import numpy as np

from .errors import ConvergenceFailure, DomainViolation, ValidationError
from .normalform import (
    EllipticReport,
    FlowInterpolation,
    NormalFormResult,
    TuneResult,
    conservative_tune,
    elliptic_check,
    first_integral,
    flow_interpolate,
    normal_form_reduce,
    return_family,
    time_one_map,
)
from .series import TruncatedSeries

__all__ = [
    "SaddleModel",
    "TransitionMaps",
    "RescaledParams",
    "TruncatedSeries",
    "shipped_saddles",
    "shipped_transitions",
    "local_power",
    "local_step",
    "size_ordering_report",
    "ReturnMap",
    "first_return",
    "find_fixed_point",
    "brute_force_fixed_point",
    "RescaledReturn",
    "rescale_return",
    "limit_map",
    "ConvergenceRow",
    "convergence_sweep",
    "write_convergence_csv",
    "NormalFormResult",
    "normal_form_reduce",
    "FlowInterpolation",
    "flow_interpolate",
    "time_one_map",
    "return_family",
    "TuneResult",
    "conservative_tune",
    "EllipticReport",
    "elliptic_check",
    "first_integral",
]


# local maps

@dataclass(frozen=True)
class SaddleModel:
    """Multipliers of the two saddles and the strength of an optional test remainder.

    With ``remainder = 0`` the local maps are linear. Otherwise the one-step
    map near saddle j is (x, y) -> (lam x (1 + r x y), gam y (1 + r x y)); it
    keeps both axes invariant and its cross-form corrections are relatively
    small, as the local normal-form coordinates require.
    """

    lam1: float
    gam1: float
    lam2: float
    gam2: float
    remainder: float = 0.0

    @property
    def J1(self) -> float:
        return abs(self.lam1 * self.gam1)

    @property
    def J2(self) -> float:
        return abs(self.lam2 * self.gam2)

    def multipliers(self, j: int) -> tuple[float, float]:
        if j not in (1, 2):
            raise ValidationError("saddle index must be 1 or 2", field="j")
        return (self.lam1, self.gam1) if j == 1 else (self.lam2, self.gam2)

    def theta(self) -> float:
        """|ln J2 / ln J1|."""
        return abs(math.log(self.J2) / math.log(self.J1))

    def tc_margin(self) -> float:
        """ln|lam1| ln|lam2| - ln|gam1| ln|gam2| (positive when the ordering condition holds)."""
        return (math.log(abs(self.lam1)) * math.log(abs(self.lam2))
                - math.log(abs(self.gam1)) * math.log(abs(self.gam2)))

    def validate(self) -> "SaddleModel":
        for name in ("lam1", "lam2"):
            if not 0 < abs(getattr(self, name)) < 1:
                raise ValidationError(f"{name} must satisfy 0 < |{name}| < 1", field=name)
        for name in ("gam1", "gam2"):
            if not abs(getattr(self, name)) > 1:
                raise ValidationError(f"{name} must satisfy |{name}| > 1", field=name)
        if not self.J1 < 1:
            raise ValidationError("saddle value J1 must be below 1", field="J1")
        if not self.J2 > 1:
            raise ValidationError("saddle value J2 must exceed 1", field="J2")
        if not self.tc_margin() > 0:
            raise ValidationError("need ln|gam1| ln|gam2| < ln|lam1| ln|lam2|", field="multipliers")
        return self

    def with_theta(self, theta: float) -> "SaddleModel":
        """Adjust gam2 (lam2 fixed) so that ln J2 = theta |ln J1|."""
        J2 = self.J1 ** (-theta)
        return replace(self, gam2=math.copysign(J2 / abs(self.lam2), self.gam2))


def shipped_saddles(remainder: float = 0.0) -> SaddleModel:
    """lam1 = 1/8, gam1 = 2 (J1 = 1/4); lam2 = 1/4, gam2 = 8 (J2 = 2); theta = 1/2."""
    return SaddleModel(0.125, 2.0, 0.25, 8.0, remainder)


def local_step(model: SaddleModel, j: int, x, y):
    """One application of the local map near saddle j."""
    lam, gam = model.multipliers(j)
    g = 1 + model.remainder * x * y
    return lam * x * g, gam * y * g


def local_power(model: SaddleModel, j: int, k: int, x0, yk, tol: float = 1e-30,
                max_sweeps: int = 200):
    """Cross-form of the k-th iterate: (x0, y_k) -> (x_k, y_0).

    Linear model: closed form. With a remainder: alternating sweeps, forward
    in x (x_{i+1} from x_i, y_i) and backward in y (y_i from y_{i+1}, x_i),
    until the orbit stops changing. The sweep is a contraction on small boxes.
    """
    if k < 0:
        raise ValidationError("k must be non-negative", field="k")
    lam, gam = model.multipliers(j)
    if k == 0:
        return x0, yk
    if model.remainder == 0:
        return lam ** k * x0, yk / gam ** k
    r = model.remainder
    xs = [x0 * lam ** i for i in range(k + 1)]
    ys = [yk / gam ** (k - i) for i in range(k + 1)]
    scale = abs(x0) + abs(yk) + 1e-300
    for _ in range(max_sweeps):
        old_x, old_y = xs[-1], ys[0]
        for i in range(k - 1, -1, -1):
            ys[i] = ys[i + 1] / (gam * (1 + r * xs[i] * ys[i]))
        for i in range(k):
            xs[i + 1] = lam * xs[i] * (1 + r * xs[i] * ys[i])
        if not (abs(xs[-1]) < 1e3 * scale and abs(ys[0]) < 1e3 * scale):
            raise ConvergenceFailure("cross-form sweep diverged: box too large", x0=float(x0), yk=float(yk))
        change = abs(xs[-1] - old_x) + abs(ys[0] - old_y)
        if change <= tol * (abs(xs[-1]) + abs(ys[0]) + tol):
            return xs[-1], ys[0]
    raise ConvergenceFailure("cross-form sweep did not converge: box too large", x0=float(x0), yk=float(yk))


# global transitions

@dataclass(frozen=True)
class TransitionMaps:
    """Coefficients of the transverse (P -> Q) and tangential (Q -> P) transitions.

    P -> Q near (0, y1m): x2 - x2p = a1 x1 + b1 (y1 - y1m), y2 = c1 x1 + d1 (y1 - y1m).
    Q -> P near (0, y2m): x1 - x1p = a2 x2 + b2 w,
    y1 = c2 x2 + sum_s mu[s] w^s + d2 w^(m+1), with w = y2 - y2m.
    """

    a1: float
    b1: float
    c1: float
    d1: float
    x2p: float
    y1m: float
    a2: float
    b2: float
    c2: float
    d2: float
    x1p: float
    y2m: float
    m: int = 1
    mu: tuple = ()

    @property
    def D(self) -> float:
        return self.a1 * self.d1 - self.b1 * self.c1

    @property
    def d(self) -> float:
        """Coefficient of Y^(m+1) in the limit map."""
        return self.d2 * self.d1 ** (self.m + 1)

    def validate(self) -> "TransitionMaps":
        if self.m < 1:
            raise ValidationError("tangency order m must be at least 1", field="m")
        if self.d1 == 0:
            raise ValidationError("d1 must be nonzero (transversality)", field="d1")
        if not self.D > 0:
            raise ValidationError("D = a1 d1 - b1 c1 must be positive", field="D")
        if self.d2 == 0:
            raise ValidationError("d2 must be nonzero", field="d2")
        if not self.b2 * self.c2 < 0:
            raise ValidationError("need b2 c2 < 0 (orientation)", field="b2c2")
        if self.mu and len(self.mu) != self.m:
            raise ValidationError("need m unfolding parameters mu_0..mu_{m-1}", field="mu")
        return self

    def with_mu(self, mu: Sequence) -> "TransitionMaps":
        return replace(self, mu=tuple(mu))


def shipped_transitions(m: int = 1) -> TransitionMaps:
    """D = 3/4, b2 c2 = -1, d1 = d2 = 1 so the limit coefficient d is 1."""
    return TransitionMaps(a1=1.0, b1=0.5, c1=0.5, d1=1.0, x2p=0.5, y1m=0.5,
                          a2=0.5, b2=1.0, c2=-1.0, d2=1.0, x1p=0.5, y2m=0.5,
                          m=m, mu=(0.0,) * m)


def _even_pair(k2: int, theta0: Fraction) -> tuple[int, int]:
    k1 = Fraction(theta0) * k2
    if k1.denominator != 1:
        raise ValidationError(f"k1 = theta0 k2 is not an integer for k2 = {k2}", field="k2")
    k1 = int(k1)
    if k1 % 2 or k2 % 2 or k1 <= 0:
        raise ValidationError(f"k1 = {k1}, k2 = {k2} must be positive and even", field="k2")
    return k1, k2


def size_ordering_report(model: SaddleModel, k2: int, theta0: Fraction = Fraction(1, 2)) -> dict:
    """Sizes gam2^-k2, lam1^k1, gam1^-k1, lam2^k2 and their consecutive ratios.

    ``ordering[i]`` is True when the i-th ratio is below 1. With k1 = theta0 k2
    the third ratio is below 1 exactly when ln|gam1| ln|gam2| > ln|lam1| ln|lam2|;
    ``third_predicted`` records that algebraic prediction.
    """
    k1, k2 = _even_pair(k2, theta0)
    q = [abs(model.gam2) ** -k2, abs(model.lam1) ** k1, abs(model.gam1) ** -k1, abs(model.lam2) ** k2]
    ratios = [q[i] / q[i + 1] for i in range(3)]
    return {
        "k1": k1, "k2": k2, "sizes": q, "ratios": ratios,
        "ordering": [r < 1 for r in ratios],
        "third_predicted": model.tc_margin() < 0,
    }


# first return

def _working_dps(model: SaddleModel, k1: int, k2: int, m: int) -> int:
    digits = k1 * math.log10(abs(model.gam1)) + k2 * math.log10(abs(model.gam2))
    return 30 + int(math.ceil(digits * (1 + 1 / m)))


def _solve_outgoing(model: SaddleModel, j: int, k: int, x0, y0_target):
    """y_k with local_power(x0, y_k)[1] = y0_target (Newton / secant in mpmath)."""
    lam, gam = model.multipliers(j)
    guess = y0_target * mpmath.mpf(gam) ** k
    if model.remainder == 0:
        return guess
    if abs(guess) > 10:
        raise DomainViolation("orbit leaves the neighbourhood of the saddle", factor=f"T0{j}^{k}",
                              point=[float(x0), float(y0_target)])
    tol = mpmath.mpf(10) ** (-(mpmath.mp.dps - 10))

    def g(y):
        return (local_power(model, j, k, x0, y, tol=tol)[1] - y0_target) * mpmath.mpf(gam) ** k

    try:
        return mpmath.findroot(g, guess, tol=tol ** 2 * (1 + abs(guess)) ** 2)
    except (ValueError, ZeroDivisionError) as exc:
        raise ConvergenceFailure("cross-form Newton failed", x0=float(x0), target=float(y0_target)) from exc


@dataclass
class ReturnMap:
    """T21 T02^k2 T12 T01^k1 on the strip near P, in strip offsets.

    A point is (p, q) with p = x_{1,0} - x1p and q = y_{1,k1} - y1m, where
    y_{1,k1} is the y-coordinate after k1 steps near P (the cross-form
    variable, which stays O(1) on the strip).
    """

    saddles: SaddleModel
    transitions: TransitionMaps
    k1: int
    k2: int
    dps: int
    strip: float = 0.5

    def __call__(self, p, q, check: bool = True):
        s, t = self.saddles, self.transitions
        with mpmath.workdps(self.dps):
            p, q = mpmath.mpf(p), mpmath.mpf(q)
            if check and (abs(p) > self.strip or abs(q) > self.strip):
                raise DomainViolation("point outside the strip", factor="first_return",
                                      point=[float(p), float(q)])
            x1k, _ = local_power(s, 1, self.k1, t.x1p + p, t.y1m + q)
            x20 = t.x2p + t.a1 * x1k + t.b1 * q
            y20 = t.c1 * x1k + t.d1 * q
            y2k = _solve_outgoing(s, 2, self.k2, x20, y20)
            x2k, _ = local_power(s, 2, self.k2, x20, y2k)
            w = y2k - t.y2m
            x1 = t.x1p + t.a2 * x2k + t.b2 * w
            y1 = t.c2 * x2k + sum(mu * w ** i for i, mu in enumerate(t.mu)) + t.d2 * w ** (t.m + 1)
            y1k = _solve_outgoing(s, 1, self.k1, x1, y1)
            return x1 - t.x1p, y1k - t.y1m

    def displacement(self, p, q):
        pb, qb = self(p, q, check=False)
        return pb - p, qb - q


def first_return(saddles: SaddleModel, transitions: TransitionMaps, k2: int,
                 theta0: Fraction = Fraction(1, 2), dps: int | None = None, strip: float = 0.5) -> ReturnMap:
    """Return map for k1 = theta0 k2 iterates near P and k2 near Q (both even)."""
    saddles.validate()
    transitions.validate()
    k1, k2 = _even_pair(k2, theta0)
    if dps is None:
        dps = _working_dps(saddles, k1, k2, transitions.m)
    if len(transitions.mu) != transitions.m:
        transitions = transitions.with_mu((0.0,) * transitions.m)
    return ReturnMap(saddles, transitions, k1, k2, dps, strip)


def _jacobian(fn, z, h):
    f0 = fn(*z)
    cols = []
    for i in range(2):
        zi = list(z)
        zi[i] += h[i]
        fi = fn(*zi)
        cols.append([(a - b) / h[i] for a, b in zip(fi, f0)])
    return f0, mpmath.matrix([[cols[0][0], cols[1][0]], [cols[0][1], cols[1][1]]])


def find_fixed_point(ret: ReturnMap, seed=(0.0, 0.0), tol: float = 1e-12, max_iter: int = 100):
    """Damped Newton on the displacement, seeded at the strip centre by default."""
    with mpmath.workdps(ret.dps):
        z = [mpmath.mpf(seed[0]), mpmath.mpf(seed[1])]
        h = mpmath.mpf(10) ** (-(ret.dps // 3))
        for it in range(max_iter):
            f0, J = _jacobian(ret.displacement, z, (h, h))
            norm0 = max(abs(f0[0]), abs(f0[1]))
            if norm0 < tol:
                return (float(z[0]), float(z[1])), it
            step = mpmath.lu_solve(J, mpmath.matrix([-f0[0], -f0[1]]))
            lam = mpmath.mpf(1)
            while lam > 1e-8:
                trial = [z[0] + lam * step[0], z[1] + lam * step[1]]
                ft = ret.displacement(*trial)
                if max(abs(ft[0]), abs(ft[1])) < norm0:
                    z = trial
                    break
                lam /= 2
            else:
                break
        raise ConvergenceFailure("fixed-point Newton failed", point=[float(z[0]), float(z[1])])


def _q_from_w(ret: ReturnMap, p, w, sweeps: int = 60):
    """Strip offset q whose orbit reaches y_{2,k2} = y2m + w (fixed-point iteration in q)."""
    s, t = ret.saddles, ret.transitions
    q = mpmath.mpf(0)
    for _ in range(sweeps):
        x1k, _ = local_power(s, 1, ret.k1, t.x1p + p, t.y1m + q)
        x20 = t.x2p + t.a1 * x1k + t.b1 * q
        _, y20 = local_power(s, 2, ret.k2, x20, t.y2m + w)
        new = (y20 - t.c1 * x1k) / t.d1
        if new == q:
            break
        q = new
    return q


def brute_force_fixed_point(ret: ReturnMap, box: float | None = None, n: int = 41, levels: int = 45,
                            shrink: float = 0.5, centre=(0.0, 0.0)):
    """Zooming grid search for the minimum of |displacement| (no derivatives).

    The return map stretches q by roughly gam1^k1 gam2^k2, so the grid is laid
    out in (p, w), w = y_{2,k2} - y2m being the tangency coordinate in which
    the map is O(1)-Lipschitz; q is recovered from w along the orbit. Each
    level evaluates an n x n grid and recentres a ``shrink`` times smaller box
    on the best point; ``centre`` is the initial (p, w). Returns the final
    (p, q) and its displacement norm.
    """
    box = ret.strip if box is None else box
    centre = np.array(centre, dtype=float)
    half = box
    with mpmath.workdps(ret.dps):
        best = None
        for _ in range(levels):
            best = None
            for p in centre[0] + np.linspace(-half, half, n):
                for w in centre[1] + np.linspace(-half, half, n):
                    pm = mpmath.mpf(p)
                    q = _q_from_w(ret, pm, mpmath.mpf(w))
                    d = ret.displacement(pm, q)
                    val = float(max(abs(d[0]), abs(d[1])))
                    if best is None or val < best[0]:
                        best = (val, p, w, q)
            centre = np.array(best[1:3])
            half *= shrink
        return (float(best[1]), float(best[3])), best[0]


# rescaling

@dataclass
class RescaledParams:
    """Parameters of the limit map and the even iterate counts realizing them."""

    B: float
    E: tuple
    theta0: Fraction
    k1: int
    k2: int
    d: float

    def validate(self) -> "RescaledParams":
        if not self.B > 0:
            raise ValidationError("B must be positive", field="B")
        if self.k1 % 2 or self.k2 % 2:
            raise ValidationError("k1 and k2 must be even", field="k2")
        if Fraction(self.k1, self.k2) != self.theta0:
            raise ValidationError("k1 / k2 must equal theta0", field="k1")
        return self


def limit_map(B: float, E: Sequence[float], d: float) -> Callable:
    """(X, Y) -> (Y, -B X + sum_s E[s] Y^s + d Y^(m+1)) with m = len(E)."""
    m = len(E)

    def F(X, Y):
        return Y, -B * X + sum(e * Y ** s for s, e in enumerate(E)) + d * Y ** (m + 1)

    return F


@dataclass
class RescaledReturn:
    """The return map in (X, Y) coordinates together with its limit."""

    ret: ReturnMap
    params: RescaledParams
    mu: tuple
    constants: dict
    saddles: SaddleModel

    def _to_strip(self, X, Y):
        c = self.constants
        t = self.ret.transitions
        p = -c["C1"] + t.b2 * t.d1 * c["s"] * X
        x1k = c["L1"] * (t.x1p + p)
        q = c["s"] * Y / c["G2"] - c["K1"] - t.c1 * x1k / t.d1
        return p, q

    def _from_strip(self, p, q):
        c = self.constants
        t = self.ret.transitions
        X = (p + c["C1"]) / (t.b2 * t.d1 * c["s"])
        x1k = c["L1"] * (t.x1p + p)
        Y = (q + t.c1 * x1k / t.d1 + c["K1"]) * c["G2"] / c["s"]
        return X, Y

    def __call__(self, X, Y):
        with mpmath.workdps(self.ret.dps):
            p, q = self._to_strip(mpmath.mpf(X), mpmath.mpf(Y))
            pb, qb = self.ret(p, q, check=False)
            return self._from_strip(pb, qb)

    def limit(self, X, Y):
        return limit_map(self.params.B, self.params.E, self.params.d)(X, Y)

    def closed_form(self, X, Y):
        """Exact rescaled map of the linear model, written out by hand."""
        c = self.constants
        t = self.ret.transitions
        B, E, d = self.params.B, self.params.E, self.params.d
        with mpmath.workdps(self.ret.dps):
            X, Y = mpmath.mpf(X), mpmath.mpf(Y)
            X2 = X + t.b1 * Y / (c["G2"] * t.D * t.b2 * c["L1"])
            Xb = Y + t.a2 * t.D * c["L2"] * c["L1"] * X2 / t.d1
            extra = t.c1 * t.a2 * t.b2 * t.D * c["L1"] ** 2 * c["L2"] * c["G2"] / t.d1
            Yb = (-B * X2 + extra * X2 + sum(e * Y ** s for s, e in enumerate(E)) + d * Y ** (t.m + 1))
            return Xb, Yb

    def distance(self, resolution: int = 21) -> float:
        """Sup over a grid on [-1, 1]^2 of the distance to the limit map."""
        grid = np.linspace(-1.0, 1.0, resolution)
        worst = 0.0
        for X in grid:
            for Y in grid:
                a = self(X, Y)
                b = self.limit(X, Y)
                worst = max(worst, float(abs(a[0] - b[0])), float(abs(a[1] - b[1])))
        return worst


def rescale_return(saddles: SaddleModel, transitions: TransitionMaps, k2: int, B: float,
                   E: Sequence[float], theta0: Fraction = Fraction(1, 2), dps: int | None = None) -> RescaledReturn:
    """Choose gam2 and mu so the rescaled return map tends to the limit map with (B, E).

    gam2 is tuned so that J1^k1 J2^k2 = -B / (D b2 c2); the unfolding
    parameters mu are set from E; the strip is shifted by the constants C1,
    C2, K1, K2 that put the reference orbit at the origin and remove the
    linear term in the tangency coordinate; then X, Y are scaled by
    s = gam1^(-k1/m) gam2^(-k2/m).
    """
    saddles.validate()
    transitions.validate()
    m = transitions.m
    E = tuple(float(e) for e in E)
    if len(E) != m:
        raise ValidationError(f"need m = {m} values E_0..E_(m-1)", field="E")
    if not B > 0:
        raise ValidationError("B must be positive", field="B")
    theta0 = Fraction(theta0)
    if abs(saddles.theta() - float(theta0)) > 1e-12:
        raise ValidationError("saddle values do not give theta = theta0", field="theta0",
                              theta=saddles.theta())
    k1, k2 = _even_pair(k2, theta0)
    t = transitions
    if saddles.remainder != 0:
        raise ValidationError("rescaling constants are derived for the linear local model",
                              field="remainder")
    theta = float(theta0) + math.log(-B / (t.D * t.b2 * t.c2)) / (k2 * abs(math.log(saddles.J1)))
    tuned = saddles.with_theta(theta)
    if dps is None:
        dps = _working_dps(tuned, k1, k2, m)
    with mpmath.workdps(dps):
        mp = mpmath.mpf
        lam1, gam1 = mp(tuned.lam1), mp(tuned.gam1)
        J1 = abs(lam1 * gam1)
        J2 = J1 ** (-(mp(theta0.numerator) / theta0.denominator + mpmath.log(mp(-B) / (mp(t.D) * t.b2 * t.c2))
                       / (k2 * abs(mpmath.log(J1)))))
        lam2 = mp(tuned.lam2)
        gam2 = mpmath.sign(tuned.gam2) * J2 / abs(lam2)
        L1, G1 = lam1 ** k1, gam1 ** k1
        L2, G2 = lam2 ** k2, gam2 ** k2
        s = (G1 * G2) ** (mp(-1) / m)
        S = 1 / s
        rho = t.c1 * t.b2 * L1 / (G1 * t.d1)
        K2 = rho / (2 * t.d2) if m == 1 else mp(0)
        K1 = (K2 - t.y2m) / (G2 * t.d1)
        alpha = t.a2 * L2
        beta = t.D * L1 / t.d1
        C1 = (-alpha * t.x2p - alpha * beta * t.x1p + alpha * t.b1 * K1 + t.b2 * K2) / (1 - alpha * beta)
        C2 = -beta * t.x1p + beta * C1 + t.b1 * K1
        c0 = t.c2 * L2 * (t.x2p - C2) + (-t.y1m + t.c1 * L1 * (t.x1p - C1) / t.d1 + K1) / G1
        mu_t = [mp(E[j]) * mp(t.d1) ** (-j) * S ** (-(m + 1 - j)) for j in range(m)]
        mu = list(mu_t)
        mu[0] = mu_t[0] - c0 - (t.d2 * K2 ** 2 if m == 1 else 0)
        if m >= 2:
            mu[1] = mu_t[1] - rho
        model = replace(tuned, gam2=gam2)
        ret = ReturnMap(model, t.with_mu(tuple(mu)), k1, k2, dps)
        constants = {"s": s, "S": S, "L1": L1, "G1": G1, "L2": L2, "G2": G2, "rho": rho,
                     "K1": K1, "K2": K2, "C1": C1, "C2": C2, "c0": c0, "theta": theta}
    params = RescaledParams(B, E, theta0, k1, k2, t.d).validate()
    return RescaledReturn(ret, params, tuple(mu), constants, tuned)


@dataclass
class ConvergenceRow:
    """One line of the convergence table with the parameters that produced it."""

    m: int
    k1: int
    k2: int
    B: float
    E: str
    theta0: str
    distance: float
    closed_form_gap: float


def convergence_sweep(saddles: SaddleModel | None = None, m: int = 1, k2_values: Sequence[int] = (8, 16, 24),
                      B: float = 1.0, E: Sequence[float] | None = None, theta0: Fraction = Fraction(1, 2),
                      resolution: int = 21) -> list[ConvergenceRow]:
    """Sup-distance between the rescaled return map and its limit for each k2."""
    saddles = saddles or shipped_saddles()
    E = tuple(E) if E is not None else (0.0,) * m
    rows = []
    for k2 in k2_values:
        rr = rescale_return(saddles, shipped_transitions(m), k2, B, E, theta0)
        gap = 0.0
        for X, Y in ((0.3, -0.7), (-1.0, 1.0), (0.9, 0.2)):
            a, b = rr(X, Y), rr.closed_form(X, Y)
            gap = max(gap, float(abs(a[0] - b[0])), float(abs(a[1] - b[1])))
        rows.append(ConvergenceRow(m, rr.params.k1, k2, B, " ".join(repr(e) for e in E), str(theta0),
                                   rr.distance(resolution), gap))
    return rows


def write_convergence_csv(rows: Sequence[ConvergenceRow], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(asdict(rows[0]).keys()) if rows else ["m"])
        writer.writeheader()
        for row in rows:
            writer.writerow(asdict(row))
