"""Planar block flow whose renormalized iterations approximate a given map.

The flow lives in six unit-width blocks strung along the x1 axis: two
saddle-node blocks U_{j+}, U_{j-} and one linear saddle block V_j for
j = 1, 2.  Inside the blocks the time-t maps are explicit; between blocks
only the transition time and the Poincaré map are prescribed.  Perturbing
the time-delta map near a few homoclinic points makes one round near the
saddle act, in rescaled coordinates, as a chosen Hénon map

    (v1, v2) -> (v2, -v1 + sum_nu h_nu v2^nu),

so a long orbit segment reproduces

    Phi0 ∘ H_{2,q2-1} ∘ .. ∘ H_{21} ∘ Psi2 ∘ Phi0 ∘ H_{1,q1-1} ∘ .. ∘ H_{11} ∘ Psi1

up to O(eta(m)).  Every block map below is the closed form of an exact
iterate count of the time-delta map, so nothing is integrated step by step.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

from .errors import ConvergenceFailure, DomainViolation, NumericalError, ValidationError
from .mapcore import SampleGrid

__all__ = [
    "bump",
    "FlowConstants",
    "alpha_beta",
    "solve_mu",
    "solve_gamma_k",
    "SchemeParameters",
    "build_scheme",
    "BlockMaps",
    "single_block_rescaled",
    "block_error",
    "target_map",
    "assemble_renormalized",
    "target_defined",
    "AssemblyResult",
    "cross_validate_block",
    "verify_sweep",
    "write_verification_csv",
    "dump_scheme",
    "load_scheme",
    "targets_from_composition",
]


# ---------------------------------------------------------------------------
# bump function and block constants


def bump(z) -> np.ndarray:
    """C-infinity bump exp(1 - 1/(1 - 4 z^2)) on |z| < 1/2, zero elsewhere."""
    z = np.asarray(z, dtype=float)
    out = np.zeros_like(z)
    inside = np.abs(z) < 0.5
    w = 1.0 - 4.0 * z[inside] ** 2
    out[inside] = np.exp(1.0 - 1.0 / w)
    return out


def _one_minus_bump(z: float) -> float:
    """1 - bump(z) without cancellation near z = 0."""
    if abs(z) >= 0.5:
        return 1.0
    w = 1.0 - 4.0 * z * z
    return -math.expm1(-4.0 * z * z / w)


@dataclass(frozen=True)
class FlowConstants:
    """Block anchors on the x1 axis, strip half-height R and time step delta.

    Anchors follow a1+ = a1- + 3 = b1 + 6 = a2+ + 9 = a2- + 12 = b2 + 15.
    """

    delta: float = 0.05
    b2: float = 0.0
    R: float = 1.0

    def __post_init__(self):
        if not self.delta > 0:
            raise ValidationError("delta must be positive", field="delta")
        N = 1.0 / self.delta
        if abs(N - round(N)) > 1e-9:
            raise ValidationError("1/delta must be an integer", field="delta")
        if not self.R > 0:
            raise ValidationError("R must be positive", field="R")

    @property
    def N(self) -> int:
        return int(round(1.0 / self.delta))

    def a(self, j: int, sigma: int) -> float:
        """Centre of U_{j,sigma}."""
        base = self.b2 + 15.0
        offsets = {(1, 1): 0.0, (1, -1): 3.0, (2, 1): 9.0, (2, -1): 12.0}
        return base - offsets[(j, sigma)]

    def b(self, j: int) -> float:
        """Centre of V_j (the saddle sits at (b_j, 0))."""
        return self.b2 + (9.0 if j == 1 else 0.0)

    def anchors(self) -> dict[str, float]:
        return {"a1+": self.a(1, 1), "a1-": self.a(1, -1), "b1": self.b(1),
                "a2+": self.a(2, 1), "a2-": self.a(2, -1), "b2": self.b(2)}


# ---------------------------------------------------------------------------
# saddle-node block integrals


@lru_cache(maxsize=4096)
def _integrals(mu: float) -> tuple[float, float]:
    def den(z):
        return mu + (1.0 - mu) * _one_minus_bump(z)

    def f_alpha(z):
        return float(bump(z)) / den(z)

    def f_time(z):
        return 1.0 / den(z)

    out = []
    for f in (f_alpha, f_time):
        val, err, info = integrate.quad(f, -0.5, 0.5, points=[0.0], epsabs=1e-11, epsrel=1e-13,
                                        limit=400, full_output=True)[:3]
        if err > 1e-10:
            raise ConvergenceFailure("block integral did not reach 1e-10; use a larger mu",
                                     mu=mu, estimate=err)
        out.append(val)
    return out[0], out[1]


def alpha_beta(mu: float) -> tuple[float, float]:
    """(alpha, beta): log-expansion and extra transit time of a saddle-node block."""
    mu = float(mu)
    if not 0.0 < mu <= 1.0:
        raise ValidationError("mu must lie in (0, 1]", field="mu")
    a, t = _integrals(mu)
    return a, 2.0 * (t - 1.0)


def _bisect_log_mu(func: Callable[[float], float], target: float, mu_min: float,
                   tol: float, what: str) -> float:
    """Solve func(mu) = target for decreasing-in-mu func by bisection in log mu."""
    lo, hi = math.log(mu_min), 0.0
    f_lo = func(mu_min)
    if f_lo < target:
        raise NumericalError(f"{what} target {target:.6g} beyond reach at mu = {mu_min:g}",
                             target=target)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        val = func(math.exp(mid))
        if abs(val - target) < tol:
            return math.exp(mid)
        if val > target:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-15:
            break
    mu = math.exp(0.5 * (lo + hi))
    if abs(func(mu) - target) >= tol:
        raise ConvergenceFailure(f"bisection for {what} stalled", target=target, mu=mu)
    return mu


def _beta_target(k: int, u_last: float, delta: float) -> float:
    return k * delta - 5.0 + 1.5 * delta + math.log(abs(u_last))


def solve_mu(k: int, u: float, delta: float, mu_min: float = 1e-7) -> float:
    """mu with beta(mu) = k delta - 5 + 3 delta / 2 + ln|u|.

    The extra transit time beta of the two saddle-node blocks must absorb the
    k time steps spent between the entry and exit sections.
    """
    target = _beta_target(k, u, delta)
    if target < 0:
        raise NumericalError("k too small: required beta is negative", field="k", k=k,
                             target=target)
    if target == 0:
        return 1.0
    return _bisect_log_mu(lambda m: alpha_beta(m)[1], target, mu_min, 1e-10, "beta")


def solve_gamma_k(m: float, eta: float, delta: float, u_last: Sequence[float],
                  mu_min: float = 1e-7) -> tuple[tuple[float, float], int, tuple[float, float]]:
    """Smallest k with alpha(mu_j(k)) >= m - ln eta for both j, and gamma_j.

    ``u_last[j-1]`` is the last homoclinic point coordinate of block 3-j.
    Returns ((gamma_1, gamma_2), k, (mu_1, mu_2)) with
    eta e^{-m} = exp(-gamma_j alpha(mu_j)).
    """
    A = m - math.log(eta)
    if A <= 0:
        raise ValidationError("m - ln(eta) must be positive", field="m")
    if alpha_beta(1.0)[0] >= A:
        mu_a = 1.0
    else:
        mu_a = _bisect_log_mu(lambda x: alpha_beta(x)[0], A, mu_min, 1e-12, "alpha")
    beta_needed = alpha_beta(mu_a)[1]
    k = 0
    for u in u_last:
        need = (beta_needed + 5.0 - 1.5 * delta - math.log(abs(u))) / delta
        k = max(k, int(math.ceil(need - 1e-12)))
    while True:  # at most one extra step, from rounding at the bisection tolerance
        mus = [solve_mu(k, u, delta, mu_min) for u in u_last]
        alphas = [alpha_beta(mu)[0] for mu in mus]
        if min(alphas) >= A:
            break
        k += 1
    gammas = [A / a for a in alphas]
    return (gammas[0], gammas[1]), k, (mus[0], mus[1])


# ---------------------------------------------------------------------------
# scheme parameters


def _as_targets(targets) -> tuple[tuple[np.ndarray, ...], tuple[np.ndarray, ...]]:
    if len(targets) != 2:
        raise ValidationError("targets must hold two lists of Hénon coefficient vectors",
                              field="targets")
    out = []
    for j, group in enumerate(targets, start=1):
        vecs = []
        for s, h in enumerate(group, start=1):
            h = np.atleast_1d(np.asarray(h, dtype=float))
            if h.ndim != 1 or not np.all(np.isfinite(h)):
                raise ValidationError(f"target h[{j}][{s}] must be a finite coefficient vector",
                                      field="targets")
            vecs.append(h)
        out.append(tuple(vecs))
    return out[0], out[1]


@dataclass
class SchemeParameters:
    """Every constant, point and solved parameter of the block construction.

    Per-block arrays are indexed by s - 1.  Block j has q_j homoclinic points
    u_{j1..jq_j}; the first q_j - 1 carry Hénon targets h_{js}, the last one
    (negative, fixed by the l_j condition) leads to the exit towards block 3-j.
    """

    constants: FlowConstants
    K: float
    m: float
    d: int
    eta: float
    q: tuple[int, int]
    h: tuple[tuple[np.ndarray, ...], tuple[np.ndarray, ...]]
    u: tuple[np.ndarray, np.ndarray]
    z: tuple[np.ndarray, np.ndarray]
    C: tuple[np.ndarray, np.ndarray]
    l: tuple[int, int]
    zp: tuple[np.ndarray, np.ndarray]
    up: tuple[np.ndarray, np.ndarray]
    eps: tuple[np.ndarray, np.ndarray]
    mu: tuple[float, float]
    gamma: tuple[float, float]
    k: int
    alpha: tuple[float, float] = field(default=(0.0, 0.0))
    beta: tuple[float, float] = field(default=(0.0, 0.0))

    @property
    def delta(self) -> float:
        return self.constants.delta

    @property
    def N(self) -> int:
        return self.constants.N

    def iterate_count(self) -> int:
        """Number of time-delta steps in one renormalized iteration."""
        N, m = self.N, int(round(self.m))
        total = 0
        for j in (1, 2):
            total += (self.k + self.l[j - 1] + 2 * (N + 1) + (self.q[j - 1] - 1) * (m * N + N + 1)
                      + m * N)
        return total

    def residuals(self) -> dict[str, float]:
        """Substitute-back residuals of every defining relation."""
        dl = self.delta
        out = {"homoclinic_z": 0.0, "entry_z": 0.0, "contraction_C": 0.0, "entry_C": 0.0,
               "henon_eps": 0.0, "exit_shift_l": 0.0, "rescaled_points": 0.0, "beta_mu": 0.0,
               "alpha_gamma": 0.0}
        for j in (1, 2):
            i = j - 1
            b = self.constants.b(j)
            u, z, C = self.u[i], self.z[i], self.C[i]
            q = self.q[i]
            out["entry_z"] = max(out["entry_z"], abs(z[0] - (b + math.exp(-dl / 2))))
            out["entry_C"] = max(out["entry_C"], abs(C[0] - math.exp(-dl / 2)))
            for s in range(q - 1):
                out["homoclinic_z"] = max(out["homoclinic_z"], abs(z[s + 1] - (b - math.exp(-dl) / u[s])))
                out["contraction_C"] = max(out["contraction_C"],
                                   abs(C[s + 1] - 1.0 / (math.exp(dl) * u[s] ** 2 * C[s])))
                for nu, hv in enumerate(self.h[i][s]):
                    want = (hv * math.exp(-self.m) * self.eta ** (1 - nu) / C[s + 1]
                            * C[s] ** nu)
                    got = self.eps[i][s, nu]
                    scale = max(abs(want), 1e-300)
                    out["henon_eps"] = max(out["henon_eps"], abs(got - want) / scale if want else abs(got))
            out["exit_shift_l"] = max(out["exit_shift_l"],
                               abs(math.log(abs(u[q - 1])) + math.log(C[q - 1]) - self.l[i] * dl))
            for s in range(q):
                shift = self.m + (self.l[i] * dl if s == q - 1 else 0.0)
                out["rescaled_points"] = max(out["rescaled_points"], abs(self.zp[i][s] - math.exp(-shift) * u[s]),
                                   abs(self.up[i][s] - (b + math.exp(-shift) * (z[s] - b))))
            u_other = self.u[1 - i][self.q[1 - i] - 1]
            out["beta_mu"] = max(out["beta_mu"],
                              abs(self.beta[i] - _beta_target(self.k, u_other, dl)))
            out["alpha_gamma"] = max(out["alpha_gamma"],
                               abs(math.log(self.eta) - self.m + self.gamma[i] * self.alpha[i]))
        return out


def default_points(q: int, delta: float) -> np.ndarray:
    """q - 1 equally spaced homoclinic coordinates inside (e^{-delta/2}, e^{-0.9 delta})."""
    lo, hi = math.exp(-delta / 2), math.exp(-0.9 * delta)
    return np.array([lo + (hi - lo) * s / q for s in range(1, q)], dtype=float)


def build_scheme(targets, delta: float = 0.05, m: float = 8.0, K: float = 1.0,
                 d: int | None = None, R: float | None = None,
                 points: Sequence[Sequence[float]] | None = None,
                 grid: SampleGrid | None = None) -> SchemeParameters:
    """Solve all parameters of the construction for Hénon targets and m.

    ``targets = (h_1, h_2)`` with ``h_j`` a list of q_j - 1 coefficient vectors
    (h_{js0}, .., h_{jsd}).  eta(m) = exp(-m / (2 d)).  R defaults to a
    strip covering the images of ``grid`` (default: unit disk) along the chain.
    """
    h1, h2 = _as_targets(targets)
    if not m > 0:
        raise ValidationError("m must be positive", field="m")
    if not K > 0:
        raise ValidationError("K must be positive", field="K")
    if d is None:
        d = max([1] + [len(h) - 1 for h in h1 + h2])
    if d < 1 or any(len(h) - 1 > d for h in h1 + h2):
        raise ValidationError("degree bound d must be >= 1 and cover every target", field="d")
    consts = FlowConstants(delta=delta, R=R if R is not None else 1.0)
    eta = math.exp(-m / (2.0 * d))
    hs = (h1, h2)
    q = (len(h1) + 1, len(h2) + 1)
    us, zs, Cs, ls, zps, ups, epss = [], [], [], [], [], [], []
    for j in (1, 2):
        i = j - 1
        b = consts.b(j)
        if points is not None:
            pos = np.asarray(points[i], dtype=float)
            if pos.shape != (q[i] - 1,) or np.any(pos < math.exp(-delta)) or np.any(pos >= 1):
                raise ValidationError(f"points[{i}] must hold q_j - 1 values in [e^-delta, 1)",
                                      field="points")
            if len(np.unique(pos)) != len(pos):
                raise ValidationError("homoclinic points must be distinct", field="points")
        else:
            pos = default_points(q[i], delta)
        z = np.empty(q[i])
        C = np.empty(q[i])
        z[0] = b + math.exp(-delta / 2)
        C[0] = math.exp(-delta / 2)
        for s in range(q[i] - 1):
            z[s + 1] = b - math.exp(-delta) / pos[s]
            C[s + 1] = 1.0 / (math.exp(delta) * pos[s] ** 2 * C[s])
        x = math.log(C[-1]) / delta
        l_j = int(math.ceil(x)) - 1
        u_last = -math.exp(l_j * delta - math.log(C[-1]))
        u = np.append(pos, u_last)
        zp = np.empty(q[i])
        up = np.empty(q[i])
        for s in range(q[i]):
            shift = m + (l_j * delta if s == q[i] - 1 else 0.0)
            zp[s] = math.exp(-shift) * u[s]
            up[s] = b + math.exp(-shift) * (z[s] - b)
        eps = np.zeros((q[i] - 1, d + 1))
        for s in range(q[i] - 1):
            for nu, hv in enumerate(hs[i][s]):
                eps[s, nu] = hv * math.exp(-m) * eta ** (1 - nu) / C[s + 1] * C[s] ** nu
        us.append(u)
        zs.append(z)
        Cs.append(C)
        ls.append(l_j)
        zps.append(zp)
        ups.append(up)
        epss.append(eps)
    u_last = (us[1][-1], us[0][-1])  # block j uses the exit point of block 3-j
    gammas, k, mus = solve_gamma_k(m, eta, delta, u_last)
    ab = [alpha_beta(mu) for mu in mus]
    scheme = SchemeParameters(
        constants=consts, K=float(K), m=float(m), d=int(d), eta=eta, q=q,
        h=hs, u=(us[0], us[1]), z=(zs[0], zs[1]), C=(Cs[0], Cs[1]), l=(ls[0], ls[1]),
        zp=(zps[0], zps[1]), up=(ups[0], ups[1]), eps=(epss[0], epss[1]),
        mu=mus, gamma=gammas, k=k, alpha=(ab[0][0], ab[1][0]), beta=(ab[0][1], ab[1][1]))
    if R is None:
        scheme.constants = FlowConstants(delta=delta, b2=consts.b2,
                                         R=_strip_height(scheme, grid))
    return scheme


def _strip_height(scheme: SchemeParameters, grid: SampleGrid | None) -> float:
    """Half-height covering the v2 ranges entering and leaving both Psi factors.

    A factor 2 leaves room for the O(eta) drift of the realized chain.
    """
    pts = (grid or SampleGrid.ball(2, 21)).points
    stages = _target_stages(scheme, pts)
    vals = [np.abs(st[:, 1]) for st in stages if np.all(np.isfinite(st))]
    top = max(float(np.max(v)) for v in vals) if vals else 1.0
    return 2.0 * max(1.0, top)


# ---------------------------------------------------------------------------
# target map in rescaled coordinates


def _henon(h: np.ndarray, v: np.ndarray) -> np.ndarray:
    out = np.empty_like(v)
    out[:, 0] = v[:, 1]
    out[:, 1] = -v[:, 0] + np.polynomial.polynomial.polyval(v[:, 1], h)
    return out


def _phi0(v: np.ndarray) -> np.ndarray:
    return np.stack([v[:, 1], -v[:, 0]], axis=1)


def _psi(j: int, K: float, v: np.ndarray) -> np.ndarray:
    out = v.copy()
    if j == 1:
        out[:, 1] = np.exp(K * v[:, 1])
    else:
        with np.errstate(invalid="ignore", divide="ignore"):
            out[:, 1] = np.where(v[:, 1] > 0, np.log(np.where(v[:, 1] > 0, v[:, 1], 1.0)), np.nan)
    return out


def _target_stages(scheme: SchemeParameters, v: np.ndarray) -> list[np.ndarray]:
    """Inputs and outputs of Psi1 and Psi2 along the target chain."""
    v = np.asarray(v, dtype=float)
    stages = [v]
    w = _psi(1, scheme.K, v)
    stages.append(w)
    for h in scheme.h[0]:
        w = _henon(h, w)
    w = _phi0(w)
    stages.append(w)
    w = _psi(2, scheme.K, w)
    stages.append(w)
    return stages


def target_defined(scheme: SchemeParameters, grid: SampleGrid | None = None) -> bool:
    """True when the target chain is finite at every grid point."""
    pts = (grid or SampleGrid.ball(2, 41)).points
    return all(bool(np.all(np.isfinite(st))) for st in _target_stages(scheme, pts))


def target_map(scheme: SchemeParameters) -> Callable[[np.ndarray], np.ndarray]:
    """Phi0 ∘ H_{2,*} ∘ Psi2 ∘ Phi0 ∘ H_{1,*} ∘ Psi1 in rescaled coordinates."""

    def f(v):
        v = np.atleast_2d(np.asarray(v, dtype=float))
        w = _psi(1, scheme.K, v)
        for h in scheme.h[0]:
            w = _henon(h, w)
        w = _psi(2, scheme.K, _phi0(w))
        for h in scheme.h[1]:
            w = _henon(h, w)
        return _phi0(w)

    return f


# ---------------------------------------------------------------------------
# closed-form block maps


def _violation(block: str, mask: np.ndarray, x: np.ndarray):
    if np.any(mask):
        i = int(np.flatnonzero(mask)[0])
        raise DomainViolation(f"point left the validity strip of block {block}", factor=block,
                              point=x[i].tolist())


class BlockMaps:
    """Time-t maps of the block flow and their perturbed versions (x-coordinates).

    Unperturbed maps take the time t; perturbed ones are the (N+1)-step maps
    near the homoclinic points.  ``check`` enables strip-validity tests.
    The V_j strip carries a collar of width ``COLLAR``: at finite m the chart
    around P'_{j1} reaches slightly beyond the entry section x1 = b_j + 1,
    where the closed forms continue the linear flow (exact by additivity of
    flight times).
    """

    COLLAR = 0.5

    def __init__(self, scheme: SchemeParameters, check: bool = True):
        self.p = scheme
        self.c = scheme.constants
        self.check = check

    # unperturbed flow maps
    def S(self, j: int, t: float, x: np.ndarray) -> np.ndarray:
        """Through U_{j+}, the Psi_j transition, and U_{j-}."""
        i = j - 1
        ga = self.p.gamma[i] * self.p.alpha[i]
        y = math.exp(ga) * x[:, 1]
        if self.check:
            off = x[:, 0] - self.c.a(j, 1)
            bad = (off < 0.5) | (off > 1.5) | (np.abs(y) > self.c.R)
            if j == 2:
                bad |= y <= 0
            _violation(f"S{j}", bad, x)
        out = np.empty_like(x)
        out[:, 0] = x[:, 0] - t + self.p.beta[i]
        if j == 1:
            out[:, 1] = math.exp(-ga) * np.exp(self.p.K * y)
        else:
            out[:, 1] = math.exp(-ga) * np.log(y)
        return out

    def L(self, j: int, t: float, x: np.ndarray) -> np.ndarray:
        """Linear saddle flow in V_j."""
        b = self.c.b(j)
        if self.check:
            _violation(f"L{j}", np.abs(x[:, 0] - b) > 1.0 + self.COLLAR, x)
        out = np.empty_like(x)
        out[:, 0] = b + math.exp(-t) * (x[:, 0] - b)
        out[:, 1] = math.exp(t) * x[:, 1]
        return out

    def Q(self, j: int, t: float, x: np.ndarray) -> np.ndarray:
        """From the exit of U_{j-} into the entrance of V_j."""
        b, a = self.c.b(j), self.c.a(j, -1)
        e = t - x[:, 0] - 2.0 + a
        return np.stack([b + np.exp(-e), np.exp(e) * x[:, 1]], axis=1)

    def T(self, j: int, t: float, x: np.ndarray) -> np.ndarray:
        """Homoclinic excursion from the top of V_j back to its left side."""
        b = self.c.b(j)
        return np.stack([b - math.exp(-(t - 1.0)) / x[:, 1],
                         -math.exp(t - 1.0) * x[:, 1] ** 2 * (x[:, 0] - b)], axis=1)

    def G(self, j: int, t: float, x: np.ndarray) -> np.ndarray:
        """From the bottom of V_j to the entrance of U_{3-j,+}."""
        b, a = self.c.b(j), self.c.a(3 - j, 1)
        return np.stack([a + 2.0 - t - np.log(np.abs(x[:, 1])),
                         -(x[:, 0] - b) * np.abs(x[:, 1])], axis=1)

    # perturbed (N+1)-step maps
    def T_tilde(self, j: int, s: int, x: np.ndarray, zp_next=None, up=None, eps=None,
                u=None) -> np.ndarray:
        """Perturbed homoclinic map near M'_{js} (s is 1-based, s <= q_j - 1)."""
        i = j - 1
        b = self.c.b(j)
        dl = self.c.delta
        zp_next = self.p.zp[i][s] if zp_next is None else zp_next
        up = self.p.up[i][s - 1] if up is None else up
        eps = self.p.eps[i][s - 1] if eps is None else np.asarray(eps, dtype=float)
        u = self.p.u[i][s - 1] if u is None else u
        if self.check:
            _violation(f"T{j},{s}", (x[:, 1] <= 0) | (np.abs(x[:, 0] - b) > 1.0 + self.COLLAR), x)
        out = np.empty_like(x)
        out[:, 0] = b - math.exp(-dl) / x[:, 1]
        out[:, 1] = (zp_next - math.exp(dl) * x[:, 1] ** 2 * (x[:, 0] - up)
                     + np.polynomial.polynomial.polyval(x[:, 1] - u, eps))
        return out

    def G_tilde(self, j: int, x: np.ndarray, up_last=None) -> np.ndarray:
        """Perturbed exit map near M'_{jq_j}."""
        i = j - 1
        a = self.c.a(3 - j, 1)
        up_last = self.p.up[i][-1] if up_last is None else up_last
        if self.check:
            _violation(f"G{j}", (x[:, 1] >= 0) | (np.abs(x[:, 0] - self.c.b(j)) > 1.0 + self.COLLAR),
                       x)
        return np.stack([a + 1.0 - self.c.delta - np.log(np.abs(x[:, 1])),
                         -np.abs(x[:, 1]) * (x[:, 0] - up_last)], axis=1)

    def Q_tilde(self, j: int, x: np.ndarray, zp_first=None) -> np.ndarray:
        """Perturbed entry map near M'_{j0}; lands on P'_{j1}."""
        i = j - 1
        b, a = self.c.b(j), self.c.a(j, -1)
        zp_first = self.p.zp[i][0] if zp_first is None else zp_first
        if self.check:
            _violation(f"Q{j}", np.abs(x[:, 0] - (a - 1.0)) > 0.5, x)
        e = self.c.delta - x[:, 0] - 1.0 + a
        return np.stack([b + np.exp(-e), np.exp(e) * x[:, 1] + zp_first], axis=1)

    # rescaling charts: to_x(v) and to_v(x)
    def chart_P(self, j: int, s: int):
        """Coordinates near P'_{js} (s is 1-based)."""
        i = j - 1
        z, zp, C = self.p.z[i][s - 1], self.p.zp[i][s - 1], self.p.C[i][s - 1]
        eta, em = self.p.eta, math.exp(-self.p.m)

        def to_x(v):
            return np.stack([z + C * eta * v[:, 0], zp + eta * em * v[:, 1] / C], axis=1)

        def to_v(x):
            return np.stack([(x[:, 0] - z) / (C * eta), (x[:, 1] - zp) * C / (eta * em)], axis=1)

        return to_x, to_v

    def chart_M_last(self, j: int):
        """Coordinates near M'_{jq_j}."""
        i = j - 1
        u, up = self.p.u[i][-1], self.p.up[i][-1]
        eta, em = self.p.eta, math.exp(-self.p.m)

        def to_x(v):
            return np.stack([up + eta * em * v[:, 0] / abs(u), u - u * eta * v[:, 1]], axis=1)

        def to_v(x):
            return np.stack([(x[:, 0] - up) * abs(u) / (eta * em), (u - x[:, 1]) / (u * eta)],
                            axis=1)

        return to_x, to_v

    def chart_P0(self, j: int):
        """Coordinates near P'_{j0}, the entry point of U_{j+}."""
        u_other = self.p.u[2 - j][-1]
        x0 = self.c.a(j, 1) + 1.0 - self.c.delta - math.log(abs(u_other))
        return self._axis_chart(x0)

    def chart_M0(self, j: int):
        """Coordinates near M'_{j0}, the exit point of U_{j-}."""
        return self._axis_chart(self.c.a(j, -1) - 1.0 + self.c.delta / 2)

    def _axis_chart(self, x0: float):
        eta, em = self.p.eta, math.exp(-self.p.m)

        def to_x(v):
            return np.stack([x0 + eta * v[:, 0], eta * em * v[:, 1]], axis=1)

        def to_v(x):
            return np.stack([(x[:, 0] - x0) / eta, x[:, 1] / (eta * em)], axis=1)

        return to_x, to_v

    # composite pieces in x-coordinates
    def round_trip(self, j: int, s: int, x: np.ndarray) -> np.ndarray:
        """T~_{j,1+delta} ∘ L_{jm}: one homoclinic round from near P'_{js}."""
        return self.T_tilde(j, s, self.L(j, self.p.m, x))

    def half_chain(self, j: int, x: np.ndarray) -> np.ndarray:
        """G~ ∘ L_{m + l delta} ∘ (T~ ∘ L_m)^{q_j - 1} ∘ Q~ ∘ S_{k delta} for block j."""
        i = j - 1
        x = self.S(j, self.p.k * self.c.delta, x)
        x = self.Q_tilde(j, x)
        for s in range(1, self.p.q[i]):
            x = self.round_trip(j, s, x)
        x = self.L(j, self.p.m + self.p.l[i] * self.c.delta, x)
        return self.G_tilde(j, x)


def single_block_rescaled(scheme: SchemeParameters, j: int, s: int,
                          check: bool = True) -> Callable[[np.ndarray], np.ndarray]:
    """One homoclinic round T~ ∘ L_m seen in the rescaled charts at P'_{js}, P'_{j,s+1}."""
    if not 1 <= s <= scheme.q[j - 1] - 1:
        raise ValidationError(f"block {j} has Hénon rounds s = 1..{scheme.q[j - 1] - 1}",
                              field="s")
    bm = BlockMaps(scheme, check)
    to_x, _ = bm.chart_P(j, s)
    _, to_v = bm.chart_P(j, s + 1)

    def f(v):
        v = np.atleast_2d(np.asarray(v, dtype=float))
        return to_v(bm.round_trip(j, s, to_x(v)))

    return f


def block_error(scheme: SchemeParameters, j: int, s: int, grid: SampleGrid | None = None) -> float:
    """Sup distance on the unit disk between a rescaled round and its Hénon target."""
    pts = (grid or SampleGrid.ball(2, 41)).points
    got = single_block_rescaled(scheme, j, s)(pts)
    want = _henon(scheme.h[j - 1][s - 1], pts)
    return float(np.max(np.linalg.norm(got - want, axis=1)))


@dataclass
class AssemblyResult:
    """Renormalized iteration, its target, and their C0 distance on the grid."""

    scheme: SchemeParameters
    map: Callable[[np.ndarray], np.ndarray]
    target: Callable[[np.ndarray], np.ndarray]
    error: float
    iterates: int


def assemble_renormalized(scheme: SchemeParameters, grid: SampleGrid | None = None,
                          check: bool = True) -> AssemblyResult:
    """The full orbit segment through both halves, read in the chart at P'_{10}.

    Points are carried in x-coordinates through the closed-form block maps;
    a point leaving a block's validity strip raises ``DomainViolation``.
    """
    bm = BlockMaps(scheme, check)
    to_x, to_v = bm.chart_P0(1)

    def renormalized(v):
        v = np.atleast_2d(np.asarray(v, dtype=float))
        x = to_x(v)
        x = bm.half_chain(1, x)
        x = bm.half_chain(2, x)
        return to_v(x)

    target = target_map(scheme)
    pts = (grid or SampleGrid.ball(2, 41)).points
    err = float(np.max(np.linalg.norm(renormalized(pts) - target(pts), axis=1)))
    return AssemblyResult(scheme, renormalized, target, err, scheme.iterate_count())


# ---------------------------------------------------------------------------
# direct integration of the in-block fields


@dataclass
class CrossCheckRow:
    check: str
    j: int
    closed_form: float
    integrated: float
    discrepancy: float
    passed: bool


def _saddle_node_field(mu: float, gamma: float, a: float, sigma: int):
    def rhs(t, x):
        z = x[0] - a
        xi = float(bump(z))
        return [-mu - (1.0 - mu) * _one_minus_bump(z), sigma * gamma * x[1] * xi]

    return rhs


def cross_validate_block(scheme: SchemeParameters | None = None, m: float = 6.0,
                         tol: float = 1e-8) -> list[CrossCheckRow]:
    """Integrate the explicit in-block fields and compare with the closed forms.

    Checks the transit time and x2 multiplier across U_{j,+-} and the linear
    saddle flow in V_j.  Inter-block Poincaré maps are definitions and are
    not integrated.
    """
    if scheme is None:
        scheme = build_scheme(([], []), m=m)
    if scheme.m > 12:
        raise ValidationError("direct integration is limited to m <= 12", field="m")
    from scipy.integrate import solve_ivp

    rows: list[CrossCheckRow] = []
    c = scheme.constants

    def add(name, j, want, got):
        disc = abs(want - got) / max(1.0, abs(want))
        rows.append(CrossCheckRow(name, j, float(want), float(got), float(disc), bool(disc <= tol)))

    for j in (1, 2):
        i = j - 1
        mu, gamma = scheme.mu[i], scheme.gamma[i]
        alpha, beta = scheme.alpha[i], scheme.beta[i]
        for sigma in (1, -1):
            a = c.a(j, sigma)
            rhs = _saddle_node_field(mu, gamma, a, sigma)
            exit_event = lambda t, x: x[0] - (a - 1.0)  # noqa: E731
            exit_event.terminal = True
            exit_event.direction = -1
            x0 = [a + 1.0, 1e-3]
            sol = solve_ivp(rhs, (0.0, 10.0 * (2.0 + beta) + 10.0), x0, method="DOP853",
                            rtol=1e-13, atol=1e-15, events=exit_event)
            if sol.status != 1:
                raise ConvergenceFailure("trajectory did not cross the block", block=f"U{j}")
            t_exit = float(sol.t_events[0][0])
            x_exit = sol.y_events[0][0]
            label = "+" if sigma > 0 else "-"
            add(f"transit_time_U{j}{label}", j, 2.0 + beta / 2.0, t_exit)
            add(f"x2_multiplier_U{j}{label}", j, math.exp(sigma * gamma * alpha), x_exit[1] / x0[1])
        # linear saddle: closed form versus integration, and t = 0
        b = c.b(j)
        bm = BlockMaps(scheme, check=False)
        start = np.array([[b + 0.3, 0.2]])
        sol = solve_ivp(lambda t, x: [-(x[0] - b), x[1]], (0.0, 1.0), start[0], method="DOP853",
                        rtol=1e-13, atol=1e-15)
        closed = bm.L(j, 1.0, start)[0]
        add(f"L{j}_t1_x1", j, closed[0], sol.y[0, -1])
        add(f"L{j}_t1_x2", j, closed[1], sol.y[1, -1])
        add(f"L{j}_t0", j, 0.0, float(np.max(np.abs(bm.L(j, 0.0, start) - start))))
    return rows


# ---------------------------------------------------------------------------
# sweeps and files


@dataclass
class VerificationRow:
    m: float
    eta: float
    k: int
    d: int
    delta: float
    q1: int
    q2: int
    max_eps: float
    block_error: float
    end_to_end: float
    iterates: int


def verify_sweep(targets, ms: Sequence[float] = (6, 8, 10), delta: float = 0.05, K: float = 1.0,
                 grid: SampleGrid | None = None, block_grid: SampleGrid | None = None
                 ) -> list[VerificationRow]:
    """Build and assemble the scheme for each m; record block and end-to-end errors.

    Where the target chain is undefined somewhere on ``grid`` (ln of a
    non-positive argument) the end-to-end error is recorded as NaN.
    """
    rows = []
    for m in ms:
        sch = build_scheme(targets, delta=delta, m=m, K=K, grid=grid)
        blocks = [block_error(sch, j, s, block_grid)
                  for j in (1, 2) for s in range(1, sch.q[j - 1])]
        if target_defined(sch, grid):
            end = assemble_renormalized(sch, grid).error
        else:
            end = float("nan")
        max_eps = max([float(np.max(np.abs(e))) for e in sch.eps if e.size] + [0.0])
        rows.append(VerificationRow(float(m), sch.eta, sch.k, sch.d, delta, sch.q[0], sch.q[1],
                                    max_eps, max(blocks) if blocks else 0.0, end,
                                    sch.iterate_count()))
    return rows


def write_verification_csv(rows: Sequence[VerificationRow], path) -> None:
    names = list(VerificationRow.__dataclass_fields__)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for r in rows:
            w.writerow([repr(getattr(r, n)) if isinstance(getattr(r, n), float) else getattr(r, n)
                        for n in names])


def dump_scheme(scheme: SchemeParameters) -> str:
    """JSON text of every parameter; floats use shortest round-trip decimals."""
    c = scheme.constants

    def arr(a):
        return [float(v) for v in np.ravel(a)]

    data = {
        "constants": {"delta": c.delta, "b2": c.b2, "R": c.R, "N": c.N, "anchors": c.anchors()},
        "K": scheme.K, "m": scheme.m, "d": scheme.d, "eta": scheme.eta, "q": list(scheme.q),
        "h": [[arr(h) for h in grp] for grp in scheme.h],
        "u": [arr(a) for a in scheme.u], "z": [arr(a) for a in scheme.z],
        "C": [arr(a) for a in scheme.C], "l": list(scheme.l),
        "zp": [arr(a) for a in scheme.zp], "up": [arr(a) for a in scheme.up],
        "eps": [[arr(row) for row in e] for e in scheme.eps],
        "mu": list(scheme.mu), "gamma": list(scheme.gamma), "k": scheme.k,
        "alpha": list(scheme.alpha), "beta": list(scheme.beta),
    }
    return json.dumps(data, indent=1, sort_keys=True)


def load_scheme(text: str) -> SchemeParameters:
    """Inverse of ``dump_scheme`` (bit-exact)."""
    try:
        d = json.loads(text)
        c = d["constants"]
        q = tuple(d["q"])
        eps = []
        for i, rows in enumerate(d["eps"]):
            e = np.array(rows, dtype=float).reshape(q[i] - 1, d["d"] + 1)
            eps.append(e)
        return SchemeParameters(
            constants=FlowConstants(delta=c["delta"], b2=c["b2"], R=c["R"]),
            K=d["K"], m=d["m"], d=d["d"], eta=d["eta"], q=q,
            h=tuple(tuple(np.array(h, dtype=float) for h in grp) for grp in d["h"]),
            u=tuple(np.array(a) for a in d["u"]), z=tuple(np.array(a) for a in d["z"]),
            C=tuple(np.array(a) for a in d["C"]), l=tuple(d["l"]),
            zp=tuple(np.array(a) for a in d["zp"]), up=tuple(np.array(a) for a in d["up"]),
            eps=tuple(eps), mu=tuple(d["mu"]), gamma=tuple(d["gamma"]), k=d["k"],
            alpha=tuple(d["alpha"]), beta=tuple(d["beta"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed scheme dump: {exc}", field="scheme") from exc


def targets_from_composition(composition) -> tuple[list[np.ndarray], list[np.ndarray], float]:
    """Read (h_1, h_2, K) off a planar composition of the form

    Phi0 ∘ H.. ∘ Psi2 ∘ Phi0 ∘ H.. ∘ Psi1  (as produced by the phi0 variant
    of the full factorization pipeline).
    """
    from .mapcore import HenonLikeMap, Phi0, Psi1, Psi2

    app = list(reversed(composition.factors))
    if not app or not isinstance(app[0], Psi1) or app[0].dimension != 2:
        raise ValidationError("composition must start with a planar Psi1", field="composition")
    groups: list[list[np.ndarray]] = [[], []]
    g = 0
    expect = "henon"
    for f in app[1:]:
        if isinstance(f, HenonLikeMap) and expect == "henon":
            poly = f.h
            deg = poly.degree()
            vec = np.zeros(deg + 1)
            for e, cval in poly.terms.items():
                vec[e[0]] += float(cval)
            groups[g].append(vec)
        elif isinstance(f, Phi0) and expect == "henon":
            expect = "psi2" if g == 0 else "end"
        elif isinstance(f, Psi2) and expect == "psi2":
            g, expect = 1, "henon"
        else:
            raise ValidationError(f"unexpected factor {type(f).__name__} in composition",
                                  field="composition")
    if expect != "end":
        raise ValidationError("composition does not end with Phi0", field="composition")
    return groups[0], groups[1], float(app[0].K)
