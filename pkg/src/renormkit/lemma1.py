"""Splitting a diffeomorphism into volume-preserving parts and two log/exp factors.

Given an orientation-preserving F with Jacobian determinant J, the
decomposition is F = Phi2∘Psi2∘Phi1∘Psi1 where Psi1 exponentiates the last
coordinate, Psi2 takes its logarithm, and Phi1, Phi2 preserve volume.

Phi1 is built from the scalar field phi(y) = K y_n / J(y_1..y_{n-1}, ln(y_n)/K)
on y_n > 0.  Its new last coordinate is phi itself, its new (n-1)-th
coordinate is minus the time tau(y) needed by the planar flow

    d/dt y_{n-1} = d phi / d y_n,   d/dt y_n = - d phi / d y_{n-1}

to reach the section y_{n-1} = 0.  Since phi is conserved along that flow,
tau is computed by quadrature along the level curve phi = const, with the
level curve found pointwise by Newton; this keeps tau a smooth function of
the point, which finite-difference Jacobians need.  A direct adaptive ODE
route (``method="ode"``) is kept for cross-checking.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp
from scipy.spatial import cKDTree

from .errors import ConvergenceFailure, DomainViolation, ValidationError
from .mapcore import (
    MapComposition,
    NumericMap,
    Psi1,
    Psi2,
    SampleGrid,
    SmoothMap,
    fd_jacobian,
    register_numeric,
)

__all__ = [
    "JacobianField",
    "PhiField",
    "SpecialDecomposition",
    "estimate_K",
    "build_phi",
    "compute_tau",
    "phi1_map",
    "lemma1_decompose",
    "blend_to_identity",
    "smooth_cutoff",
]

K_FLOOR = 0.1
QUAD_NODES = 32


@dataclass(frozen=True)
class JacobianField:
    """Evaluators for J = det DF and its gradient, plus the bound K."""

    dimension: int
    det: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]
    K: float | None = None

    @classmethod
    def from_map(cls, F: SmoothMap, K: float | None = None) -> "JacobianField":
        n = F.dimension
        if F.expressions is not None:
            import sympy

            syms = sympy.symbols(list(F.variables))
            local = {v: s for v, s in zip(F.variables, syms)}
            exprs = [sympy.sympify(e, locals=local) for e in F.expressions]
            jdet = sympy.Matrix(exprs).jacobian(syms).det()
            jgrad = [sympy.diff(jdet, s) for s in syms]
            det_num = sympy.lambdify(syms, jdet, "numpy")
            grad_num = sympy.lambdify(syms, jgrad, "numpy")

            def det(x):
                return np.broadcast_to(det_num(*np.moveaxis(x, -1, 0)), x.shape[:-1]).astype(float)

            def grad(x):
                vals = grad_num(*np.moveaxis(x, -1, 0))
                return np.stack([np.broadcast_to(v, x.shape[:-1]) for v in vals], axis=-1).astype(float)

            return cls(n, det, grad, K)

        def det(x):
            flat = x.reshape(-1, n)
            return np.linalg.det(F.jacobian(flat)).reshape(x.shape[:-1])

        def grad(x):
            # fourth-order central differences of the determinant
            h = 1e-3
            out = np.empty(x.shape)
            for j in range(n):
                e = np.zeros(n)
                e[j] = h
                out[..., j] = (-det(x + 2 * e) + 8 * det(x + e) - 8 * det(x - e) + det(x - 2 * e)) / (12 * h)
            return out

        return cls(n, det, grad, K)

    def with_K(self, K: float) -> "JacobianField":
        return JacobianField(self.dimension, self.det, self.grad, K)


def estimate_K(F: SmoothMap | JacobianField, grid: SampleGrid, safety: float = 1.1,
               floor: float = K_FLOOR) -> float:
    """safety * max ||grad J|| / J over the grid, never below ``floor``."""
    jf = F if isinstance(F, JacobianField) else JacobianField.from_map(F)
    det = jf.det(grid.points)
    if np.any(det <= 0):
        bad = int(np.argmax(det <= 0))
        raise ValidationError("Jacobian determinant is not positive (orientation)", field="F",
                              point=grid.points[bad].tolist(), det=float(det[bad]))
    ratio = np.linalg.norm(jf.grad(grid.points), axis=-1) / det
    return float(max(floor, safety * float(np.max(ratio))))


class PhiField:
    """phi(y) = K y_n / J(y', ln(y_n)/K) on the half-space y_n > 0."""

    def __init__(self, jfield: JacobianField, K: float, nodes: int = QUAD_NODES):
        if not K > 0:
            raise ValidationError("K must be positive", field="K")
        self.jfield = jfield
        self.K = float(K)
        self.n = jfield.dimension
        self._xi, self._w = np.polynomial.legendre.leggauss(nodes)

    # phi and its partial derivatives -----------------------------------
    def _orig(self, y):
        y = np.asarray(y, dtype=float)
        if np.any(y[..., -1] <= 0):
            raise DomainViolation("phi is defined only for y_n > 0", factor="phi",
                                  point=y[np.argmax(y[..., -1] <= 0)] if y.ndim > 1 else y)
        x = y.copy()
        x[..., -1] = np.log(y[..., -1]) / self.K
        return x

    def __call__(self, y) -> np.ndarray:
        x = self._orig(y)
        return self.K * np.asarray(y, dtype=float)[..., -1] / self._det(x)

    def _det(self, x):
        d = self.jfield.det(x)
        if np.any(d <= 0):
            raise ValidationError("Jacobian determinant is not positive (orientation)", field="F")
        return d

    def gradient(self, y) -> np.ndarray:
        """Full gradient of phi with respect to y."""
        y = np.asarray(y, dtype=float)
        x = self._orig(y)
        J = self._det(x)
        G = self.jfield.grad(x)
        out = -self.K * y[..., -1, None] * G / J[..., None] ** 2
        out[..., -1] = (self.K * J - G[..., -1]) / J ** 2
        return out

    def _dphi_dyn_orig(self, x):
        J = self._det(x)
        return (self.K * J - self.jfield.grad(x)[..., -1]) / J ** 2

    # level curves --------------------------------------------------------
    def _level_sigma(self, xprime, level, sigma0):
        """Solve K s - ln J(x', s) = ln(level/K) for s (the original last coordinate)."""
        K = self.K
        target = np.log(level / K)
        sigma = np.array(np.broadcast_to(sigma0, xprime.shape[:-1]), dtype=float)
        x = np.concatenate([xprime, sigma[..., None]], axis=-1)
        polish = False
        for _ in range(60):
            x[..., -1] = sigma
            J = self._det(x)
            Js = self.jfield.grad(x)[..., -1]
            g = K * sigma - np.log(J) - target
            dg = K - Js / J
            # damped step: the exact curve has dg >= K - |grad J|/J > 0, far iterates may not
            step = np.clip(g / np.maximum(dg, 0.1 * K), -0.5, 0.5)
            sigma = sigma - step
            if polish:
                break
            polish = np.max(np.abs(step), initial=0.0) < 1e-9 * max(1.0, np.max(np.abs(sigma), initial=0.0))
        else:
            worst = float(np.max(np.abs(g)))
            raise ConvergenceFailure(f"level-curve Newton did not converge (residual {worst:.2e})", K=K)
        if np.any(dg <= 0):
            raise ConvergenceFailure("level curve lost monotonicity; K is too small for this map", K=K)
        return sigma

    def tau_from_level(self, p, a, level, sigma0):
        """tau for the point on the level curve ``level`` with y_{n-1} = a (batch)."""
        a = np.asarray(a, dtype=float)
        s = a[..., None] * (1 - self._xi) / 2
        shape = s.shape
        xprime = np.concatenate([np.broadcast_to(p[..., None, :], shape + (p.shape[-1],)), s[..., None]],
                                axis=-1)
        lev = np.broadcast_to(np.asarray(level)[..., None], shape)
        sig = self._level_sigma(xprime, lev, np.broadcast_to(np.asarray(sigma0)[..., None], shape))
        x = np.concatenate([xprime, sig[..., None]], axis=-1)
        integrand = 1.0 / self._dphi_dyn_orig(x)
        return -a / 2 * (integrand @ self._w)

    def tau(self, y) -> np.ndarray:
        """Signed time to reach y_{n-1} = 0 along the conserved-phi flow."""
        y = np.asarray(y, dtype=float)
        level = self(y)
        sigma0 = np.log(y[..., -1]) / self.K
        return self.tau_from_level(y[..., :-2], y[..., -2], level, sigma0)

    # ODE route -----------------------------------------------------------
    def tau_ode(self, y, rtol: float = 1e-10, atol: float = 1e-10, t_max: float | None = None) -> float:
        """tau by adaptive Runge-Kutta integration with event location (single point)."""
        y = np.asarray(y, dtype=float)
        if y[-2] == 0:
            return 0.0
        frozen = y[:-2]

        def rhs(t, z):
            pt = np.concatenate([frozen, z])
            g = self.gradient(pt)
            return [g[-1], -g[-2]]

        def cross(t, z):
            return z[0]

        cross.terminal = True
        budget = t_max if t_max is not None else 50.0 / self.K + 10.0 * abs(y[-2]) / self.K
        direction = 1.0 if y[-2] < 0 else -1.0
        sol = solve_ivp(rhs, (0.0, direction * budget), y[-2:], method="DOP853", rtol=rtol, atol=atol,
                        events=cross)
        if sol.status != 1 or not len(sol.t_events[0]):
            raise ConvergenceFailure("trajectory did not reach the section within the time budget",
                                     point=y, budget=budget)
        return float(sol.t_events[0][0])

    def bracket(self, y, step: float = 1e-5) -> np.ndarray:
        """d tau/d y_{n-1} * d phi/d y_n - d tau/d y_n * d phi/d y_{n-1} (should be -1)."""
        y = np.atleast_2d(np.asarray(y, dtype=float))
        dtau = fd_jacobian(lambda p: self.tau(p)[:, None], y, step)[:, 0, :]
        g = self.gradient(y)
        return dtau[:, -2] * g[:, -1] - dtau[:, -1] * g[:, -2]


def build_phi(F: SmoothMap | JacobianField, K: float) -> PhiField:
    jf = F if isinstance(F, JacobianField) else JacobianField.from_map(F)
    return PhiField(jf, K)


def compute_tau(phi: PhiField, x, method: str = "quadrature") -> np.ndarray | float:
    if method == "quadrature":
        return phi.tau(x)
    if method == "ode":
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return phi.tau_ode(x)
        return np.array([phi.tau_ode(p) for p in x])
    raise ValidationError(f"unknown tau method {method!r}", field="method")


class _Phi1:
    """Phi1 and its inverse, with the linear extension on y_n <= 0."""

    def __init__(self, phi: PhiField):
        self.phi = phi
        self.K = phi.K

    def forward(self, y):
        y = np.atleast_2d(np.asarray(y, dtype=float))
        out = y.copy()
        pos = y[:, -1] > 0
        if pos.any():
            yp = y[pos]
            out[pos, -2] = -self.phi.tau(yp)
            out[pos, -1] = self.phi(yp)
        neg = ~pos
        out[neg, -2] = y[neg, -2] / self.K
        out[neg, -1] = self.K * y[neg, -1]
        return out

    def backward(self, z, tol: float = 1e-14, maxiter: int = 50):
        z = np.atleast_2d(np.asarray(z, dtype=float))
        out = z.copy()
        pos = z[:, -1] > 0
        neg = ~pos
        out[neg, -2] = z[neg, -2] * self.K
        out[neg, -1] = z[neg, -1] / self.K
        if not pos.any():
            return out
        zp = z[pos]
        p, target, level = zp[:, :-2], zp[:, -2], zp[:, -1]
        # seed: the level curve meets the section y_{n-1} = 0 at a known height, and
        # tau ~ -a / (d phi / d y_n) there
        x_sec = np.concatenate([p, np.zeros((len(zp), 1))], axis=1)
        sigma_guess = self.phi._level_sigma(x_sec, level, np.log(level / self.K) / self.K)
        a = target * self.phi._dphi_dyn_orig(np.concatenate([x_sec, sigma_guess[:, None]], axis=1))
        for _ in range(maxiter):
            x_end = np.concatenate([p, a[:, None]], axis=1)
            sig = self.phi._level_sigma(x_end, level, sigma_guess)
            sigma_guess = sig
            tau = self.phi.tau_from_level(p, a, level, sig)
            rate = self.phi._dphi_dyn_orig(np.concatenate([x_end, sig[:, None]], axis=1))
            step = np.clip((tau + target) * rate, -0.5, 0.5)
            a = a + step
            if np.max(np.abs(step)) < tol * max(1.0, np.max(np.abs(a))):
                break
        else:
            raise ConvergenceFailure("inverse of phi1 did not converge", point=zp[0])
        x_end = np.concatenate([p, a[:, None]], axis=1)
        sig = self.phi._level_sigma(x_end, level, sigma_guess)
        out[pos, -2] = a
        out[pos, -1] = np.exp(self.K * sig)
        return out


def _numeric(func, inv, n, reference, params, name):
    sm = SmoothMap(n, func, None, name=name)
    return NumericMap(sm, inv, reference=reference, params=params)


def phi1_map(phi: PhiField, params: dict | None = None) -> NumericMap:
    """Phi1 as a numeric factor (closed-form inverse via level-curve Newton)."""
    core = _Phi1(phi)
    return _numeric(core.forward, core.backward, phi.n, "lemma1.phi1", dict(params or {}, K=phi.K), "phi1")


@dataclass
class SpecialDecomposition:
    """F = Phi2∘Psi2∘Phi1∘Psi1 with diagnostics."""

    F: SmoothMap
    K: float
    phi: PhiField
    phi1: NumericMap
    psi1: Psi1
    psi2: Psi2
    phi2: NumericMap
    residuals: dict = field(default_factory=dict)

    @property
    def composition(self) -> MapComposition:
        return MapComposition((self.phi2, self.psi2, self.phi1, self.psi1),
                              {"kind": "lemma1", "K": self.K, "n": self.F.dimension})

    def inner(self, x) -> np.ndarray:
        """G = Psi2∘Phi1∘Psi1 evaluated in one pass (kept in original coordinates)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return self.psi2(self.phi1(self.psi1(x)))

    def inner_inverse(self, z) -> np.ndarray:
        z = np.atleast_2d(np.asarray(z, dtype=float))
        return self.psi1.inverse_call(self.phi1.inverse_call(self.psi2.inverse_call(z)))

    def report(self, grid: SampleGrid, fd_step: float = 1e-5) -> np.ndarray:
        """Rows (point..., residual, det defect) over the grid."""
        pts = grid.points
        jf = self.phi.jfield
        rebuilt = self.composition(pts)
        residual = np.linalg.norm(rebuilt - self.F(pts), axis=1)
        dG = fd_jacobian(self.inner, pts, fd_step)
        det_defect = np.abs(np.linalg.det(dG) - jf.det(pts))
        return np.column_stack([pts, residual, det_defect])

    def summarize(self, grid: SampleGrid) -> dict:
        rows = self.report(grid)
        self.residuals = {"decomposition": float(rows[:, -2].max()),
                          "det_defect": float(rows[:, -1].max()),
                          "points": int(len(rows))}
        return self.residuals

    def write_report(self, grid: SampleGrid, path, extra: dict | None = None) -> None:
        rows = self.report(grid)
        n = grid.dimension
        extra = dict(extra or {}, K=self.K)
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(list(extra) + [f"x{i + 1}" for i in range(n)] + ["residual", "det_defect"])
            for r in rows:
                w.writerow([extra[k] for k in extra] + [repr(float(v)) for v in r])


def lemma1_decompose(F: SmoothMap, K: float | None = None, grid: SampleGrid | None = None,
                     safety: float = 1.1, k_grid_radius: float = 1.5) -> SpecialDecomposition:
    """Construct Phi1, Psi1, Psi2, Phi2 with F = Phi2∘Psi2∘Phi1∘Psi1.

    K defaults to ``estimate_K`` on a ball of radius ``k_grid_radius`` times the
    domain radius, since the level curves leave the unit ball slightly.
    """
    n = F.dimension
    jf = JacobianField.from_map(F)
    if K is None:
        kgrid = SampleGrid.ball(n, 21 if n == 2 else 11, k_grid_radius * F.domain_radius)
        K = estimate_K(jf, kgrid, safety)
    phi = PhiField(jf, K)
    params = {"K": K, "n": n}
    if F.expressions is not None:
        params.update(expressions=list(F.expressions), variables=list(F.variables))
    phi1 = phi1_map(phi, params)
    psi1 = Psi1(n, K)
    psi2 = Psi2(n)

    def inner_inv(z):
        return psi1.inverse_call(phi1.inverse_call(psi2.inverse_call(z)))

    def inner(x):
        return psi2(phi1(psi1(x)))

    def phi2_func(z):
        return F(inner_inv(z))

    def phi2_inv(x):
        guess = inner(x)
        from .mapcore import newton_inverse
        return newton_inverse(lambda z: phi2_func(z), x, guess, what="phi2")

    phi2 = _numeric(phi2_func, phi2_inv, n, "lemma1.phi2", params, "phi2")
    dec = SpecialDecomposition(F, K, phi, phi1, psi1, psi2, phi2)
    if grid is not None:
        dec.summarize(grid)
    return dec


def _rebuild(kind):
    def builder(params):
        F = SmoothMap.from_expressions(params["expressions"], params["variables"])
        dec = lemma1_decompose(F, K=params["K"])
        return dec.phi1 if kind == "phi1" else dec.phi2
    return builder


register_numeric("lemma1.phi1", _rebuild("phi1"))
register_numeric("lemma1.phi2", _rebuild("phi2"))


# ---------------------------------------------------------------------------
# extension to identity outside a compact set


def smooth_cutoff(r, inner: float = 1.0, outer: float = 2.0) -> np.ndarray:
    """C-infinity step: 1 for r <= inner, 0 for r >= outer."""
    r = np.asarray(r, dtype=float)
    t = np.clip((r - inner) / (outer - inner), 0.0, 1.0)

    def f(s):
        return np.where(s > 0, np.exp(-1.0 / np.where(s > 0, s, 1.0)), 0.0)

    return f(1 - t) / (f(1 - t) + f(t))


def blend_to_identity(F: SmoothMap, inner: float = 1.0, outer: float = 2.0, resolution: int = 41,
                      collision_tol: float = 1e-9) -> SmoothMap:
    """x + chi(|x|)(F(x) - x), validated for orientation and injectivity by sampling."""
    n = F.dimension

    def func(x):
        chi = smooth_cutoff(np.linalg.norm(x, axis=-1), inner, outer)
        return x + chi[..., None] * (F(x) - x)

    blended = SmoothMap(n, func, None, domain_radius=outer, identity_outside_compact=True,
                        name=f"blend({F.name})")
    grid = SampleGrid.ball(n, resolution if n == 2 else max(11, resolution // 2), outer * 1.05)
    det = np.linalg.det(fd_jacobian(func, grid.points))
    if np.any(det <= 0):
        bad = int(np.argmax(det <= 0))
        raise ValidationError("blended map is not orientation-preserving", field="F",
                              point=grid.points[bad].tolist())
    images = func(grid.points)
    pairs = cKDTree(images).query_pairs(collision_tol)
    if pairs:
        i, j = sorted(pairs)[0]
        raise ValidationError("blended map is not injective on the sample grid", field="F",
                              points=[grid.points[i].tolist(), grid.points[j].tolist()])
    return blended
