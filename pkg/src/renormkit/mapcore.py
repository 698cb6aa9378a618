"""Map algebra: smooth maps, Hénon-like factors, compositions, grid norms.

Points are numpy arrays with the coordinate index last, so every evaluator
accepts a single point of shape (n,) or a batch of shape (m, n).  Compositions
list their factors in written order: ``[f1, f2, f3]`` means f1∘f2∘f3, so the
last factor is applied first.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConvergenceFailure, DomainViolation, ManifestParseError, ValidationError
from .polynomial import Polynomial

__all__ = [
    "SmoothMap",
    "Factor",
    "HenonLikeMap",
    "Psi1",
    "Psi2",
    "Phi0",
    "AffineMap",
    "NumericMap",
    "InverseFactor",
    "MapComposition",
    "SampleGrid",
    "fd_jacobian",
    "newton_inverse",
    "c0_c1_distance",
    "volume_defect",
    "ruelle_takens_chain",
    "register_numeric",
    "save_manifest",
    "load_manifest",
    "dumps_manifest",
    "loads_manifest",
]

FD_STEP = 1e-5
MANIFEST_HEADER = "renormkit-manifest"
MANIFEST_VERSION = 1


def _as_points(x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return x[None, :], True
    return x, False


def fd_jacobian(func: Callable, x, step: float = FD_STEP) -> np.ndarray:
    """Central finite-difference Jacobian; returns shape (m, n_out, n_in)."""
    pts, single = _as_points(x)
    n = pts.shape[1]
    cols = []
    for j in range(n):
        e = np.zeros(n)
        e[j] = step
        cols.append((np.asarray(func(pts + e)) - np.asarray(func(pts - e))) / (2 * step))
    jac = np.stack(cols, axis=-1)
    return jac[0] if single else jac


def newton_inverse(func: Callable, target, guess, jacobian: Callable | None = None,
                   tol: float = 1e-12, maxiter: int = 50, fd_step: float = FD_STEP,
                   what: str = "map") -> np.ndarray:
    """Solve func(y) = target for y by damped Newton, vectorised over points."""
    z, single = _as_points(target)
    y = np.array(_as_points(guess)[0], dtype=float, copy=True)
    if y.shape != z.shape:
        y = np.broadcast_to(y, z.shape).copy()
    jac_fn = jacobian if jacobian is not None else (lambda p: fd_jacobian(func, p, fd_step))
    res = np.asarray(func(y)) - z
    norm = np.linalg.norm(res, axis=1)
    scale = np.maximum(1.0, np.abs(z).max(axis=1))
    active = norm > tol * scale
    for _ in range(maxiter):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        jm = np.asarray(jac_fn(y[idx]))
        try:
            step = np.linalg.solve(jm, res[idx][..., None])[..., 0]
        except np.linalg.LinAlgError as exc:
            raise ConvergenceFailure(f"singular Jacobian while inverting {what}",
                                     point=y[idx[0]]) from exc
        lam = np.ones(len(idx))
        trial = y[idx] - step
        tres = np.asarray(func(trial)) - z[idx]
        tnorm = np.linalg.norm(tres, axis=1)
        for _ in range(30):
            worse = ~(tnorm < norm[idx]) & (np.linalg.norm(step, axis=1) * lam > tol)
            if not worse.any():
                break
            lam[worse] *= 0.5
            trial[worse] = y[idx][worse] - lam[worse, None] * step[worse]
            tres[worse] = np.asarray(func(trial[worse])) - z[idx][worse]
            tnorm[worse] = np.linalg.norm(tres[worse], axis=1)
        small_step = np.linalg.norm(step, axis=1) * lam <= tol * np.maximum(1.0, np.abs(trial).max(axis=1))
        y[idx] = trial
        res[idx] = tres
        norm[idx] = tnorm
        done = (tnorm <= tol * scale[idx]) | small_step
        active[idx[done]] = False
    if active.any():
        i = int(np.flatnonzero(active)[np.argmax(norm[active])])
        raise ConvergenceFailure(
            f"Newton inversion of {what} did not converge (residual {norm[i]:.3e})",
            point=z[i], residual=float(norm[i]))
    return y[0] if single else y


@dataclass(frozen=True)
class SmoothMap:
    """An evaluable map R^n -> R^n on a ball, with optional analytic Jacobian."""

    dimension: int
    func: Callable[[np.ndarray], np.ndarray]
    jacobian_func: Callable[[np.ndarray], np.ndarray] | None = None
    domain_radius: float = 1.0
    identity_outside_compact: bool = False
    name: str = "map"
    expressions: tuple | None = None
    variables: tuple | None = None

    def __post_init__(self):
        if self.dimension < 2:
            raise ValidationError("dimension must be at least 2", field="dimension")

    def __call__(self, x) -> np.ndarray:
        pts, single = _as_points(x)
        out = np.asarray(self.func(pts), dtype=float)
        return out[0] if single else out

    def jacobian(self, x, step: float = FD_STEP) -> np.ndarray:
        if self.jacobian_func is None:
            return fd_jacobian(self, x, step)
        pts, single = _as_points(x)
        out = np.asarray(self.jacobian_func(pts), dtype=float)
        return out[0] if single else out

    def det_jacobian(self, x) -> np.ndarray:
        return np.linalg.det(self.jacobian(x))

    def check_jacobian(self, points, rtol: float = 1e-4) -> float:
        """Largest relative mismatch between analytic and finite-difference Jacobians."""
        if self.jacobian_func is None:
            return 0.0
        pts, _ = _as_points(points)
        ja = self.jacobian(pts)
        jf = fd_jacobian(self, pts)
        return float(np.max(np.abs(ja - jf)) / max(1.0, np.max(np.abs(ja))))

    @classmethod
    def identity(cls, n: int) -> "SmoothMap":
        variables = tuple(["x", "y", "z"][:n] if n <= 3 else [f"x{i + 1}" for i in range(n)])
        return cls(n, lambda x: np.array(x, dtype=float, copy=True),
                   lambda x: np.broadcast_to(np.eye(n), x.shape[:-1] + (n, n)).copy(),
                   identity_outside_compact=True, name="identity",
                   expressions=variables, variables=variables)

    @classmethod
    def from_expressions(cls, expressions: Sequence[str], variables: Sequence[str] | None = None,
                         name: str = "map", domain_radius: float = 1.0) -> "SmoothMap":
        """Build a map (and its analytic Jacobian) from sympy-parsable strings."""
        import sympy

        n = len(expressions)
        if variables is None:
            variables = ["x", "y", "z"][:n] if n <= 3 else [f"x{i + 1}" for i in range(n)]
        if len(variables) != n:
            raise ValidationError("need one variable name per component", field="variables")
        syms = sympy.symbols(list(variables))
        local = {v: s for v, s in zip(variables, syms)}
        try:
            exprs = [sympy.sympify(e, locals=local) for e in expressions]
        except (sympy.SympifyError, TypeError) as exc:
            raise ValidationError(f"cannot parse map expression: {exc}", field="map") from exc
        extra = set().union(*(e.free_symbols for e in exprs)) - set(syms)
        if extra:
            raise ValidationError(f"unknown symbols {sorted(map(str, extra))}", field="map")
        jac = sympy.Matrix(exprs).jacobian(syms)
        f_num = sympy.lambdify(syms, exprs, "numpy")
        j_num = sympy.lambdify(syms, jac.tolist(), "numpy")

        def func(x):
            vals = f_num(*[x[..., i] for i in range(n)])
            return np.stack([np.broadcast_to(v, x.shape[:-1]) for v in vals], axis=-1).astype(float)

        def jac_func(x):
            rows = j_num(*[x[..., i] for i in range(n)])
            return np.stack([np.stack([np.broadcast_to(v, x.shape[:-1]) for v in row], axis=-1)
                             for row in rows], axis=-2).astype(float)

        return cls(n, func, jac_func, domain_radius=domain_radius, name=name,
                   expressions=tuple(str(e) for e in expressions), variables=tuple(variables))


# ---------------------------------------------------------------------------
# primitive factors


class Factor:
    """Base class for the elementary factors; subclasses override the hooks."""

    tag = "factor"
    dimension: int

    def __call__(self, x) -> np.ndarray:
        pts, single = _as_points(x)
        out = self._forward(pts)
        return out[0] if single else out

    def inverse_call(self, x) -> np.ndarray:
        pts, single = _as_points(x)
        out = self._backward(pts)
        return out[0] if single else out

    def jacobian(self, x) -> np.ndarray:
        pts, single = _as_points(x)
        out = self._jacobian(pts)
        return out[0] if single else out

    def inverse(self) -> "Factor":
        return InverseFactor(self)

    def _jacobian(self, pts):
        return fd_jacobian(self._forward, pts)

    def _forward(self, pts):  # pragma: no cover - abstract
        raise NotImplementedError

    def _backward(self, pts):  # pragma: no cover - abstract
        raise NotImplementedError

    def record(self) -> str:  # pragma: no cover - abstract
        raise NotImplementedError

    def _check_dim(self, pts):
        if pts.shape[-1] != self.dimension:
            raise ValidationError(f"{self.tag} expects {self.dimension} coordinates, got {pts.shape[-1]}",
                                  field="point")


class HenonLikeMap(Factor):
    """(x1..xn) -> (x2, .., xn, (-1)^(n+1) x1 + h(x2..xn)); Jacobian determinant 1."""

    tag = "henon"

    def __init__(self, dimension: int, h: Polynomial | None = None):
        if dimension < 2:
            raise ValidationError("Hénon-like maps need n >= 2", field="dimension")
        self.dimension = int(dimension)
        self.h = h if h is not None else Polynomial.zero(dimension - 1)
        if self.h.nvars != dimension - 1:
            raise ValidationError("h must be a polynomial in n-1 variables", field="h")
        # (-1)^(n+1): n even -> -1, n odd -> +1
        self.sign = -1.0 if dimension % 2 == 0 else 1.0
        self._grad = None

    @property
    def degree(self) -> int:
        return self.h.degree()

    def _forward(self, pts):
        self._check_dim(pts)
        out = np.empty_like(pts)
        out[:, :-1] = pts[:, 1:]
        out[:, -1] = self.sign * pts[:, 0] + self.h(pts[:, 1:])
        return out

    def _backward(self, pts):
        self._check_dim(pts)
        out = np.empty_like(pts)
        out[:, 1:] = pts[:, :-1]
        out[:, 0] = self.sign * (pts[:, -1] - self.h(pts[:, :-1]))
        return out

    def _jacobian(self, pts):
        n = self.dimension
        if self._grad is None:
            self._grad = [self.h.diff(i) for i in range(n - 1)]
        jac = np.zeros((len(pts), n, n))
        for k in range(n - 1):
            jac[:, k, k + 1] = 1.0
        jac[:, -1, 0] = self.sign
        for i, g in enumerate(self._grad):
            jac[:, -1, i + 1] = g(pts[:, 1:])
        return jac

    def reversed_inverse(self) -> "HenonLikeMap":
        """Hénon-like map G with f^{-1} = R∘G∘R, R reversing the coordinate order."""
        n = self.dimension
        rev = [n - 2 - i for i in range(n - 1)]
        g = self.h.compose([Polynomial.variable(n - 1, rev[i]) for i in range(n - 1)])
        return HenonLikeMap(n, g * (-self.sign))

    def record(self) -> str:
        return f"henon n={self.dimension} h={_poly_to_text(self.h)}"

    def __repr__(self):
        return f"HenonLikeMap(n={self.dimension}, degree={self.degree})"


class Psi1(Factor):
    """x_n -> exp(K x_n), other coordinates fixed."""

    tag = "psi1"

    def __init__(self, dimension: int, K: float):
        if not K > 0:
            raise ValidationError("K must be positive", field="K")
        self.dimension = int(dimension)
        self.K = float(K)

    def _forward(self, pts):
        self._check_dim(pts)
        out = pts.copy()
        out[:, -1] = np.exp(self.K * pts[:, -1])
        return out

    def _backward(self, pts):
        self._check_dim(pts)
        bad = pts[:, -1] <= 0
        if bad.any():
            raise DomainViolation("inverse of psi1 needs x_n > 0", factor="psi1^-1",
                                  point=pts[np.argmax(bad)])
        out = pts.copy()
        out[:, -1] = np.log(pts[:, -1]) / self.K
        return out

    def _jacobian(self, pts):
        jac = np.broadcast_to(np.eye(self.dimension), (len(pts), self.dimension, self.dimension)).copy()
        jac[:, -1, -1] = self.K * np.exp(self.K * pts[:, -1])
        return jac

    def record(self) -> str:
        return f"psi1 n={self.dimension} K={_num_to_text(self.K)}"


class Psi2(Factor):
    """x_n -> ln x_n on the half-space x_n > 0."""

    tag = "psi2"

    def __init__(self, dimension: int):
        self.dimension = int(dimension)

    def _forward(self, pts):
        self._check_dim(pts)
        bad = pts[:, -1] <= 0
        if bad.any():
            raise DomainViolation("psi2 needs x_n > 0", factor="psi2", point=pts[np.argmax(bad)])
        out = pts.copy()
        out[:, -1] = np.log(pts[:, -1])
        return out

    def _backward(self, pts):
        self._check_dim(pts)
        out = pts.copy()
        out[:, -1] = np.exp(pts[:, -1])
        return out

    def _jacobian(self, pts):
        jac = np.broadcast_to(np.eye(self.dimension), (len(pts), self.dimension, self.dimension)).copy()
        jac[:, -1, -1] = 1.0 / pts[:, -1]
        return jac

    def record(self) -> str:
        return f"psi2 n={self.dimension}"


class Phi0(Factor):
    """(.., x_{n-1}, x_n) -> (.., x_n, -x_{n-1}): quarter turn in the last plane."""

    tag = "phi0"

    def __init__(self, dimension: int):
        self.dimension = int(dimension)

    def _forward(self, pts):
        self._check_dim(pts)
        out = pts.copy()
        out[:, -2] = pts[:, -1]
        out[:, -1] = -pts[:, -2]
        return out

    def _backward(self, pts):
        self._check_dim(pts)
        out = pts.copy()
        out[:, -2] = -pts[:, -1]
        out[:, -1] = pts[:, -2]
        return out

    def _jacobian(self, pts):
        n = self.dimension
        m = np.eye(n)
        m[-2:, -2:] = [[0.0, 1.0], [-1.0, 0.0]]
        return np.broadcast_to(m, (len(pts), n, n)).copy()

    def record(self) -> str:
        return f"phi0 n={self.dimension}"


class AffineMap(Factor):
    """x -> A x + b with invertible A."""

    tag = "affine"

    def __init__(self, matrix, shift=None):
        self.matrix = np.array(matrix, dtype=float)
        n = self.matrix.shape[0]
        if self.matrix.shape != (n, n):
            raise ValidationError("affine matrix must be square", field="matrix")
        self.dimension = n
        self.shift = np.zeros(n) if shift is None else np.array(shift, dtype=float)
        if abs(np.linalg.det(self.matrix)) < 1e-300:
            raise ValidationError("affine matrix is singular", field="matrix")

    def _forward(self, pts):
        self._check_dim(pts)
        return pts @ self.matrix.T + self.shift

    def _backward(self, pts):
        self._check_dim(pts)
        return np.linalg.solve(self.matrix, (pts - self.shift).T).T

    def _jacobian(self, pts):
        return np.broadcast_to(self.matrix, (len(pts),) + self.matrix.shape).copy()

    def inverse(self) -> "AffineMap":
        inv = np.linalg.inv(self.matrix)
        return AffineMap(inv, -inv @ self.shift)

    def record(self) -> str:
        mat = ",".join(_num_to_text(v) for v in self.matrix.ravel())
        sh = ",".join(_num_to_text(v) for v in self.shift)
        return f"affine n={self.dimension} matrix={mat} shift={sh}"


_NUMERIC_REGISTRY: dict[str, Callable[[dict], "NumericMap"]] = {}


def register_numeric(reference: str, builder: Callable[[dict], "NumericMap"]) -> None:
    """Register a builder that regenerates a numeric factor from its parameters."""
    _NUMERIC_REGISTRY[reference] = builder


class NumericMap(Factor):
    """Wraps a SmoothMap (plus optional inverse) produced by a numerical procedure.

    ``reference`` and ``params`` identify the procedure so a manifest can store
    the recipe instead of the map itself.
    """

    tag = "numeric"

    def __init__(self, smooth: SmoothMap | None, inverse_func: Callable | None = None,
                 reference: str = "unregistered", params: dict | None = None):
        self.smooth = smooth
        self.inverse_func = inverse_func
        self.reference = reference
        self.params = dict(params or {})
        self.dimension = smooth.dimension if smooth is not None else int(self.params.get("n", 0))

    def _forward(self, pts):
        if self.smooth is None:
            raise DomainViolation(f"numeric factor {self.reference!r} has no registered builder",
                                  factor=self.reference, point=pts[0])
        return np.asarray(self.smooth.func(pts), dtype=float)

    def _backward(self, pts):
        if self.inverse_func is not None:
            return np.asarray(self.inverse_func(pts), dtype=float)
        guess = pts - (self._forward(pts) - pts)
        return newton_inverse(self._forward, pts, guess, what=self.reference)

    def _jacobian(self, pts):
        if self.smooth is not None and self.smooth.jacobian_func is not None:
            return self.smooth.jacobian(pts)
        return fd_jacobian(self._forward, pts)

    def record(self) -> str:
        payload = json.dumps(self.params, sort_keys=True, separators=(",", ":"))
        return f"numeric n={self.dimension} ref={self.reference} params={payload}"


class InverseFactor(Factor):
    """The inverse of another factor (evaluated through its closed-form inverse)."""

    tag = "inverse"

    def __init__(self, base: Factor):
        self.base = base
        self.dimension = base.dimension

    def _forward(self, pts):
        return self.base._backward(pts)

    def _backward(self, pts):
        return self.base._forward(pts)

    def _jacobian(self, pts):
        if isinstance(self.base, NumericMap):
            return fd_jacobian(self._forward, pts)
        return np.linalg.inv(self.base._jacobian(self.base._backward(pts)))

    def inverse(self) -> Factor:
        return self.base

    def record(self) -> str:
        return f"inverse {self.base.record()}"


# ---------------------------------------------------------------------------
# compositions


@dataclass(frozen=True)
class MapComposition:
    """Ordered product of factors in written order (last element applied first)."""

    factors: tuple = ()
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(self.factors))
        dims = {f.dimension for f in self.factors}
        if len(dims) > 1:
            raise ValidationError(f"factors disagree on dimension: {sorted(dims)}", field="factors")

    @property
    def dimension(self) -> int | None:
        return self.factors[0].dimension if self.factors else self.metadata.get("n")

    def __len__(self):
        return len(self.factors)

    def __call__(self, x) -> np.ndarray:
        pts, single = _as_points(x)
        y = pts.copy()
        for k in range(len(self.factors) - 1, -1, -1):
            f = self.factors[k]
            try:
                y = f._forward(y)
            except DomainViolation as exc:
                raise DomainViolation(f"factor #{k} ({f.tag}): {exc.message}",
                                      factor=f"{k}:{exc.factor}", point=exc.point) from exc
        return y[0] if single else y

    def inverse(self) -> "MapComposition":
        return MapComposition(tuple(f.inverse() for f in reversed(self.factors)),
                              dict(self.metadata, inverted=True))

    def inverse_call(self, x) -> np.ndarray:
        pts, single = _as_points(x)
        y = pts.copy()
        for f in self.factors:
            y = f._backward(y)
        return y[0] if single else y

    def jacobian(self, x) -> np.ndarray:
        pts, single = _as_points(x)
        n = pts.shape[1]
        jac = np.broadcast_to(np.eye(n), (len(pts), n, n)).copy()
        y = pts.copy()
        for f in reversed(self.factors):
            jac = f._jacobian(y) @ jac
            y = f._forward(y)
        return jac[0] if single else jac

    def then(self, other: "MapComposition | Factor") -> "MapComposition":
        """Composition applying ``self`` first and ``other`` afterwards."""
        extra = other.factors if isinstance(other, MapComposition) else (other,)
        return MapComposition(tuple(extra) + self.factors, dict(self.metadata))

    def as_smooth_map(self, name: str = "composition") -> SmoothMap:
        n = self.dimension
        if n is None:
            raise ValidationError("empty composition has no dimension; set metadata['n']", field="n")
        return SmoothMap(int(n), self.__call__, self.jacobian, name=name)

    def count(self, tag: str) -> int:
        return sum(1 for f in self.factors if f.tag == tag)

    def max_degree(self) -> int:
        return max((f.degree for f in self.factors if isinstance(f, HenonLikeMap)), default=0)


# ---------------------------------------------------------------------------
# grids and distances


@dataclass(frozen=True)
class SampleGrid:
    """Sample points inside a ball of the given radius around ``center``."""

    dimension: int
    resolution: int
    points: np.ndarray
    radius: float = 1.0
    center: tuple = ()

    @property
    def count(self) -> int:
        return len(self.points)

    @classmethod
    def ball(cls, dimension: int, resolution: int, radius: float = 1.0, center=None) -> "SampleGrid":
        """Tensor grid with ``resolution`` nodes per axis, kept where inside the ball."""
        if resolution < 2:
            raise ValidationError("grid resolution must be at least 2", field="resolution")
        c = np.zeros(dimension) if center is None else np.asarray(center, dtype=float)
        axis = np.linspace(-radius, radius, resolution)
        mesh = np.stack(np.meshgrid(*([axis] * dimension), indexing="ij"), axis=-1).reshape(-1, dimension)
        keep = np.linalg.norm(mesh, axis=1) <= radius * (1 + 1e-12)
        return cls(dimension, resolution, mesh[keep] + c, radius, tuple(c))

    @classmethod
    def random(cls, dimension: int, count: int, rng: np.random.Generator, radius: float = 1.0,
               center=None) -> "SampleGrid":
        """Uniform samples in the ball."""
        c = np.zeros(dimension) if center is None else np.asarray(center, dtype=float)
        g = rng.normal(size=(count, dimension))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        r = radius * rng.uniform(size=(count, 1)) ** (1.0 / dimension)
        return cls(dimension, 0, g * r + c, radius, tuple(c))

    def contains_all(self) -> bool:
        c = np.asarray(self.center) if self.center else np.zeros(self.dimension)
        return bool(np.all(np.linalg.norm(self.points - c, axis=1) <= self.radius * (1 + 1e-12)))


def _jacobian_of(m, pts, step):
    if isinstance(m, (SmoothMap, Factor, MapComposition)) and not (
            isinstance(m, SmoothMap) and m.jacobian_func is None):
        return np.asarray(m.jacobian(pts))
    return fd_jacobian(m, pts, step)


def c0_c1_distance(A, B, grid: SampleGrid, fd_step: float = FD_STEP) -> tuple[float, float]:
    """Grid C0 distance and max-entry distance of finite-difference Jacobians."""
    pts = grid.points
    e0 = float(np.max(np.linalg.norm(np.asarray(A(pts)) - np.asarray(B(pts)), axis=1)))
    ja = fd_jacobian(A, pts, fd_step)
    jb = fd_jacobian(B, pts, fd_step)
    e1 = float(np.max(np.abs(ja - jb)))
    return e0, e1


def volume_defect(A, grid: SampleGrid, fd_step: float = FD_STEP, analytic: bool = True) -> float:
    """max over the grid of |det DA - 1|."""
    pts = grid.points
    jac = _jacobian_of(A, pts, fd_step) if analytic else fd_jacobian(A, pts, fd_step)
    det = np.linalg.det(jac)
    if not np.all(np.isfinite(det)):
        bad = int(np.argmax(~np.isfinite(det)))
        raise DomainViolation("non-finite Jacobian determinant", factor=getattr(A, "name", None),
                              point=pts[bad])
    return float(np.max(np.abs(det - 1.0)))


# ---------------------------------------------------------------------------
# baseline chain decomposition


def _interp_map(F: SmoothMap, t: float):
    n = F.dimension

    def func(x):
        return (1 - t) * x + t * F(x)

    def jac(x):
        return (1 - t) * np.eye(n) + t * F.jacobian(x)

    return func, jac


def ruelle_takens_chain(F: SmoothMap, N: int, grid: SampleGrid | None = None,
                        tol: float = 1e-12) -> list[SmoothMap]:
    """Split F into N near-identity maps along the straight-line isotopy.

    Returns the factors in application order ``[F_1, .., F_N]``, so that
    F = F_N∘..∘F_1 with F_s = F_{s/N}∘F_{(s-1)/N}^{-1} and
    F_t(x) = (1-t) x + t F(x).
    """
    if N < 1:
        raise ValidationError("N must be a positive integer", field="N")
    if grid is None:
        grid = SampleGrid.ball(F.dimension, 21, F.domain_radius)
    failures = []
    for s in range(N + 1):
        _, jac = _interp_map(F, s / N)
        det = np.linalg.det(jac(grid.points))
        bad = np.flatnonzero(det <= 0)
        failures.extend((s / N, grid.points[i].tolist()) for i in bad[:3])
    if failures:
        raise ValidationError("straight-line interpolation is not a diffeotopy on the grid",
                              field="F", failures=failures[:10])

    chain = []
    for s in range(1, N + 1):
        t_now, t_prev = s / N, (s - 1) / N
        f_now, j_now = _interp_map(F, t_now)
        f_prev, j_prev = _interp_map(F, t_prev)

        def make(f_now=f_now, f_prev=f_prev, j_now=j_now, j_prev=j_prev, t_prev=t_prev):
            def prev_inverse(x):
                guess = x - t_prev * (F(x) - x)
                return newton_inverse(f_prev, x, guess, j_prev, tol=tol, what="interpolated map")

            def func(x):
                return f_now(prev_inverse(x))

            def jac(x):
                y = prev_inverse(x)
                return j_now(y) @ np.linalg.inv(j_prev(y))

            return func, jac

        func, jac = make()
        chain.append(SmoothMap(F.dimension, func, jac, F.domain_radius, name=f"chain[{s}/{N}]"))
    return chain


# ---------------------------------------------------------------------------
# manifest serialisation


def _num_to_text(v) -> str:
    if isinstance(v, Fraction):
        return f"{v.numerator}/{v.denominator}" if v.denominator != 1 else f"{v.numerator}/1"
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return f"{int(v)}/1"
    return repr(float(v))


def _num_from_text(s: str):
    if "/" in s:
        p, q = s.split("/")
        return Fraction(int(p), int(q))
    return float(s)


def _poly_to_text(p: Polynomial) -> str:
    if not p.terms:
        return "0"
    items = sorted(p.terms.items())
    return ";".join(",".join(str(e) for e in exps) + ":" + _num_to_text(c) for exps, c in items)


def _poly_from_text(s: str, nvars: int) -> Polynomial:
    if s == "0":
        return Polynomial.zero(nvars)
    terms = {}
    for chunk in s.split(";"):
        exps, c = chunk.split(":")
        e = tuple(int(v) for v in exps.split(","))
        if len(e) != nvars:
            raise ValueError(f"monomial {exps} has wrong arity")
        terms[e] = _num_from_text(c)
    return Polynomial(nvars, terms)


def dumps_manifest(comp: MapComposition) -> str:
    lines = [f"{MANIFEST_HEADER} {MANIFEST_VERSION}"]
    for key in sorted(comp.metadata):
        lines.append(f"meta {key}={json.dumps(comp.metadata[key], sort_keys=True, separators=(',', ':'))}")
    lines.append(f"factors {len(comp.factors)}")
    for f in comp.factors:
        lines.append(f.record())
    return "\n".join(lines) + "\n"


def _parse_fields(tokens: list[str], line: int) -> dict:
    out = {}
    for tok in tokens:
        if "=" not in tok:
            raise ManifestParseError(f"expected key=value, got {tok!r}", line, tok)
        k, v = tok.split("=", 1)
        out[k] = v
    return out


def _parse_factor(text: str, line: int) -> Factor:
    parts = text.split(" ")
    tag, rest = parts[0], parts[1:]
    if tag == "inverse":
        return InverseFactor(_parse_factor(" ".join(rest), line))
    if tag == "numeric":
        # params may contain spaces inside JSON; split at most twice
        head = text.split(" ", 3)
        fields = _parse_fields(head[1:3], line)
        if len(head) < 4 or not head[3].startswith("params="):
            raise ManifestParseError("numeric record needs params=", line, "params")
        try:
            params = json.loads(head[3][len("params="):])
        except json.JSONDecodeError as exc:
            raise ManifestParseError(f"bad params JSON: {exc}", line, "params") from exc
        ref = fields.get("ref", "")
        builder = _NUMERIC_REGISTRY.get(ref)
        if builder is not None:
            return builder(params)
        params.setdefault("n", int(fields.get("n", 0)))
        return NumericMap(None, reference=ref, params=params)
    fields = _parse_fields(rest, line)
    try:
        n = int(fields["n"])
    except KeyError:
        raise ManifestParseError(f"{tag} record lacks n=", line, "n") from None
    except ValueError:
        raise ManifestParseError(f"bad dimension {fields['n']!r}", line, "n") from None
    current = "n"
    try:
        if tag == "henon":
            current = "h"
            return HenonLikeMap(n, _poly_from_text(fields["h"], n - 1))
        if tag == "psi1":
            current = "K"
            return Psi1(n, float(_num_from_text(fields["K"])))
        if tag == "psi2":
            return Psi2(n)
        if tag == "phi0":
            return Phi0(n)
        if tag == "affine":
            current = "matrix"
            mat = np.array([float(_num_from_text(v)) for v in fields["matrix"].split(",")]).reshape(n, n)
            current = "shift"
            sh = np.array([float(_num_from_text(v)) for v in fields["shift"].split(",")])
            return AffineMap(mat, sh)
    except KeyError as exc:
        raise ManifestParseError(f"{tag} record lacks {exc.args[0]}=", line, str(exc.args[0])) from None
    except (ValueError, ZeroDivisionError, ValidationError) as exc:
        raise ManifestParseError(f"bad {current} field: {exc}", line, current) from None
    raise ManifestParseError(f"unknown factor tag {tag!r}", line, "tag")


def loads_manifest(text: str) -> MapComposition:
    lines = text.splitlines()
    body = [(i + 1, ln.rstrip()) for i, ln in enumerate(lines) if ln.strip() and not ln.startswith("#")]
    if not body:
        raise ManifestParseError("empty manifest", 1, "header")
    lineno, head = body[0]
    parts = head.split()
    if len(parts) != 2 or parts[0] != MANIFEST_HEADER:
        raise ManifestParseError(f"expected header '{MANIFEST_HEADER} <version>'", lineno, "header")
    if parts[1] != str(MANIFEST_VERSION):
        raise ManifestParseError(f"unsupported manifest version {parts[1]!r}", lineno, "version")
    meta = {}
    declared = None
    factors = []
    for lineno, ln in body[1:]:
        if declared is None:
            if ln.startswith("meta "):
                key, _, val = ln[5:].partition("=")
                try:
                    meta[key] = json.loads(val)
                except json.JSONDecodeError:
                    raise ManifestParseError(f"bad metadata value for {key!r}", lineno, key) from None
                continue
            if ln.startswith("factors "):
                try:
                    declared = int(ln.split()[1])
                except (IndexError, ValueError):
                    raise ManifestParseError("bad factor count", lineno, "factors") from None
                continue
            raise ManifestParseError("expected 'meta' or 'factors' record", lineno, "record")
        factors.append(_parse_factor(ln, lineno))
    if declared is None:
        raise ManifestParseError("missing 'factors' record", len(lines), "factors")
    if declared != len(factors):
        raise ManifestParseError(f"declared {declared} factors, found {len(factors)}", len(lines), "factors")
    return MapComposition(tuple(factors), meta)


def save_manifest(comp: MapComposition, destination) -> None:
    Path(destination).write_text(dumps_manifest(comp))


def load_manifest(source) -> MapComposition:
    return loads_manifest(Path(source).read_text())


def compose_all(maps: Iterable[Callable]) -> Callable:
    """Callable applying ``maps`` in the given (application) order."""
    maps = list(maps)

    def run(x):
        y = np.asarray(x, dtype=float)
        for m in maps:
            y = m(y)
        return y

    return run
