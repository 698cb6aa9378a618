"""Shipped test maps, fields and targets shared by the CLI, tests and demos."""

from __future__ import annotations

import numpy as np

from .errors import ValidationError
from .henonfactor import NonAutonomousField
from .mapcore import SmoothMap

__all__ = [
    "DECOMPOSE_MAPS",
    "THEOREM3_MAP",
    "FLOW_TARGETS",
    "decompose_map",
    "rotation_field",
    "nonlinear_field",
    "factorize_field",
    "theorem3_map",
    "flow_target",
]

# maps of the ball with positive Jacobian; the last one is three-dimensional
DECOMPOSE_MAPS = {
    "identity2": ["x", "y"],
    "shear2": ["x", "y*(1+0.1*x)"],
    "cubic2": ["x+0.1*y**3", "y+0.05*x**2*y+0.02*x**3"],
    "mixed3": ["x + 0.1*y*z", "y*(1+0.1*x)", "z + 0.05*x**2"],
}

THEOREM3_MAP = ["x+0.2*y**2", "y+0.1*x**2"]

# (h1 coefficient vectors, h2 coefficient vectors, K, grid radius, grid centre)
FLOW_TARGETS = {
    "q11": ([], [], 1.0, 1.0, (-1.5, 0.0)),
    "q21": ([[0.0, 0.3, 0.2]], [], 1.0, 1.0, None),
    "poly": ([[-0.7, 0.0], [0.0, 0.2, 0.1]], [[0.0, 0.1, 0.05]], 0.5, 0.3, None),
}


def decompose_map(name: str) -> SmoothMap:
    if name not in DECOMPOSE_MAPS:
        raise ValidationError(f"unknown map preset {name!r}", field="map")
    return SmoothMap.from_expressions(DECOMPOSE_MAPS[name], name=name)


def rotation_field() -> NonAutonomousField:
    """x' = -y, y' = x."""
    return NonAutonomousField.from_expressions(["-y", "x"])


def nonlinear_field(seed: int = 0) -> NonAutonomousField:
    """Random divergence-free quadratic field on R^3 (time-dependent, rational coefficients)."""
    return NonAutonomousField.random_divergence_free(3, 2, np.random.default_rng(seed), scale=0.1)


def factorize_field(name: str, seed: int = 0) -> NonAutonomousField:
    if name == "rotation":
        return rotation_field()
    if name == "nonlinear3":
        return nonlinear_field(seed)
    raise ValidationError(f"unknown field preset {name!r}", field="field")


def theorem3_map() -> SmoothMap:
    return SmoothMap.from_expressions(THEOREM3_MAP, name="theorem3")


def flow_target(name: str):
    """(targets, K, radius, centre) for a named flow-construction target."""
    if name not in FLOW_TARGETS:
        raise ValidationError(f"unknown flow target {name!r}", field="target")
    h1, h2, K, radius, centre = FLOW_TARGETS[name]
    return ([np.asarray(h, dtype=float) for h in h1], [np.asarray(h, dtype=float) for h in h2]), K, radius, centre
