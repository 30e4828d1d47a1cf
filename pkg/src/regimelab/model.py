"""The three-variable nonlinear system, its coefficient presets, and equilibria.

The dynamics, in first-order form with state (x, y, z) and coefficients
c1..c4:

    dx/dt = -x - x*y^2 + c2*z + c1
    dy/dt = (x + x*y^2 - y) / c3
    dz/dt = (y - z)/c4 - x*y*z/c4

c3 and c4 scale the y and z subsystems and appear as divisors, so both must
be nonzero. Three named coefficient presets are bundled (see ``preset``);
all of them start from the origin at t0 = 0.

``field_rhs`` is the raw elementwise kernel shared by every integrator in
the package: it accepts plain floats or numpy arrays and applies the exact
same sequence of IEEE-754 operations either way, which is what makes batch
sweeps bit-identical to one-at-a-time runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

__all__ = [
    "StateVec",
    "Coefficients",
    "PresetId",
    "FixedPoint",
    "field_rhs",
    "vector_field",
    "preset",
    "fixed_points",
    "NEWTON_STARTS",
    "ROOT_DEDUP_TOL",
]

# Two equilibria closer than this (sup-norm) are treated as the same root.
ROOT_DEDUP_TOL = 1e-6

# Damped-Newton multistart grid: the 27 corners of {-1, 0.5, 2}^3 plus the
# origin. Small, deterministic, and sufficient for a 3-D polynomial field.
NEWTON_STARTS = tuple(
    (a, b, c) for a in (-1.0, 0.5, 2.0) for b in (-1.0, 0.5, 2.0) for c in (-1.0, 0.5, 2.0)
) + ((0.0, 0.0, 0.0),)

_NEWTON_MAX_HALVINGS = 40


@dataclass(frozen=True)
class StateVec:
    """System state (x, y, z) at one instant."""

    x: float
    y: float
    z: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=np.float64)

    @classmethod
    def from_array(cls, arr) -> "StateVec":
        x, y, z = (float(v) for v in arr)
        return cls(x, y, z)

    def is_finite(self) -> bool:
        return math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.z)

    def sup_distance(self, other: "StateVec") -> float:
        return max(abs(self.x - other.x), abs(self.y - other.y), abs(self.z - other.z))


@dataclass(frozen=True)
class Coefficients:
    """The four parameters of the vector field. c3 and c4 are divisors."""

    c1: float
    c2: float
    c3: float
    c4: float

    def __post_init__(self) -> None:
        for name in ("c1", "c2", "c3", "c4"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"coefficient {name} must be finite, got {v!r}")
        if self.c3 == 0.0:
            raise ValueError("coefficient c3 must be nonzero (appears as a divisor)")
        if self.c4 == 0.0:
            raise ValueError("coefficient c4 must be nonzero (appears as a divisor)")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.c1, self.c2, self.c3, self.c4)

    def replace(self, **kwargs) -> "Coefficients":
        vals = {"c1": self.c1, "c2": self.c2, "c3": self.c3, "c4": self.c4}
        vals.update(kwargs)
        return Coefficients(**vals)


class PresetId(str, Enum):
    """Named coefficient sets with known long-run behavior."""

    FIG12 = "fig12"
    FIG13 = "fig13"
    ALL_ONES = "all_ones"


@dataclass(frozen=True)
class FixedPoint:
    """An equilibrium together with the field norm actually achieved there."""

    state: StateVec
    residual_norm: float


def field_rhs(x, y, z, c1, c2, c3, c4):
    """Evaluate (dx/dt, dy/dt, dz/dt) elementwise.

    Works identically on floats and on numpy arrays; every call site in the
    package funnels through this one expression sequence so scalar and batch
    integrations agree bit-for-bit.
    """
    xy2 = x * (y * y)
    dx = -x - xy2 + c2 * z + c1
    dy = (x + xy2 - y) / c3
    dz = (y - z) / c4 - x * y * z / c4
    return dx, dy, dz


def vector_field(state: StateVec, coeffs: Coefficients) -> StateVec:
    """Time derivative of the state under the given coefficients.

    Raises ValueError on non-finite input or if the evaluation overflows.
    """
    if not state.is_finite():
        raise ValueError(f"vector_field requires finite state, got {state}")
    dx, dy, dz = field_rhs(state.x, state.y, state.z, *coeffs.as_tuple())
    out = StateVec(dx, dy, dz)
    if not out.is_finite():
        raise ValueError(f"vector_field overflowed at state {state}")
    return out


_PRESETS: dict[PresetId, Coefficients] = {
    PresetId.FIG12: Coefficients(1.0, 1.67515, 1.0, 1.0),
    PresetId.FIG13: Coefficients(25.0, 0.0, 0.05017, 1.0),
    PresetId.ALL_ONES: Coefficients(1.0, 1.0, 1.0, 1.0),
}


def preset(preset_id: PresetId | str) -> tuple[Coefficients, StateVec, float]:
    """Coefficients, initial state, and time origin for a named preset.

    Every preset starts from the origin at t0 = 0; they differ only in the
    coefficient set (fig12 drifts slowly toward its equilibrium, fig13 has a
    fast y-subsystem, all_ones settles cleanly onto a single sink).
    """
    pid = PresetId(preset_id)
    return _PRESETS[pid], StateVec(0.0, 0.0, 0.0), 0.0


def _jacobian(x: float, y: float, z: float, coeffs: Coefficients) -> np.ndarray:
    c1, c2, c3, c4 = coeffs.as_tuple()
    return np.array(
        [
            [-1.0 - y * y, -2.0 * x * y, c2],
            [(1.0 + y * y) / c3, (2.0 * x * y - 1.0) / c3, 0.0],
            [-y * z / c4, (1.0 - x * z) / c4, (-1.0 - x * y) / c4],
        ]
    )


def _residual_norm(s: np.ndarray, coeffs: Coefficients) -> float:
    dx, dy, dz = field_rhs(s[0], s[1], s[2], *coeffs.as_tuple())
    return math.sqrt(dx * dx + dy * dy + dz * dz)


def _newton_from(start, coeffs: Coefficients, tol: float, max_iter: int):
    """Damped Newton from one start; returns the root array or None."""
    s = np.array(start, dtype=np.float64)
    r = _residual_norm(s, coeffs)
    if not math.isfinite(r):
        return None
    for _ in range(max_iter):
        if r <= tol:
            return s
        f = np.array(field_rhs(s[0], s[1], s[2], *coeffs.as_tuple()))
        try:
            step = np.linalg.solve(_jacobian(s[0], s[1], s[2], coeffs), -f)
        except np.linalg.LinAlgError:
            return None
        # Halve the step until the residual actually decreases.
        lam = 1.0
        for _ in range(_NEWTON_MAX_HALVINGS):
            cand = s + lam * step
            rc = _residual_norm(cand, coeffs)
            if math.isfinite(rc) and rc < r:
                s, r = cand, rc
                break
            lam *= 0.5
        else:
            return None
    return s if r <= tol else None


def fixed_points(coeffs: Coefficients, tol: float = 1e-10, max_iter: int = 50) -> list[FixedPoint]:
    """All equilibria reachable by damped Newton from ``NEWTON_STARTS``.

    Roots within ``ROOT_DEDUP_TOL`` (sup-norm) of each other are merged.
    Returns an empty list when no start converges; results are sorted by
    (x, y, z) so the output is independent of grid order.
    """
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    if max_iter < 1:
        raise ValueError(f"max_iter must be >= 1, got {max_iter}")
    roots: list[np.ndarray] = []
    for start in NEWTON_STARTS:
        s = _newton_from(start, coeffs, tol, max_iter)
        if s is None:
            continue
        if any(np.max(np.abs(s - q)) <= ROOT_DEDUP_TOL for q in roots):
            continue
        roots.append(s)
    roots.sort(key=lambda q: (q[0], q[1], q[2]))
    return [
        FixedPoint(state=StateVec.from_array(q), residual_norm=_residual_norm(q, coeffs))
        for q in roots
    ]
