"""Fixed-step integration of the system with Heun's method and classical RK4.

Both steppers are explicit and autonomous (the field has no time
dependence). Everything here is deterministic: a given spec and coefficient
set always produce the same trajectory, bit for bit. Runs stop early when
any state component leaves the divergence bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from .model import Coefficients, StateVec, field_rhs

__all__ = [
    "Method",
    "SimSpec",
    "Trajectory",
    "OrderEstimate",
    "DivergenceError",
    "step_heun",
    "step_rk4",
    "integrate",
    "convergence_order",
    "heun_kernel",
    "rk4_kernel",
    "kernel_for",
    "DIVERGENCE_BOUND",
    "DEFAULT_MAX_STEPS",
]

DIVERGENCE_BOUND = 1e9
DEFAULT_MAX_STEPS = 10**8


class DivergenceError(RuntimeError):
    """An integration left the divergence bound where that is not tolerated."""


class Method(str, Enum):
    HEUN = "heun"
    RK4 = "rk4"


@dataclass(frozen=True)
class SimSpec:
    """One integration run: time window, step size, method, start state."""

    t0: float = 0.0
    t_end: float = 100.0
    dt: float = 1e-3
    method: Method = Method.RK4
    initial: StateVec = field(default_factory=lambda: StateVec(0.0, 0.0, 0.0))
    max_steps: int = DEFAULT_MAX_STEPS

    def __post_init__(self) -> None:
        if not (math.isfinite(self.t0) and math.isfinite(self.t_end)):
            raise ValueError("t0 and t_end must be finite")
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.t_end < self.t0:
            raise ValueError(f"t_end ({self.t_end}) must not precede t0 ({self.t0})")
        if self.max_steps < 1:
            raise ValueError(f"max_steps must be >= 1, got {self.max_steps}")

    def n_steps(self) -> int:
        """Number of steps covering [t0, t_end]; rounds when t_end sits on the grid."""
        q = (self.t_end - self.t0) / self.dt
        n = int(round(q))
        if abs(q - n) > 1e-9 * max(1.0, abs(q)):
            n = int(math.ceil(q))
        return n


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Uniformly sampled states; row k of ``samples`` is the state at t0 + k*dt.

    ``diverged_at``, when set, is the index of the first sample whose
    sup-norm exceeded the divergence bound; that sample is the last one kept.
    """

    t0: float
    dt: float
    samples: np.ndarray
    diverged_at: Optional[int] = None

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_samples)

    @property
    def t_final(self) -> float:
        return self.t0 + self.dt * (self.n_samples - 1)

    def state(self, k: int) -> StateVec:
        return StateVec.from_array(self.samples[k])

    @property
    def final_state(self) -> StateVec:
        return self.state(self.n_samples - 1)

    def component(self, name: str) -> np.ndarray:
        return self.samples[:, component_index(name)]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (
            self.t0 == other.t0
            and self.dt == other.dt
            and self.diverged_at == other.diverged_at
            and self.samples.shape == other.samples.shape
            and bool(np.all(self.samples == other.samples))
        )


def component_index(name: str) -> int:
    try:
        return {"x": 0, "y": 1, "z": 2}[name]
    except KeyError:
        raise ValueError(f"unknown component {name!r}, expected one of x, y, z") from None


def heun_kernel(x, y, z, c1, c2, c3, c4, dt):
    """One Heun step on raw components (floats or arrays): Euler predictor,
    trapezoidal corrector."""
    ax, ay, az = field_rhs(x, y, z, c1, c2, c3, c4)
    bx, by, bz = field_rhs(x + dt * ax, y + dt * ay, z + dt * az, c1, c2, c3, c4)
    h = 0.5 * dt
    return x + h * (ax + bx), y + h * (ay + by), z + h * (az + bz)


def rk4_kernel(x, y, z, c1, c2, c3, c4, dt):
    """One classical four-stage Runge-Kutta step on raw components."""
    ax, ay, az = field_rhs(x, y, z, c1, c2, c3, c4)
    h = 0.5 * dt
    bx, by, bz = field_rhs(x + h * ax, y + h * ay, z + h * az, c1, c2, c3, c4)
    cx, cy, cz = field_rhs(x + h * bx, y + h * by, z + h * bz, c1, c2, c3, c4)
    dx, dy, dz = field_rhs(x + dt * cx, y + dt * cy, z + dt * cz, c1, c2, c3, c4)
    s = dt / 6.0
    return (
        x + s * (ax + 2.0 * (bx + cx) + dx),
        y + s * (ay + 2.0 * (by + cy) + dy),
        z + s * (az + 2.0 * (bz + cz) + dz),
    )


def kernel_for(method: Method):
    return heun_kernel if Method(method) is Method.HEUN else rk4_kernel


def _checked_step(kernel, state: StateVec, coeffs: Coefficients, dt: float) -> StateVec:
    if not (math.isfinite(dt) and dt >= 0):
        raise ValueError(f"dt must be finite and >= 0, got {dt}")
    if not state.is_finite():
        raise ValueError(f"step requires a finite state, got {state}")
    nx, ny, nz = kernel(state.x, state.y, state.z, *coeffs.as_tuple(), dt)
    out = StateVec(nx, ny, nz)
    if not out.is_finite():
        raise OverflowError(f"integration stage overflowed from state {state} at dt={dt}")
    return out


def step_heun(state: StateVec, coeffs: Coefficients, dt: float) -> StateVec:
    """Advance one Heun (improved Euler) step of size dt."""
    return _checked_step(heun_kernel, state, coeffs, dt)


def step_rk4(state: StateVec, coeffs: Coefficients, dt: float) -> StateVec:
    """Advance one classical RK4 step of size dt."""
    return _checked_step(rk4_kernel, state, coeffs, dt)


def integrate(spec: SimSpec, coeffs: Coefficients) -> Trajectory:
    """Run the chosen stepper from spec.initial, recording every state.

    Stops early with ``diverged_at`` set as soon as a component's magnitude
    exceeds ``DIVERGENCE_BOUND`` (non-finite values count as exceeding).
    Raises ValueError when the run would need more than spec.max_steps steps.
    """
    n = spec.n_steps()
    if n > spec.max_steps:
        raise ValueError(
            f"run of {n} steps exceeds the configured step cap of {spec.max_steps}"
        )
    kernel = kernel_for(spec.method)
    c1, c2, c3, c4 = coeffs.as_tuple()
    dt = spec.dt
    x, y, z = spec.initial.x, spec.initial.y, spec.initial.z

    out = np.empty((n + 1, 3), dtype=np.float64)
    out[0, 0] = x
    out[0, 1] = y
    out[0, 2] = z
    bound = DIVERGENCE_BOUND
    # Per-component comparisons so a lone NaN cannot slip through.
    if not (abs(x) <= bound and abs(y) <= bound and abs(z) <= bound):
        return Trajectory(spec.t0, dt, out[:1].copy(), diverged_at=0)

    for k in range(1, n + 1):
        x, y, z = kernel(x, y, z, c1, c2, c3, c4, dt)
        out[k, 0] = x
        out[k, 1] = y
        out[k, 2] = z
        if not (abs(x) <= bound and abs(y) <= bound and abs(z) <= bound):
            return Trajectory(spec.t0, dt, out[: k + 1].copy(), diverged_at=k)
    return Trajectory(spec.t0, dt, out, diverged_at=None)


@dataclass(frozen=True)
class OrderEstimate:
    """Empirical convergence order from a dt / dt/2 / dt/4 ladder.

    ``degenerate`` flags the case where the errors vanish identically
    (e.g. starting exactly on an equilibrium of a constant-free field), in
    which case ``order`` is None.
    """

    order: Optional[float]
    degenerate: bool
    coarse_error: float
    fine_error: float


def convergence_order(
    method: Method,
    coeffs: Coefficients,
    initial: StateVec,
    t_end: float,
    dt: float = 0.05,
) -> OrderEstimate:
    """Estimate the stepper's order against a Richardson-extrapolated reference.

    Integrates over [0, t_end] with steps dt, dt/2 and dt/4; the dt/4 run is
    Richardson-extrapolated at the method's nominal order to serve as the
    reference, and the returned order is log2(error(dt) / error(dt/2)).
    Raises DivergenceError if any of the three runs leaves the divergence
    bound at the given dt.
    """
    if t_end <= 0:
        raise ValueError(f"t_end must be positive, got {t_end}")
    method = Method(method)
    finals = []
    for h in (dt, dt / 2.0, dt / 4.0):
        spec = SimSpec(t0=0.0, t_end=t_end, dt=h, method=method, initial=initial)
        traj = integrate(spec, coeffs)
        if traj.diverged_at is not None:
            raise DivergenceError(
                f"{method.value} run is unstable at dt={h}: diverged at step {traj.diverged_at}"
            )
        finals.append(traj.samples[-1])
    y1, y2, y4 = finals
    p = 2.0 if method is Method.HEUN else 4.0
    ref = y4 + (y4 - y2) / (2.0**p - 1.0)
    e1 = float(np.max(np.abs(y1 - ref)))
    e2 = float(np.max(np.abs(y2 - ref)))
    if e1 == 0.0 or e2 == 0.0:
        return OrderEstimate(order=None, degenerate=True, coarse_error=e1, fine_error=e2)
    return OrderEstimate(
        order=math.log2(e1 / e2), degenerate=False, coarse_error=e1, fine_error=e2
    )
