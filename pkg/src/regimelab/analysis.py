"""Trajectory analysis: regime labels, settle times, Lyapunov estimates, sweeps.

The classifier condenses a run into a label using a fixed rule order:
diverged beats converged beats periodic beats aperiodic beats undetermined.
"Converged" means the vector-field norm at the last sample is below
tolerance, which is the operational reading of a run that has entered the
linear neighborhood of a sink. The first half of every trajectory is
discarded as transient before any oscillation metric is computed.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .integrate import (
    DIVERGENCE_BOUND,
    DivergenceError,
    SimSpec,
    Trajectory,
    component_index,
    kernel_for,
)
from .model import Coefficients, field_rhs

__all__ = [
    "RegimeLabel",
    "RegimeThresholds",
    "RegimeReport",
    "BifurcationDiagram",
    "DegeneracyError",
    "detect_peaks",
    "settle_time",
    "classify_regime",
    "lyapunov_max",
    "bifurcation_sweep",
]


class DegeneracyError(RuntimeError):
    """A numerical procedure lost the signal it needs (e.g. zero separation)."""


class RegimeLabel(str, Enum):
    CONVERGED = "converged"
    PERIODIC = "periodic"
    APERIODIC = "aperiodic"
    DIVERGED = "diverged"
    UNDETERMINED = "undetermined"


@dataclass(frozen=True)
class RegimeThresholds:
    """Tolerance bundle for classify_regime; defaults are recorded in output
    metadata by the CLI so every report is regenerable."""

    converge: float = 1e-6
    cv: float = 0.05
    amp: float = 0.1
    lyap: float = 0.01
    peak_hysteresis_frac: float = 0.01


@dataclass(frozen=True)
class RegimeReport:
    label: RegimeLabel
    final_residual: float
    peak_count: int
    peak_spacing_cv: float
    amplitude_trend: float
    lyapunov_hint: Optional[float] = None


@dataclass(frozen=True, eq=False)
class BifurcationDiagram:
    """Post-transient local maxima of one component, per swept parameter value.

    ``attractor_samples[i]`` holds the peak values recorded at
    ``parameter_values[i]``; lanes that left the divergence bound get an
    empty sample set and a True entry in ``diverged``.
    """

    parameter_name: str
    parameter_values: np.ndarray
    attractor_samples: list[np.ndarray]
    diverged: np.ndarray
    component: str


def detect_peaks(series: Sequence[float], hysteresis: float) -> list[tuple[int, float]]:
    """Local maxima reached by a rise and left by a fall of >= hysteresis.

    The excursion requirement applies on both flanks, so ripple smaller than
    the hysteresis is ignored. Endpoint samples are never reported. A flat
    series yields nothing, and hysteresis=0 degrades to strict local maxima.
    """
    if hysteresis < 0 or not math.isfinite(hysteresis):
        raise ValueError(f"hysteresis must be finite and >= 0, got {hysteresis}")
    vals = np.asarray(series, dtype=np.float64)
    n = vals.size
    if n < 3:
        return []
    peaks: list[tuple[int, float]] = []
    max_i, max_v = 0, vals[0]
    min_i, min_v = 0, vals[0]
    rising: Optional[bool] = None  # None until the first extreme is resolved
    for i in range(1, n):
        v = vals[i]
        if rising is None:
            if v > max_v:
                max_i, max_v = i, v
            if v < min_v:
                min_i, min_v = i, v
            if (
                max_v - v >= hysteresis
                and v < max_v
                and max_v - min_v >= hysteresis
                and min_i < max_i
            ):
                # First extreme is a peak: rose from the running min, now falling.
                peaks.append((max_i, float(max_v)))
                rising = False
                min_i, min_v = i, v
            elif (
                v - min_v >= hysteresis
                and v > min_v
                and max_v - min_v >= hysteresis
                and max_i < min_i
            ):
                # First extreme was a trough; now climbing toward a peak.
                rising = True
                max_i, max_v = i, v
        elif rising:
            if v > max_v:
                max_i, max_v = i, v
            elif max_v - v >= hysteresis and v < max_v:
                if max_i != 0:
                    peaks.append((max_i, float(max_v)))
                rising = False
                min_i, min_v = i, v
        else:
            if v < min_v:
                min_i, min_v = i, v
            elif v - min_v >= hysteresis and v > min_v:
                rising = True
                max_i, max_v = i, v
    return peaks


def _residual_norms(samples: np.ndarray, coeffs: Coefficients) -> np.ndarray:
    dx, dy, dz = field_rhs(
        samples[:, 0], samples[:, 1], samples[:, 2], *coeffs.as_tuple()
    )
    return np.sqrt(dx * dx + dy * dy + dz * dz)


def settle_time(traj: Trajectory, coeffs: Coefficients, tol: float) -> Optional[float]:
    """Earliest sample time after which the field norm stays <= tol.

    Returns None when even the final sample is above tolerance (the run
    never settles within the observed window).
    """
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    norms = _residual_norms(traj.samples, coeffs)
    above = np.nonzero(~(norms <= tol))[0]  # treats NaN as above tolerance
    if above.size == 0:
        return float(traj.t0)
    last_bad = int(above[-1])
    if last_bad == traj.n_samples - 1:
        return None
    return float(traj.t0 + traj.dt * (last_bad + 1))


def _peak_metrics(series: np.ndarray, hysteresis_frac: float):
    lo, hi = float(np.min(series)), float(np.max(series))
    hysteresis = hysteresis_frac * (hi - lo)
    peaks = detect_peaks(series, hysteresis)
    count = len(peaks)
    spacing_cv = math.nan
    trend = math.nan
    if count >= 3:
        gaps = np.diff(np.array([i for i, _ in peaks], dtype=np.float64))
        mean_gap = float(np.mean(gaps))
        if mean_gap > 0:
            spacing_cv = float(np.std(gaps) / mean_gap)
    if count >= 4:
        vals = np.array([v for _, v in peaks])
        quarters = np.array_split(vals, 4)
        second = float(np.mean(quarters[1]))
        last = float(np.mean(quarters[3]))
        trend = last / second if second != 0.0 else math.inf
    return count, spacing_cv, trend


def classify_regime(
    traj: Trajectory,
    coeffs: Coefficients,
    thresholds: Optional[RegimeThresholds] = None,
    component: str = "x",
    lyapunov_hint: Optional[float] = None,
) -> RegimeReport:
    """Label a trajectory after discarding its first half as transient.

    Rule order is fixed: diverged, then converged (field norm at the last
    sample below thresholds.converge), then periodic (>= 4 peaks with regular
    spacing and stable amplitude), then aperiodic (>= 4 irregular peaks,
    additionally requiring lyapunov_hint > thresholds.lyap when a hint is
    supplied), else undetermined.
    """
    if traj.n_samples < 16:
        raise ValueError(f"classify_regime needs >= 16 samples, got {traj.n_samples}")
    thr = thresholds if thresholds is not None else RegimeThresholds()

    final_residual = float(_residual_norms(traj.samples[-1:], coeffs)[0])
    post = traj.samples[traj.n_samples // 2 :, component_index(component)]
    peak_count, spacing_cv, trend = _peak_metrics(post, thr.peak_hysteresis_frac)

    def report(label: RegimeLabel) -> RegimeReport:
        return RegimeReport(
            label=label,
            final_residual=final_residual,
            peak_count=peak_count,
            peak_spacing_cv=spacing_cv,
            amplitude_trend=trend,
            lyapunov_hint=lyapunov_hint,
        )

    if traj.diverged_at is not None:
        return report(RegimeLabel.DIVERGED)
    if final_residual <= thr.converge:
        return report(RegimeLabel.CONVERGED)
    regular = (
        peak_count >= 4
        and spacing_cv <= thr.cv
        and (1.0 - thr.amp) <= trend <= (1.0 + thr.amp)
    )
    if regular:
        return report(RegimeLabel.PERIODIC)
    if peak_count >= 4 and (lyapunov_hint is None or lyapunov_hint > thr.lyap):
        return report(RegimeLabel.APERIODIC)
    return report(RegimeLabel.UNDETERMINED)


def lyapunov_max(
    coeffs: Coefficients,
    spec: SimSpec,
    renorm_interval: int = 100,
    separation: float = 1e-8,
) -> float:
    """Largest Lyapunov exponent by the two-trajectory renormalization method.

    A fiducial run and one perturbed by ``separation`` along x are stepped
    together; every ``renorm_interval`` steps the log stretch ln(d/d0) is
    recorded and the pair is rescaled back to distance d0. The estimate is
    the mean log stretch per unit time over the second half of the record
    (the first half is transient). Trailing steps that do not fill a whole
    interval are dropped.
    """
    if renorm_interval < 1:
        raise ValueError(f"renorm_interval must be >= 1, got {renorm_interval}")
    if not (separation > 0 and math.isfinite(separation)):
        raise ValueError(f"separation must be positive and finite, got {separation}")
    n = spec.n_steps()
    if n > spec.max_steps:
        raise ValueError(
            f"run of {n} steps exceeds the configured step cap of {spec.max_steps}"
        )
    n_intervals = n // renorm_interval
    if n_intervals < 2:
        raise ValueError(
            "spec too short: need at least 2 renormalization intervals, "
            f"got {n_intervals}"
        )
    kernel = kernel_for(spec.method)
    c1, c2, c3, c4 = coeffs.as_tuple()
    dt = spec.dt
    fx, fy, fz = spec.initial.x, spec.initial.y, spec.initial.z
    px, py, pz = fx + separation, fy, fz

    logs: list[float] = []
    for _ in range(n_intervals):
        for _ in range(renorm_interval):
            fx, fy, fz = kernel(fx, fy, fz, c1, c2, c3, c4, dt)
            px, py, pz = kernel(px, py, pz, c1, c2, c3, c4, dt)
        b = DIVERGENCE_BOUND
        fid_ok = abs(fx) <= b and abs(fy) <= b and abs(fz) <= b
        pert_ok = abs(px) <= b and abs(py) <= b and abs(pz) <= b
        if not (fid_ok and pert_ok):
            raise DivergenceError(
                "lyapunov_max: a trajectory left the divergence bound "
                f"after {len(logs)} renormalizations"
            )
        ex, ey, ez = px - fx, py - fy, pz - fz
        d = math.sqrt(ex * ex + ey * ey + ez * ez)
        if d == 0.0:
            raise DegeneracyError(
                "lyapunov_max: trajectories collapsed to zero separation"
            )
        logs.append(math.log(d / separation))
        r = separation / d
        px, py, pz = fx + ex * r, fy + ey * r, fz + ez * r

    tail = logs[len(logs) // 2 :]
    return sum(tail) / (len(tail) * renorm_interval * dt)


def _sweep_lane_coeffs(base: Coefficients, parameter_name: str, values: np.ndarray):
    """Per-lane coefficient arrays with the swept parameter replaced."""
    fields = {
        "c1": np.full(values.shape, base.c1),
        "c2": np.full(values.shape, base.c2),
        "c3": np.full(values.shape, base.c3),
        "c4": np.full(values.shape, base.c4),
    }
    fields[parameter_name] = values.astype(np.float64)
    return fields["c1"], fields["c2"], fields["c3"], fields["c4"]


def _batch_component_series(
    values: np.ndarray,
    parameter_name: str,
    base: Coefficients,
    spec: SimSpec,
    comp: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Integrate one lane per parameter value; returns (series, diverged_step).

    ``series`` has shape (n_steps+1, lanes) holding the chosen component;
    ``diverged_step`` is -1 for lanes that stayed within the bound. Uses the
    same step kernels as scalar integration, so each lane is bit-identical
    to a one-off run with that coefficient value.
    """
    kernel = kernel_for(spec.method)
    n = spec.n_steps()
    m = values.size
    c1, c2, c3, c4 = _sweep_lane_coeffs(base, parameter_name, values)
    x = np.full(m, spec.initial.x)
    y = np.full(m, spec.initial.y)
    z = np.full(m, spec.initial.z)
    series = np.empty((n + 1, m), dtype=np.float64)
    series[0] = (x, y, z)[comp]
    diverged_step = np.full(m, -1, dtype=np.int64)
    active = np.ones(m, dtype=bool)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for k in range(1, n + 1):
            nx, ny, nz = kernel(x, y, z, c1, c2, c3, c4, spec.dt)
            sup = np.maximum(np.maximum(np.abs(nx), np.abs(ny)), np.abs(nz))
            bad = active & ~(sup <= DIVERGENCE_BOUND)
            diverged_step[bad] = k
            active = active & ~bad
            # Park diverged lanes at zero so later steps stay finite; their
            # stored history is ignored downstream anyway.
            x = np.where(active, nx, 0.0)
            y = np.where(active, ny, 0.0)
            z = np.where(active, nz, 0.0)
            row = (nx, ny, nz)[comp]
            series[k] = np.where(active | bad, row, series[k - 1])
    return series, diverged_step


def bifurcation_sweep(
    parameter_name: str,
    lo: float,
    hi: float,
    count: int,
    base: Coefficients,
    spec: SimSpec,
    component: str = "y",
    workers: int = 1,
    hysteresis_frac: float = 0.01,
) -> BifurcationDiagram:
    """Sweep one coefficient over [lo, hi] and collect post-transient peaks.

    Each of ``count`` evenly spaced values gets an independent run from
    spec.initial; the transient half is discarded and the remaining local
    maxima of ``component`` become that value's attractor samples. Lanes may
    be evaluated concurrently (``workers``); results are assembled in
    parameter order and are bit-identical for any worker count.
    """
    if parameter_name not in ("c1", "c2", "c3", "c4"):
        raise ValueError(f"unknown sweep parameter {parameter_name!r}")
    if not (lo < hi):
        raise ValueError(f"sweep range must satisfy lo < hi, got [{lo}, {hi}]")
    if count < 2:
        raise ValueError(f"sweep needs at least 2 points, got {count}")
    if workers < 1:
        raise ValueError(f"workers must be >= 1, got {workers}")
    if parameter_name in ("c3", "c4") and lo <= 0.0 <= hi:
        raise ValueError(
            f"sweep of {parameter_name} over [{lo}, {hi}] crosses "
            f"{parameter_name} = 0, which is not a valid coefficient"
        )
    values = np.linspace(lo, hi, count)
    comp = component_index(component)
    n = spec.n_steps()
    if n > spec.max_steps:
        raise ValueError(
            f"run of {n} steps exceeds the configured step cap of {spec.max_steps}"
        )

    chunks = np.array_split(values, min(workers, count))
    if workers == 1:
        parts = [
            _batch_component_series(c, parameter_name, base, spec, comp) for c in chunks
        ]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(
                pool.map(
                    lambda c: _batch_component_series(c, parameter_name, base, spec, comp),
                    chunks,
                )
            )
    series = np.concatenate([p[0] for p in parts], axis=1)
    diverged_step = np.concatenate([p[1] for p in parts])

    half = series.shape[0] // 2
    samples: list[np.ndarray] = []
    diverged = diverged_step >= 0
    for j in range(count):
        if diverged[j]:
            samples.append(np.empty(0, dtype=np.float64))
            continue
        lane = series[half:, j]
        span = float(np.max(lane) - np.min(lane))
        peaks = detect_peaks(lane, hysteresis_frac * span)
        samples.append(np.array([v for _, v in peaks], dtype=np.float64))
    return BifurcationDiagram(
        parameter_name=parameter_name,
        parameter_values=values,
        attractor_samples=samples,
        diverged=diverged,
        component=component,
    )
