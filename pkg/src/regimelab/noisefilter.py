"""Measurement noise on simulated outputs and the filters that remove it.

Noise is added to the recorded channels after integration (it never feeds
back into the dynamics). Generation is counter-based (Philox) and keyed per
channel by XOR-ing the run seed with a fixed salt, so channels are mutually
independent yet every run is bit-reproducible from its seed.

Two single-knob low-pass filters are provided: a causal moving average and
a one-pole recursive smoother. Both preserve constants exactly and have
closed-form behavior that the test suite checks against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Union

import numpy as np

from .integrate import SimSpec, Trajectory, integrate
from .model import Coefficients

__all__ = [
    "NoiseDistribution",
    "NoiseSpec",
    "MovingAverage",
    "OnePole",
    "FilterSpec",
    "ChannelSeries",
    "FilteredRun",
    "CHANNEL_SALTS",
    "add_noise",
    "filter_moving_average",
    "filter_one_pole",
    "apply_filter",
    "pipeline",
]

# Fixed per-channel sub-seed salts (hex digits of pi); XORed with the run
# seed to key each channel's Philox stream.
CHANNEL_SALTS = {
    "x": 0x243F6A8885A308D3,
    "y": 0x452821E638D01377,
    "z": 0xBE5466CF34E90C6C,
}


class NoiseDistribution(str, Enum):
    GAUSSIAN = "gaussian"
    UNIFORM = "uniform"


@dataclass(frozen=True)
class NoiseSpec:
    """Additive measurement noise: gaussian (amplitude = std dev) or uniform
    (amplitude = half-width), drawn from a seeded counter-based generator."""

    distribution: NoiseDistribution = NoiseDistribution.GAUSSIAN
    amplitude: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "distribution", NoiseDistribution(self.distribution))
        if not (math.isfinite(self.amplitude) and self.amplitude >= 0):
            raise ValueError(f"noise amplitude must be finite and >= 0, got {self.amplitude}")
        if not (0 <= self.seed < 2**64):
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {self.seed}")


@dataclass(frozen=True)
class MovingAverage:
    """Causal moving average over the trailing ``window`` samples."""

    window: int

    def __post_init__(self) -> None:
        if self.window < 1:
            raise ValueError(f"moving-average window must be >= 1, got {self.window}")

    def apply(self, series) -> np.ndarray:
        return filter_moving_average(series, self.window)

    def describe(self) -> str:
        return f"moving_average(window={self.window})"


@dataclass(frozen=True)
class OnePole:
    """First-order recursive low-pass; alpha in (0, 1] is the adjustment knob."""

    alpha: float

    def __post_init__(self) -> None:
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError(f"one-pole alpha must be in (0, 1], got {self.alpha}")

    def apply(self, series) -> np.ndarray:
        return filter_one_pole(series, self.alpha)

    def describe(self) -> str:
        return f"one_pole(alpha={self.alpha!r})"


FilterSpec = Union[MovingAverage, OnePole]


@dataclass(frozen=True, eq=False)
class ChannelSeries:
    """One series per state channel, sharing the trajectory's time base."""

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray

    def channel(self, name: str) -> np.ndarray:
        if name not in ("x", "y", "z"):
            raise ValueError(f"unknown channel {name!r}")
        return getattr(self, name)

    def items(self):
        return (("x", self.x), ("y", self.y), ("z", self.z))


@dataclass(frozen=True, eq=False)
class FilteredRun:
    clean: Trajectory
    noisy: ChannelSeries
    filtered: ChannelSeries
    noise_spec: NoiseSpec
    filter_spec: FilterSpec


def _channel_rng(seed: int, channel: str) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=seed ^ CHANNEL_SALTS[channel]))


def add_noise(traj: Trajectory, spec: NoiseSpec) -> ChannelSeries:
    """Independently drawn noise per sample and channel.

    amplitude=0 returns the clean channels unchanged (no draws are made, so
    the output is bit-identical to the input).
    """
    n = traj.n_samples
    out = {}
    for i, name in enumerate(("x", "y", "z")):
        clean = traj.samples[:, i].copy()
        if spec.amplitude == 0.0:
            out[name] = clean
            continue
        rng = _channel_rng(spec.seed, name)
        if spec.distribution is NoiseDistribution.GAUSSIAN:
            draws = spec.amplitude * rng.standard_normal(n)
        else:
            draws = rng.uniform(-spec.amplitude, spec.amplitude, n)
        out[name] = clean + draws
    return ChannelSeries(**out)


def filter_moving_average(series, window: int) -> np.ndarray:
    """Causal moving average: out[k] = mean(series[max(0, k-window+1) .. k]).

    The mean is accumulated as deviations from the window's newest sample,
    which keeps constant inputs exactly constant for every window size.
    """
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    s = np.asarray(series, dtype=np.float64)
    n = s.size
    out = np.empty(n, dtype=np.float64)
    head = min(window - 1, n)
    for k in range(head):
        out[k] = s[k] + math.fsum(s[: k + 1] - s[k]) / (k + 1)
    if n >= window:
        pivots = s[window - 1 :]
        acc = np.zeros(n - window + 1, dtype=np.float64)
        for j in range(window):
            acc += s[window - 1 - j : n - j] - pivots
        out[window - 1 :] = pivots + acc / window
    return out


def filter_one_pole(series, alpha: float) -> np.ndarray:
    """One-pole low-pass: out[0] = series[0], then
    out[k] = alpha*series[k] + (1-alpha)*out[k-1].

    Evaluated in incremental form out[k-1] + alpha*(series[k] - out[k-1]) so
    constants pass through exactly; alpha=1 short-circuits to a copy.
    """
    if not (0.0 < alpha <= 1.0):
        raise ValueError(f"alpha must be in (0, 1], got {alpha}")
    s = np.asarray(series, dtype=np.float64)
    if alpha == 1.0:
        return s.copy()
    out = np.empty(s.size, dtype=np.float64)
    if s.size == 0:
        return out
    prev = float(s[0])
    out[0] = prev
    for k in range(1, s.size):
        prev = prev + alpha * (float(s[k]) - prev)
        out[k] = prev
    return out


def apply_filter(series, filt: FilterSpec) -> np.ndarray:
    return filt.apply(series)


def pipeline(
    spec: SimSpec,
    coeffs: Coefficients,
    noise: NoiseSpec,
    filt: FilterSpec,
) -> FilteredRun:
    """Integrate, add measurement noise, filter every channel.

    All three signal groups (clean, noisy, filtered) share one time base, so
    they can be overlaid directly.
    """
    clean = integrate(spec, coeffs)
    noisy = add_noise(clean, noise)
    filtered = ChannelSeries(
        x=filt.apply(noisy.x), y=filt.apply(noisy.y), z=filt.apply(noisy.z)
    )
    return FilteredRun(
        clean=clean,
        noisy=noisy,
        filtered=filtered,
        noise_spec=noise,
        filter_spec=filt,
    )
