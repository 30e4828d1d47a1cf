"""Run-configuration parsing, CSV emission, and SVG plot rendering.

All output is deterministic: floats are written with 17 significant digits
(lossless for 64-bit values), newlines are line feeds, and the SVG renderer
contains no timestamps or generated ids, so identical inputs always produce
byte-identical files.

The config format is flat ``key = value`` text, one entry per line, with
``#`` starting a comment. Unknown keys are hard errors.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .integrate import Method, SimSpec, Trajectory
from .model import Coefficients, PresetId, StateVec, preset
from .noisefilter import FilterSpec, MovingAverage, NoiseSpec, OnePole
from .analysis import BifurcationDiagram

__all__ = [
    "ConfigError",
    "SweepSettings",
    "RunConfig",
    "parse_config",
    "emit_config",
    "resolve_coefficients",
    "resolve_spec",
    "format_float",
    "write_trajectory_csv",
    "read_trajectory_csv",
    "write_bifurcation_csv",
    "render_plot_svg",
]

PathLike = Union[str, os.PathLike]


class ConfigError(ValueError):
    """Malformed, unknown, or contradictory run configuration."""


def format_float(v: float) -> str:
    """17-significant-digit decimal form; round-trips any finite 64-bit float."""
    return format(float(v), ".17g")


@dataclass(frozen=True)
class SweepSettings:
    parameter: str
    lo: float
    hi: float
    count: int = 100
    component: str = "y"


@dataclass(frozen=True)
class RunConfig:
    """Fully defaulted description of one CLI run."""

    preset: Optional[PresetId] = None
    coefficients: Optional[Coefficients] = None
    t0: float = 0.0
    t_end: float = 100.0
    dt: float = 1e-3
    method: Method = Method.RK4
    initial: StateVec = field(default_factory=lambda: StateVec(0.0, 0.0, 0.0))
    noise: Optional[NoiseSpec] = None
    filter_spec: Optional[FilterSpec] = None
    sweep: Optional[SweepSettings] = None
    out_csv: Optional[str] = None
    out_svg: Optional[str] = None
    out_report: Optional[str] = None


_COEFF_KEYS = ("c1", "c2", "c3", "c4")
_CONFIG_KEYS = frozenset(
    (
        "preset",
        *_COEFF_KEYS,
        "t0",
        "t_end",
        "dt",
        "method",
        "x0",
        "y0",
        "z0",
        "noise_dist",
        "noise_amplitude",
        "noise_seed",
        "filter_kind",
        "filter_alpha",
        "filter_window",
        "sweep_param",
        "sweep_lo",
        "sweep_hi",
        "sweep_count",
        "sweep_component",
        "out_csv",
        "out_svg",
        "out_report",
    )
)


def _scan_entries(text: str) -> dict[str, tuple[str, int]]:
    entries: dict[str, tuple[str, int]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in entries:
            raise ConfigError(
                f"line {lineno}: duplicate key {key!r} (first set on line {entries[key][1]})"
            )
        if not value:
            raise ConfigError(f"line {lineno}: empty value for key {key!r}")
        entries[key] = (value, lineno)
    return entries


class _Entries:
    def __init__(self, raw: dict[str, tuple[str, int]]):
        self.raw = raw

    def __contains__(self, key: str) -> bool:
        return key in self.raw

    def fail(self, key: str, message: str):
        lineno = self.raw[key][1]
        raise ConfigError(f"line {lineno}: {key}: {message}")

    def text(self, key: str, default=None):
        if key not in self.raw:
            return default
        return self.raw[key][0]

    def real(self, key: str, default=None, finite: bool = True):
        if key not in self.raw:
            return default
        value = self.raw[key][0]
        try:
            v = float(value)
        except ValueError:
            self.fail(key, f"expected a number, got {value!r}")
        if finite and not math.isfinite(v):
            self.fail(key, f"expected a finite number, got {value!r}")
        return v

    def integer(self, key: str, default=None):
        if key not in self.raw:
            return default
        value = self.raw[key][0]
        try:
            return int(value, 0)
        except ValueError:
            self.fail(key, f"expected an integer, got {value!r}")


def parse_config(text: str) -> RunConfig:
    """Parse flat key = value configuration text into a RunConfig.

    Errors carry the offending line number and key. Exactly one of
    ``preset`` and the explicit coefficient set c1..c4 must be present.
    """
    e = _Entries(_scan_entries(text))

    preset_id: Optional[PresetId] = None
    coeffs: Optional[Coefficients] = None
    given = [k for k in _COEFF_KEYS if k in e]
    if "preset" in e:
        if given:
            e.fail("preset", f"preset and explicit coefficient {given[0]} are mutually exclusive")
        name = e.text("preset")
        try:
            preset_id = PresetId(name)
        except ValueError:
            e.fail("preset", f"unknown preset {name!r} (expected fig12, fig13, or all_ones)")
    elif given:
        missing = [k for k in _COEFF_KEYS if k not in e]
        if missing:
            e.fail(given[0], f"explicit coefficients need all of c1..c4; missing {missing}")
        vals = {k: e.real(k) for k in _COEFF_KEYS}
        try:
            coeffs = Coefficients(**vals)
        except ValueError as exc:
            bad = "c3" if vals["c3"] == 0 else ("c4" if vals["c4"] == 0 else "c1")
            e.fail(bad, str(exc))
    else:
        raise ConfigError("config must set either preset or explicit coefficients c1..c4")

    if preset_id is not None:
        _, preset_initial, preset_t0 = preset(preset_id)
    else:
        preset_initial, preset_t0 = StateVec(0.0, 0.0, 0.0), 0.0

    t0 = e.real("t0", preset_t0)
    t_end = e.real("t_end", 100.0)
    dt = e.real("dt", 1e-3)
    method_name = e.text("method", Method.RK4.value)
    try:
        method = Method(method_name)
    except ValueError:
        e.fail("method", f"unknown method {method_name!r} (expected rk4 or heun)")
    initial = StateVec(
        e.real("x0", preset_initial.x),
        e.real("y0", preset_initial.y),
        e.real("z0", preset_initial.z),
    )
    try:
        SimSpec(t0=t0, t_end=t_end, dt=dt, method=method, initial=initial)
    except ValueError as exc:
        key = "dt" if "dt" in str(exc) else "t_end"
        anchor = key if key in e else ("t0" if "t0" in e else key)
        if anchor in e:
            e.fail(anchor, str(exc))
        raise ConfigError(str(exc)) from None

    noise = None
    if any(k in e for k in ("noise_dist", "noise_amplitude", "noise_seed")):
        try:
            noise = NoiseSpec(
                distribution=e.text("noise_dist", "gaussian"),
                amplitude=e.real("noise_amplitude", 0.0),
                seed=e.integer("noise_seed", 0),
            )
        except ValueError as exc:
            anchor = next(k for k in ("noise_dist", "noise_amplitude", "noise_seed") if k in e)
            e.fail(anchor, str(exc))

    filter_spec = None
    if "filter_kind" in e:
        kind = e.text("filter_kind")
        try:
            if kind == "moving_average":
                if "filter_alpha" in e:
                    e.fail("filter_alpha", "not a moving_average knob (use filter_window)")
                filter_spec = MovingAverage(window=e.integer("filter_window", 16))
            elif kind == "one_pole":
                if "filter_window" in e:
                    e.fail("filter_window", "not a one_pole knob (use filter_alpha)")
                filter_spec = OnePole(alpha=e.real("filter_alpha", 0.1))
            else:
                e.fail("filter_kind", f"unknown filter {kind!r} (expected moving_average or one_pole)")
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            anchor = "filter_window" if kind == "moving_average" else "filter_alpha"
            anchor = anchor if anchor in e else "filter_kind"
            e.fail(anchor, str(exc))
    elif "filter_alpha" in e or "filter_window" in e:
        anchor = "filter_alpha" if "filter_alpha" in e else "filter_window"
        e.fail(anchor, "requires filter_kind to be set")

    sweep = None
    sweep_keys = ("sweep_param", "sweep_lo", "sweep_hi", "sweep_count", "sweep_component")
    if any(k in e for k in sweep_keys):
        for required in ("sweep_param", "sweep_lo", "sweep_hi"):
            if required not in e:
                anchor = next(k for k in sweep_keys if k in e)
                e.fail(anchor, f"sweep block requires {required}")
        param = e.text("sweep_param")
        if param not in _COEFF_KEYS:
            e.fail("sweep_param", f"unknown sweep parameter {param!r}")
        comp = e.text("sweep_component", "y")
        if comp not in ("x", "y", "z"):
            e.fail("sweep_component", f"unknown component {comp!r}")
        count = e.integer("sweep_count", 100)
        if count < 2:
            e.fail("sweep_count", f"need at least 2 sweep points, got {count}")
        lo, hi = e.real("sweep_lo"), e.real("sweep_hi")
        if not lo < hi:
            e.fail("sweep_lo", f"sweep range must satisfy lo < hi, got [{lo}, {hi}]")
        sweep = SweepSettings(parameter=param, lo=lo, hi=hi, count=count, component=comp)

    return RunConfig(
        preset=preset_id,
        coefficients=coeffs,
        t0=t0,
        t_end=t_end,
        dt=dt,
        method=method,
        initial=initial,
        noise=noise,
        filter_spec=filter_spec,
        sweep=sweep,
        out_csv=e.text("out_csv"),
        out_svg=e.text("out_svg"),
        out_report=e.text("out_report"),
    )


def emit_config(config: RunConfig) -> str:
    """Canonical text form of a RunConfig; parse(emit(c)) == c.

    Defaults are materialized, so emit(parse(text)) is a fixed point after
    one normalization pass.
    """
    lines: list[str] = []
    if config.preset is not None:
        lines.append(f"preset = {config.preset.value}")
    elif config.coefficients is not None:
        c = config.coefficients
        for name in _COEFF_KEYS:
            lines.append(f"{name} = {format_float(getattr(c, name))}")
    else:
        raise ConfigError("RunConfig has neither preset nor coefficients")
    lines.append(f"t0 = {format_float(config.t0)}")
    lines.append(f"t_end = {format_float(config.t_end)}")
    lines.append(f"dt = {format_float(config.dt)}")
    lines.append(f"method = {config.method.value}")
    lines.append(f"x0 = {format_float(config.initial.x)}")
    lines.append(f"y0 = {format_float(config.initial.y)}")
    lines.append(f"z0 = {format_float(config.initial.z)}")
    if config.noise is not None:
        lines.append(f"noise_dist = {config.noise.distribution.value}")
        lines.append(f"noise_amplitude = {format_float(config.noise.amplitude)}")
        lines.append(f"noise_seed = {config.noise.seed}")
    if config.filter_spec is not None:
        if isinstance(config.filter_spec, MovingAverage):
            lines.append("filter_kind = moving_average")
            lines.append(f"filter_window = {config.filter_spec.window}")
        else:
            lines.append("filter_kind = one_pole")
            lines.append(f"filter_alpha = {format_float(config.filter_spec.alpha)}")
    if config.sweep is not None:
        s = config.sweep
        lines.append(f"sweep_param = {s.parameter}")
        lines.append(f"sweep_lo = {format_float(s.lo)}")
        lines.append(f"sweep_hi = {format_float(s.hi)}")
        lines.append(f"sweep_count = {s.count}")
        lines.append(f"sweep_component = {s.component}")
    for key in ("out_csv", "out_svg", "out_report"):
        value = getattr(config, key)
        if value is not None:
            lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def resolve_coefficients(config: RunConfig) -> Coefficients:
    if config.preset is not None:
        return preset(config.preset)[0]
    if config.coefficients is None:
        raise ConfigError("RunConfig has neither preset nor coefficients")
    return config.coefficients


def resolve_spec(config: RunConfig) -> SimSpec:
    return SimSpec(
        t0=config.t0,
        t_end=config.t_end,
        dt=config.dt,
        method=config.method,
        initial=config.initial,
    )


_CHANNELS = ("x", "y", "z")


def _open_out(destination: PathLike):
    return open(destination, "w", encoding="utf-8", newline="\n")


def write_trajectory_csv(
    traj: Trajectory,
    channels: Sequence[str] = _CHANNELS,
    destination: PathLike = "trajectory.csv",
    metadata: Sequence[str] = (),
) -> None:
    """CSV with header ``t,<channels>`` and one row per sample.

    Channels are emitted in the fixed x, y, z order regardless of how the
    selection is listed. ``metadata`` entries become leading ``# `` comment
    lines. Floats use 17 significant digits, so a read-back is bit-exact.
    """
    selected = [c for c in _CHANNELS if c in channels]
    unknown = [c for c in channels if c not in _CHANNELS]
    if unknown:
        raise ValueError(f"unknown channels {unknown!r}")
    if not selected:
        raise ValueError("channel selection must not be empty")
    cols = [_CHANNELS.index(c) for c in selected]
    times = traj.times
    with _open_out(destination) as fh:
        for line in metadata:
            fh.write(f"# {line}\n")
        fh.write("t," + ",".join(selected) + "\n")
        for k in range(traj.n_samples):
            row = [format_float(times[k])]
            row += [format_float(traj.samples[k, c]) for c in cols]
            fh.write(",".join(row) + "\n")


def read_trajectory_csv(source: PathLike) -> Trajectory:
    """Read a full three-channel trajectory CSV written by this module.

    Structural metadata comments (``# t0: ...``, ``# dt: ...``,
    ``# diverged_at: ...``) are honored when present; otherwise the time
    base is inferred from the time column.
    """
    meta: dict[str, str] = {}
    header: Optional[list[str]] = None
    rows: list[list[float]] = []
    with open(source, "r", encoding="utf-8") as fh:
        for raw in fh:
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if ":" in body:
                    key, _, value = body.partition(":")
                    meta.setdefault(key.strip(), value.strip())
                continue
            if header is None:
                header = [c.strip() for c in line.split(",")]
                continue
            rows.append([float(v) for v in line.split(",")])
    if header is None or not rows:
        raise ValueError(f"no trajectory data in {source}")
    if header != ["t", "x", "y", "z"]:
        raise ValueError(
            f"expected header t,x,y,z, got {','.join(header)!r}; "
            "round-trip needs all three channels"
        )
    data = np.array(rows, dtype=np.float64)
    t0 = float(meta["t0"]) if "t0" in meta else float(data[0, 0])
    if "dt" in meta:
        dt = float(meta["dt"])
    elif data.shape[0] >= 2:
        dt = float(data[1, 0] - data[0, 0])
    else:
        dt = 1.0
    diverged_at: Optional[int] = None
    if meta.get("diverged_at", "none") != "none":
        diverged_at = int(meta["diverged_at"])
    return Trajectory(t0=t0, dt=dt, samples=data[:, 1:].copy(), diverged_at=diverged_at)


def write_bifurcation_csv(
    diagram: BifurcationDiagram,
    destination: PathLike,
    metadata: Sequence[str] = (),
) -> None:
    """CSV with header ``parameter,value``, one row per attractor sample.

    The swept parameter name, the sampled component, and the list of
    parameter values whose runs diverged are recorded as comment metadata.
    """
    diverged_vals = [
        format_float(v)
        for v, flag in zip(diagram.parameter_values, diagram.diverged)
        if flag
    ]
    with _open_out(destination) as fh:
        for line in metadata:
            fh.write(f"# {line}\n")
        fh.write(f"# parameter: {diagram.parameter_name}\n")
        fh.write(f"# component: {diagram.component}\n")
        fh.write(f"# diverged_params: {','.join(diverged_vals) if diverged_vals else 'none'}\n")
        fh.write("parameter,value\n")
        for v, samples in zip(diagram.parameter_values, diagram.attractor_samples):
            pv = format_float(v)
            for s in samples:
                fh.write(f"{pv},{format_float(s)}\n")


# ---------------------------------------------------------------------------
# SVG rendering

_PALETTE = (
    "#1f77b4",
    "#ff7f0e",
    "#2ca02c",
    "#d62728",
    "#9467bd",
    "#8c564b",
    "#e377c2",
    "#7f7f7f",
    "#bcbd22",
    "#17becf",
)

_SVG_W, _SVG_H = 960, 600
_MARGIN_L, _MARGIN_R, _MARGIN_B = 64, 18, 46


def _extent(values: list[np.ndarray]) -> tuple[float, float]:
    lo = min(float(np.min(v)) for v in values if v.size)
    hi = max(float(np.max(v)) for v in values if v.size)
    if lo == hi:
        pad = max(0.5, abs(lo) * 0.05)
        return lo - pad, hi + pad
    span = hi - lo
    return lo - 0.04 * span, hi + 0.04 * span


def _ticks(lo: float, hi: float, target: int = 6) -> list[float]:
    span = hi - lo
    raw = span / target
    mag = 10.0 ** math.floor(math.log10(raw))
    step = next(m * mag for m in (1.0, 2.0, 5.0, 10.0) if span / (m * mag) <= target)
    k0 = math.ceil(lo / step - 1e-9)
    k1 = math.floor(hi / step + 1e-9)
    return [k * step for k in range(k0, k1 + 1)]


def _esc(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def render_plot_svg(
    series: Sequence[tuple[np.ndarray, np.ndarray]],
    labels: Sequence[str],
    destination: PathLike,
    kind: str = "line",
    title: Optional[str] = None,
    x_label: str = "",
    y_label: str = "",
) -> None:
    """Standalone SVG 1.1 plot: one polyline (or scatter group) per series.

    Axis ranges come from the data extents; ticks, legend, and colors are
    all deterministic functions of the input, so identical calls produce
    byte-identical files. Raises ValueError when every series is empty.
    """
    if kind not in ("line", "scatter"):
        raise ValueError(f"kind must be 'line' or 'scatter', got {kind!r}")
    if len(series) != len(labels):
        raise ValueError(f"{len(series)} series but {len(labels)} labels")
    parsed = []
    for xs, ys in series:
        xa = np.asarray(xs, dtype=np.float64)
        ya = np.asarray(ys, dtype=np.float64)
        if xa.shape != ya.shape:
            raise ValueError("series x and y lengths differ")
        parsed.append((xa, ya))
    if not parsed or all(xa.size == 0 for xa, _ in parsed):
        raise ValueError("nothing to plot: every series is empty")

    x_lo, x_hi = _extent([xa for xa, _ in parsed])
    y_lo, y_hi = _extent([ya for _, ya in parsed])
    margin_t = 40 if title else 18
    px0, px1 = _MARGIN_L, _SVG_W - _MARGIN_R
    py0, py1 = _SVG_H - _MARGIN_B, margin_t

    def sx(v: float) -> float:
        return px0 + (v - x_lo) / (x_hi - x_lo) * (px1 - px0)

    def sy(v: float) -> float:
        return py0 + (v - y_lo) / (y_hi - y_lo) * (py1 - py0)

    out: list[str] = []
    out.append('<?xml version="1.0" encoding="UTF-8"?>')
    out.append(
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        f'width="{_SVG_W}" height="{_SVG_H}" viewBox="0 0 {_SVG_W} {_SVG_H}" '
        f'font-family="DejaVu Sans, sans-serif" font-size="12">'
    )
    out.append(f'<rect width="{_SVG_W}" height="{_SVG_H}" fill="#ffffff"/>')
    out.append(
        f'<rect x="{px0}" y="{py1}" width="{px1 - px0}" height="{py0 - py1}" '
        f'fill="none" stroke="#000000"/>'
    )
    for tv in _ticks(x_lo, x_hi):
        px = sx(tv)
        out.append(
            f'<line x1="{px:.2f}" y1="{py0}" x2="{px:.2f}" y2="{py0 + 5}" stroke="#000000"/>'
        )
        out.append(
            f'<text x="{px:.2f}" y="{py0 + 18}" text-anchor="middle">{tv:g}</text>'
        )
    for tv in _ticks(y_lo, y_hi):
        py = sy(tv)
        out.append(
            f'<line x1="{px0 - 5}" y1="{py:.2f}" x2="{px0}" y2="{py:.2f}" stroke="#000000"/>'
        )
        out.append(
            f'<text x="{px0 - 8}" y="{py + 4:.2f}" text-anchor="end">{tv:g}</text>'
        )
    if x_label:
        out.append(
            f'<text x="{(px0 + px1) / 2:.2f}" y="{_SVG_H - 10}" '
            f'text-anchor="middle">{_esc(x_label)}</text>'
        )
    if y_label:
        cy = (py0 + py1) / 2
        out.append(
            f'<text x="16" y="{cy:.2f}" text-anchor="middle" '
            f'transform="rotate(-90 16 {cy:.2f})">{_esc(y_label)}</text>'
        )
    if title:
        out.append(
            f'<text x="{(px0 + px1) / 2:.2f}" y="24" text-anchor="middle" '
            f'font-size="15">{_esc(title)}</text>'
        )

    for idx, (xa, ya) in enumerate(parsed):
        color = _PALETTE[idx % len(_PALETTE)]
        if xa.size == 0:
            continue
        if kind == "line":
            pts = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xa, ya))
            out.append(
                f'<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{pts}"/>'
            )
        else:
            group = [f'<g fill="{color}">']
            group += [
                f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="2"/>' for x, y in zip(xa, ya)
            ]
            group.append("</g>")
            out.append("".join(group))

    legend_x = px1 - 170
    legend_y = py1 + 10
    out.append(
        f'<rect x="{legend_x - 8}" y="{legend_y - 4}" width="170" '
        f'height="{18 * len(labels) + 8}" fill="#ffffff" fill-opacity="0.85" stroke="#888888"/>'
    )
    for idx, label in enumerate(labels):
        color = _PALETTE[idx % len(_PALETTE)]
        ly = legend_y + 18 * idx + 9
        out.append(
            f'<line x1="{legend_x}" y1="{ly}" x2="{legend_x + 22}" y2="{ly}" '
            f'stroke="{color}" stroke-width="2"/>'
        )
        out.append(f'<text x="{legend_x + 28}" y="{ly + 4}">{_esc(label)}</text>')
    out.append("</svg>")
    with _open_out(destination) as fh:
        fh.write("\n".join(out) + "\n")
