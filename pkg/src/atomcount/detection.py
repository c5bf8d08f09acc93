"""Turn an event trajectory into a detected, band-limited transmission trace."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .gillespie import EventTrajectory
from .physics import intensity_level


@dataclass(frozen=True)
class DetectionConfig:
    sample_rate: float = 1.0e4
    detector_bandwidth: float = 1.0e3
    digital_bandwidth: float = 100.0
    noise_rms: float = 0.18
    amplitude_scale: float = math.sqrt(0.02)

    def __post_init__(self):
        if not self.sample_rate > 2 * self.detector_bandwidth > 2 * self.digital_bandwidth > 0:
            raise ValueError("need sample_rate > 2*detector_bandwidth > 2*digital_bandwidth > 0")
        if not self.noise_rms >= 0:
            raise ValueError("noise_rms must be non-negative")
        if not self.amplitude_scale > 0:
            raise ValueError("amplitude_scale must be positive")

    @property
    def dt(self) -> float:
        return 1.0 / self.sample_rate


@dataclass
class Trace:
    """Uniformly sampled trace; sample i covers [t0 + i*dt, t0 + (i+1)*dt)."""

    dt: float
    t0: float
    samples: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim != 1 or self.samples.size < 1:
            raise ValueError("a trace needs at least one sample")
        if not np.isfinite(self.samples).all():
            raise ValueError("trace samples must be finite")
        self.metadata.setdefault("units", "normalized")
        self.metadata.setdefault("filters", [])

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.samples.size)

    @property
    def t_end(self) -> float:
        return self.t0 + self.dt * self.samples.size

    @property
    def units(self) -> str:
        return self.metadata["units"]

    @property
    def filters(self) -> list[float]:
        return list(self.metadata["filters"])

    def to_physical(self, amplitude_scale: float) -> "Trace":
        """Trace in |<a>| units: normalized samples times ``amplitude_scale``."""
        if self.units != "normalized":
            raise ValueError("trace is already in physical units")
        meta = dict(self.metadata, units="amplitude", amplitude_scale=amplitude_scale)
        return Trace(self.dt, self.t0, self.samples * amplitude_scale, meta)

    def to_normalized(self) -> "Trace":
        if self.units == "normalized":
            return self
        scale = float(self.metadata["amplitude_scale"])
        meta = dict(self.metadata, units="normalized")
        return Trace(self.dt, self.t0, self.samples / scale, meta)


@dataclass(frozen=True)
class PiecewiseSignal:
    """Right-continuous step function: ``values[i]`` holds on [breaks[i], breaks[i+1])."""

    breaks: np.ndarray
    values: np.ndarray
    t_end: float

    @property
    def t_start(self) -> float:
        return float(self.breaks[0])

    def integral(self, t) -> np.ndarray:
        """Integral of the signal from t_start to t (t within the span)."""
        t = np.asarray(t, dtype=float)
        widths = np.diff(np.append(self.breaks, self.t_end))
        cum = np.concatenate(([0.0], np.cumsum(self.values * widths)))
        idx = np.clip(np.searchsorted(self.breaks, t, side="right") - 1, 0, len(self.breaks) - 1)
        return cum[idx] + self.values[idx] * (t - self.breaks[idx])

    def mean(self) -> float:
        return float(self.integral(self.t_end) / (self.t_end - self.t_start))


def render_levels(traj: EventTrajectory, i1_over_i0: float) -> PiecewiseSignal:
    """Normalized transmission s(t): 1 with no atom coupled, I_k/I_0 otherwise."""
    starts, _, _, k = traj.segments()
    return PiecewiseSignal(starts, intensity_level(k, i1_over_i0), traj.t_end)


def lowpass(x, bandwidth: float, dt: float) -> np.ndarray:
    """Single-pole IIR low-pass with -3 dB frequency ``bandwidth`` and unity DC gain.

    Uses the step-invariant discretization, so a unit step applied at sample
    j gives ``1 - exp(-(i - j + 1) * dt / tau)`` at sample i, with
    tau = 1 / (2 pi bandwidth).  The state starts at the first input value.
    """
    if not 0 < bandwidth < 0.5 / dt:
        raise ValueError(f"bandwidth {bandwidth!r} Hz must lie in (0, sample_rate/2)")
    x = np.asarray(x, dtype=float)
    a = -math.expm1(-2.0 * math.pi * bandwidth * dt)
    y, _ = lfilter([a], [1.0, a - 1.0], x, zi=[(1.0 - a) * x[0]])
    return y


def filter_trace(trace: Trace, bandwidth: float) -> Trace:
    """Apply one more low-pass stage and record it in the filter cascade."""
    meta = dict(trace.metadata, filters=trace.filters + [float(bandwidth)])
    return Trace(trace.dt, trace.t0, lowpass(trace.samples, bandwidth, trace.dt), meta)


def sample_and_detect(signal: PiecewiseSignal, cfg: DetectionConfig, seed: int,
                      apply_digital: bool = True) -> Trace:
    """Average s(t) over each sample interval, add white noise, then low-pass.

    The detector stage is always applied; the digital stage only when
    ``apply_digital`` is set.
    """
    dt = cfg.dt
    span = signal.t_end - signal.t_start
    n = int(math.floor(span / dt + 1e-9))
    if n < 1:
        raise ValueError("signal span is shorter than one sample")
    edges = signal.t_start + dt * np.arange(n + 1)
    x = np.diff(signal.integral(edges)) / dt
    if cfg.noise_rms > 0:
        x = x + np.random.default_rng(seed).normal(0.0, cfg.noise_rms, n)
    meta = {"seed": int(seed), "units": "normalized", "filters": [],
            "amplitude_scale": cfg.amplitude_scale, "noise_rms": cfg.noise_rms}
    trace = filter_trace(Trace(dt, signal.t_start, x, meta), cfg.detector_bandwidth)
    if apply_digital:
        trace = filter_trace(trace, cfg.digital_bandwidth)
    return trace


def detect_trajectory(traj: EventTrajectory, i1_over_i0: float, cfg: DetectionConfig,
                      seed: int, apply_digital: bool = True) -> Trace:
    trace = sample_and_detect(render_levels(traj, i1_over_i0), cfg, seed, apply_digital)
    trace.metadata["n_events"] = len(traj)
    return trace


# --- CSV I/O ---------------------------------------------------------------

def _fmt(v: float) -> str:
    return f"{v:.9g}"


def _format_meta(key, value) -> str:
    if isinstance(value, (list, tuple)):
        return ",".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return _fmt(value)
    return str(value)


def write_trace(trace: Trace, path) -> None:
    """Write ``# key=value`` header lines, then ``time,amplitude`` rows."""
    path = Path(path)
    head = {"dt": trace.dt, "t0": trace.t0}
    head.update(trace.metadata)
    lines = [f"# {k}={_format_meta(k, v)}" for k, v in head.items()]
    t = trace.times
    body = np.char.add(np.char.add(np.char.mod("%.9g", t), ","), np.char.mod("%.9g", trace.samples))
    lines.extend(body.tolist())
    path.write_text("\n".join(lines) + "\n")


def _parse_meta(key: str, text: str):
    if key == "filters":
        return [float(v) for v in text.split(",") if v]
    if key in ("seed", "n_events"):
        return int(text)
    if key == "units":
        return text
    try:
        return float(text)
    except ValueError:
        return text


def read_trace(path) -> Trace:
    """Read a trace written by :func:`write_trace`.

    Raises ``ValueError`` naming the file and line of the first malformed row.
    """
    path = Path(path)
    lines = path.read_text().splitlines()
    meta = {}
    body_start = 0
    for i, line in enumerate(lines):
        if not line.startswith("#"):
            body_start = i
            break
        key, sep, value = line[1:].strip().partition("=")
        if not sep:
            raise ValueError(f"{path}:{i + 1}: malformed header line {line!r}")
        meta[key.strip()] = _parse_meta(key.strip(), value.strip())
    else:
        body_start = len(lines)
    for key in ("dt", "t0"):
        if key not in meta:
            raise ValueError(f"{path}: missing '# {key}=' header")
    body = lines[body_start:]
    try:
        data = np.loadtxt(body, delimiter=",", ndmin=2)
        if data.shape[1] != 2:
            raise ValueError
    except ValueError:
        for j, line in enumerate(body):
            parts = line.split(",")
            try:
                if len(parts) != 2:
                    raise ValueError
                [float(p) for p in parts]
            except ValueError:
                raise ValueError(f"{path}:{body_start + j + 1}: malformed sample row {line!r}") from None
        raise ValueError(f"{path}: malformed sample rows")
    if data.shape[0] == 0:
        raise ValueError(f"{path}: no samples")
    dt = meta.pop("dt")
    t0 = meta.pop("t0")
    return Trace(dt, t0, data[:, 1], meta)


def write_trajectory(traj: EventTrajectory, path, losses_only: bool = False) -> None:
    """Write ``time,N,k`` rows, starting with the initial state at t_start."""
    if losses_only:
        times, ns, ks = traj.loss_events()
    else:
        times, ns, ks = traj.times, traj.n, traj.k
    t = np.concatenate(([traj.t_start], times))
    n = np.concatenate(([traj.n_init], ns)).astype(np.int64)
    k = np.concatenate(([traj.k_init], ks)).astype(np.int64)
    lines = [f"# t_start={_fmt(traj.t_start)}", f"# t_end={_fmt(traj.t_end)}", "time,N,k"]
    body = np.char.add(np.char.add(np.char.mod("%.9g", t), ","),
                       np.char.add(np.char.add(n.astype(str), ","), k.astype(str)))
    lines.extend(body.tolist())
    Path(path).write_text("\n".join(lines) + "\n")
