"""Amplitude histograms, plateau bands and time-resolved populations."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import find_peaks

from .detection import Trace, filter_trace

DEFAULT_BANDWIDTH = 100.0


class BandError(ValueError):
    """Band detection failed; lower n_resolved or pass manual boundaries."""


@dataclass
class Histogram1D:
    bin_edges: np.ndarray
    counts: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        if np.any(np.diff(self.bin_edges) <= 0):
            raise ValueError("bin edges must be strictly increasing")
        if len(self.counts) != len(self.bin_edges) - 1:
            raise ValueError("counts length must be len(bin_edges) - 1")

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[1:] + self.bin_edges[:-1])

    @property
    def width(self) -> float:
        return float(np.max(np.diff(self.bin_edges)))


@dataclass
class Histogram2D:
    amplitude_edges: np.ndarray
    time_edges: np.ndarray
    counts: np.ndarray  # shape (amplitude bins, time bins)

    def __post_init__(self):
        if np.any(np.diff(self.amplitude_edges) <= 0) or np.any(np.diff(self.time_edges) <= 0):
            raise ValueError("edges must be strictly increasing")
        if self.counts.shape != (len(self.amplitude_edges) - 1, len(self.time_edges) - 1):
            raise ValueError("counts shape inconsistent with edges")

    def time_marginal(self) -> Histogram1D:
        return Histogram1D(self.amplitude_edges, self.counts.sum(axis=1))


@dataclass
class BandSet:
    """Plateau bands: N = 0..n_resolved individually plus an aggregate band below.

    ``boundaries[i]`` is the lower edge of band N = i; the aggregate band
    spans [0, boundaries[-1]).
    """

    peaks: list[tuple[float, int]]
    boundaries: list[float]
    n_resolved: int
    manual: bool = False

    def __post_init__(self):
        b = np.asarray(self.boundaries, dtype=float)
        if len(b) != self.n_resolved + 1:
            raise ValueError(f"need {self.n_resolved + 1} boundaries, got {len(b)}")
        if np.any(np.diff(b) >= 0):
            raise ValueError("boundaries must be strictly decreasing")
        if b[-1] <= 0:
            raise ValueError("boundaries must be positive")
        for pos, label in self.peaks:
            if self.band_of(pos) != label:
                raise ValueError(f"peak at {pos} does not lie inside band {label}")

    @property
    def n_bands(self) -> int:
        return self.n_resolved + 2

    @property
    def labels(self) -> list[str]:
        return [str(n) for n in range(self.n_resolved + 1)] + [f"ge{self.n_resolved + 1}"]

    def band_of(self, values):
        """Band index per value: i for N = i, n_resolved + 1 for the aggregate."""
        asc = np.asarray(self.boundaries, dtype=float)[::-1]
        idx = len(asc) - np.searchsorted(asc, values, side="right")
        return idx


@dataclass
class PopulationCurves:
    """Phi_N(t) on bin-center times; rows are bands N = 0..n_resolved, aggregate."""

    time_grid: np.ndarray
    phi: np.ndarray
    t0: float
    boundaries: list[float] = field(default_factory=list)

    @property
    def n_resolved(self) -> int:
        return self.phi.shape[0] - 2


def _digital(trace: Trace, bandwidth: float | None) -> Trace:
    trace = trace.to_normalized()
    if bandwidth is None or any(abs(b - bandwidth) < 1e-9 for b in trace.filters):
        return trace
    return filter_trace(trace, bandwidth)


def _window_samples(trace: Trace, t_window):
    t = trace.times
    sel = (t >= t_window[0]) & (t < t_window[1])
    return t[sel], trace.samples[sel]


def _amp_index(values, edges):
    # out-of-range samples are counted in the edge bins
    return np.clip(np.searchsorted(edges, values, side="right") - 1, 0, len(edges) - 2)


def amplitude_edges(bins: int = 100, amp_range=(0.0, 1.2)) -> np.ndarray:
    if bins < 10:
        raise ValueError("need at least 10 amplitude bins")
    return np.linspace(amp_range[0], amp_range[1], bins + 1)


def histogram_amplitudes(traces, t_window, bins: int = 100, amp_range=(0.0, 1.2),
                         bandwidth: float | None = DEFAULT_BANDWIDTH) -> Histogram1D:
    """Pool the digitally filtered samples of all traces with t in ``t_window``.

    A trace whose filter cascade already contains ``bandwidth`` is not
    filtered again.
    """
    if not traces:
        raise ValueError("no traces")
    edges = amplitude_edges(bins, amp_range)
    counts = np.zeros(bins, dtype=np.int64)
    for tr in traces:
        _, v = _window_samples(_digital(tr, bandwidth), t_window)
        counts += np.bincount(_amp_index(v, edges), minlength=bins)
    if counts.sum() == 0:
        raise ValueError(f"no samples in window {t_window!r}")
    return Histogram1D(edges, counts)


def histogram_2d(traces, t_window, amplitude_bins: int = 100, time_bin: float = 0.01,
                 amp_range=(0.0, 1.2), bandwidth: float | None = DEFAULT_BANDWIDTH) -> Histogram2D:
    """Counts binned by amplitude and time; time bins of width ``time_bin`` from t_window[0]."""
    if not traces:
        raise ValueError("no traces")
    a_edges = amplitude_edges(amplitude_bins, amp_range)
    n_t = int(np.ceil((t_window[1] - t_window[0]) / time_bin - 1e-9))
    if n_t < 1:
        raise ValueError(f"empty window {t_window!r}")
    t_edges = t_window[0] + time_bin * np.arange(n_t + 1)
    t_edges[-1] = t_window[1]
    counts = np.zeros((amplitude_bins, n_t), dtype=np.int64)
    for tr in traces:
        t, v = _window_samples(_digital(tr, bandwidth), t_window)
        ti = np.clip(np.searchsorted(t_edges, t, side="right") - 1, 0, n_t - 1)
        flat = _amp_index(v, a_edges) * n_t + ti
        counts += np.bincount(flat, minlength=amplitude_bins * n_t).reshape(amplitude_bins, n_t)
    if counts.sum() == 0:
        raise ValueError(f"no samples in window {t_window!r}")
    return Histogram2D(a_edges, t_edges, counts)


def _valley(counts, centers, lo: int, hi: int) -> float:
    """Center of the minimum-count bin in counts[lo:hi]; ties give the midpoint."""
    seg = counts[lo:hi]
    where = np.flatnonzero(seg == seg.min()) + lo
    return float(0.5 * (centers[where[0]] + centers[where[-1]]))


def find_bands(hist: Histogram1D, min_prominence: float = 0.002, n_resolved: int = 2,
               boundaries=None) -> BandSet:
    """Locate plateau peaks and place band boundaries in the valleys between them.

    Peaks are local maxima whose prominence exceeds ``min_prominence`` times
    the largest count.  The ``n_resolved + 1`` highest-amplitude peaks are
    labelled N = 0, 1, ... in descending amplitude.  The lowest boundary sits
    in the valley below the last labelled peak (towards the next peak, or the
    bottom of the histogram).  Passing ``boundaries`` skips detection.
    """
    counts = np.asarray(hist.counts, dtype=float)
    centers = hist.centers
    if boundaries is not None:
        b = [float(v) for v in boundaries]
        n_resolved = len(b) - 1
        band = BandSet([], b, n_resolved, manual=True).band_of(centers)
        peaks = []
        for label in range(n_resolved + 1):
            sel = np.flatnonzero(band == label)
            if sel.size and counts[sel].max() > 0:
                peaks.append((float(centers[sel[np.argmax(counts[sel])]]), label))
        return BandSet(peaks, b, n_resolved, manual=True)

    # edge bins also hold clipped out-of-range samples, so they never count as peaks
    idx, _ = find_peaks(counts, prominence=min_prominence * counts.max())
    idx = np.sort(idx)[::-1]
    if len(idx) < n_resolved + 1:
        raise BandError(f"found {len(idx)} resolvable peaks, need {n_resolved + 1}; "
                        "lower n_resolved or supply manual boundaries")
    chosen = idx[: n_resolved + 1]
    bounds = [_valley(counts, centers, chosen[i + 1] + 1, chosen[i]) if chosen[i] - chosen[i + 1] > 1
              else float(hist.bin_edges[chosen[i]]) for i in range(n_resolved)]
    last = chosen[-1]
    lower = idx[n_resolved + 1] + 1 if len(idx) > n_resolved + 1 else 0
    bounds.append(_valley(counts, centers, lower, last) if last > lower else float(hist.bin_edges[last]))
    peaks = [(float(centers[i]), n) for n, i in enumerate(chosen)]
    return BandSet(peaks, bounds, n_resolved)


def population_curves(traces, bands: BandSet, t0: float, time_bin: float = 0.01,
                      t_end: float | None = None,
                      bandwidth: float | None = DEFAULT_BANDWIDTH) -> PopulationCurves:
    """Fraction of traces in each band, per time bin, from the sample at the bin center."""
    if not traces:
        raise ValueError("no traces")
    traces = [_digital(tr, bandwidth) for tr in traces]
    start = max(tr.t0 for tr in traces)
    stop = min(tr.t_end for tr in traces)
    if not start - 1e-12 <= t0 < stop:
        raise ValueError(f"t0={t0} outside the common trace span [{start}, {stop})")
    stop = stop if t_end is None else min(stop, t_end)
    n_t = int(np.floor((stop - t0) / time_bin + 1e-9))
    if n_t < 1:
        raise ValueError("analysis window shorter than one time bin")
    centers = t0 + time_bin * (np.arange(n_t) + 0.5)
    votes = np.zeros((bands.n_bands, n_t))
    for tr in traces:
        i = np.clip(np.floor((centers - tr.t0) / tr.dt + 1e-9).astype(int), 0, tr.samples.size - 1)
        b = bands.band_of(tr.samples[i])
        votes[b, np.arange(n_t)] += 1
    return PopulationCurves(centers, votes / len(traces), t0, list(bands.boundaries))


# --- CSV I/O ---------------------------------------------------------------

def write_histogram(hist: Histogram1D, path) -> None:
    rows = ["bin_low,bin_high,count"]
    rows += [f"{lo:.9g},{hi:.9g},{int(c)}" for lo, hi, c in
             zip(hist.bin_edges[:-1], hist.bin_edges[1:], hist.counts)]
    Path(path).write_text("\n".join(rows) + "\n")


def read_histogram(path) -> Histogram1D:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    edges = np.append(data[:, 0], data[-1, 1])
    return Histogram1D(edges, data[:, 2].astype(np.int64))


def write_histogram_2d(hist: Histogram2D, path) -> None:
    rows = ["bin_low,bin_high,t_low,t_high,count"]
    a, t = hist.amplitude_edges, hist.time_edges
    for i in range(len(a) - 1):
        for j in range(len(t) - 1):
            rows.append(f"{a[i]:.9g},{a[i + 1]:.9g},{t[j]:.9g},{t[j + 1]:.9g},{int(hist.counts[i, j])}")
    Path(path).write_text("\n".join(rows) + "\n")


def write_bands(bands: BandSet, path) -> None:
    lines = [f"n_resolved={bands.n_resolved}",
             f"manual={str(bands.manual).lower()}",
             "boundaries=" + ",".join(f"{b:.9g}" for b in bands.boundaries),
             "peaks=" + ",".join(f"{n}:{p:.9g}" for p, n in bands.peaks)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_bands(path) -> BandSet:
    kv = dict(line.split("=", 1) for line in Path(path).read_text().splitlines() if "=" in line)
    peaks = []
    for item in filter(None, kv.get("peaks", "").split(",")):
        n, p = item.split(":")
        peaks.append((float(p), int(n)))
    return BandSet(peaks, [float(b) for b in kv["boundaries"].split(",")],
                   int(kv["n_resolved"]), kv.get("manual") == "true")


def write_populations(curves: PopulationCurves, path) -> None:
    n_res = curves.n_resolved
    head = ["t"] + [f"phi{n}" for n in range(n_res + 1)] + [f"phi_ge{n_res + 1}"]
    lines = [f"# t0={curves.t0:.9g}"]
    if curves.boundaries:
        lines.append("# boundaries=" + ",".join(f"{b:.9g}" for b in curves.boundaries))
    lines.append(",".join(head))
    for j, t in enumerate(curves.time_grid):
        lines.append(",".join([f"{t:.9g}"] + [f"{v:.9g}" for v in curves.phi[:, j]]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_populations(path) -> PopulationCurves:
    path = Path(path)
    meta, rows, header = {}, [], None
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if line.startswith("#"):
            k, _, v = line[1:].strip().partition("=")
            meta[k.strip()] = v.strip()
        elif header is None:
            header = line.split(",")
            if header[0] != "t" or len(header) < 3:
                raise ValueError(f"{path}:{lineno}: unexpected header {line!r}")
        elif line.strip():
            try:
                vals = [float(x) for x in line.split(",")]
            except ValueError:
                raise ValueError(f"{path}:{lineno}: malformed row {line!r}") from None
            if len(vals) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} columns")
            rows.append(vals)
    if not rows:
        raise ValueError(f"{path}: no population rows")
    data = np.array(rows)
    t0 = float(meta.get("t0", data[0, 0]))
    bounds = [float(b) for b in meta["boundaries"].split(",")] if "boundaries" in meta else []
    return PopulationCurves(data[:, 0], data[:, 1:].T.copy(), t0, bounds)
