"""Exact-event simulation of trapped atom number N(t) and coupled count k(t).

Each of the N trapped atoms is pumped between the uncoupled and the coupled
hyperfine manifold.  With k atoms coupled the chain jumps k -> k+1 at rate
``y * gamma_10`` (k < N) and k -> k-1 at rate ``gamma_10 / k**2``.  Every
trapped atom is independently lost at rate ``Gamma_loss``; the departing atom
is coupled with probability k/N.
"""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import poisson

from .physics import ManifoldModel, steady_state_distribution

try:
    from numba import njit
except ImportError:  # pragma: no cover
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f

BLOCK = 1 << 16
FIRST_BLOCK = 256
DEFAULT_N_MAX = 20


@dataclass(frozen=True)
class RateModel:
    gamma_10: float = 1.0e5
    y: float = 0.5
    Gamma_loss: float = 8.5
    i1_over_i0: float = 3.42e-4

    def __post_init__(self):
        if not self.gamma_10 > 0:
            raise ValueError("gamma_10 must be positive")
        if not self.y > 0:
            raise ValueError("y must be positive")
        if not self.Gamma_loss >= 0:
            raise ValueError("Gamma_loss must be non-negative")
        if not 0 < self.i1_over_i0 <= 1:
            raise ValueError("i1_over_i0 must lie in (0, 1]")

    @property
    def gamma_01(self) -> float:
        return self.y * self.gamma_10

    @property
    def timescale_warning(self) -> bool:
        """True when pumping is no longer fast compared with trap loss."""
        return self.gamma_10 < 100 * self.Gamma_loss


@dataclass(frozen=True)
class InitialDistribution:
    """Distribution of the trapped atom number at the start of a trajectory."""

    kind: str
    probs: tuple[float, ...]
    mu: float | None = None

    @classmethod
    def fixed(cls, n: int) -> "InitialDistribution":
        if n < 0:
            raise ValueError("n must be non-negative")
        p = [0.0] * (n + 1)
        p[n] = 1.0
        return cls("fixed", tuple(p))

    @classmethod
    def poisson(cls, mu: float, n_max: int = 15) -> "InitialDistribution":
        if not mu > 0:
            raise ValueError("mu must be positive")
        p = poisson.pmf(np.arange(n_max + 1), mu)
        return cls("poisson", tuple(p / p.sum()), mu=mu)

    @classmethod
    def explicit(cls, probs) -> "InitialDistribution":
        p = np.asarray(probs, dtype=float)
        if p.ndim != 1 or p.size == 0 or np.any(p < 0) or not np.isfinite(p).all():
            raise ValueError("probabilities must be a non-empty, non-negative vector")
        if abs(p.sum() - 1.0) > 1e-9:
            raise ValueError(f"probabilities sum to {p.sum()!r}, not 1")
        return cls("explicit", tuple(p / p.sum()))

    @property
    def n_max(self) -> int:
        return len(self.probs) - 1

    def sample(self, rng: np.random.Generator) -> int:
        return int(rng.choice(len(self.probs), p=np.asarray(self.probs)))


@dataclass
class EventTrajectory:
    """Piecewise-constant (N, k) record.

    ``times[i]`` is when the state changes to ``(n[i], k[i])``; before the
    first event the state is ``(n_init, k_init)``.
    """

    t_start: float
    t_end: float
    n_init: int
    k_init: int
    times: np.ndarray = field(default_factory=lambda: np.empty(0))
    n: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int16))
    k: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int16))

    def __len__(self):
        return len(self.times)

    def segments(self):
        """Return ``(starts, ends, n, k)`` covering [t_start, t_end]."""
        starts = np.concatenate(([self.t_start], self.times))
        ends = np.concatenate((self.times, [self.t_end]))
        n = np.concatenate(([self.n_init], self.n)).astype(np.int64)
        k = np.concatenate(([self.k_init], self.k)).astype(np.int64)
        return starts, ends, n, k

    def n_at(self, t):
        """Trapped atom number at time(s) t."""
        idx = np.searchsorted(self.times, t, side="right")
        n = np.concatenate(([self.n_init], self.n))
        return n[idx]

    def loss_events(self):
        """Times and new (N, k) at which an atom left the trap."""
        n_prev = np.concatenate(([self.n_init], self.n[:-1]))
        lost = self.n < n_prev
        return self.times[lost], self.n[lost], self.k[lost]


@njit(cache=True, nogil=True)
def _advance(t, t_end, n, k, g01, g10, loss, exps, unis, out_t, out_n, out_k):
    # Consumes one (exponential, uniform) pair per attempted event.  Stops when
    # t_end is passed, the draws run out, or the output buffer is full.
    i = 0
    m = 0
    done = False
    while i < exps.shape[0] and m < out_t.shape[0]:
        up = g01 if k < n else 0.0
        down = g10 / (k * k) if k > 0 else 0.0
        lossr = loss * n
        total = up + down + lossr
        if total <= 0.0:
            done = True
            break
        t_new = t + exps[i] / total
        u = unis[i] * total
        i += 1
        if t_new >= t_end:
            done = True
            break
        t = t_new
        if u < up:
            k += 1
        elif u < up + down:
            k -= 1
        else:
            if u - up - down < loss * k:
                k -= 1
            n -= 1
        out_t[m] = t
        out_n[m] = n
        out_k[m] = k
        m += 1
    return t, n, k, i, m, done


def derive_seed(master_seed: int, *keys: int) -> int:
    """Deterministic 64-bit child seed for ``(master_seed, *keys)``."""
    ss = np.random.SeedSequence([int(master_seed), *map(int, keys)])
    return int(ss.generate_state(1, np.uint64)[0])


def simulate_trajectory(rates: RateModel, init: InitialDistribution, t_span, seed: int,
                        n_max: int = DEFAULT_N_MAX) -> EventTrajectory:
    """Simulate one trajectory on ``t_span = (t_start, t_end)``.

    The initial atom number is drawn from ``init`` and the initial coupled
    count from the steady state for that number.  The same inputs and seed
    always give the same trajectory.
    """
    t_start, t_end = map(float, t_span)
    if not (math.isfinite(t_start) and math.isfinite(t_end) and t_end > t_start):
        raise ValueError(f"invalid t_span {t_span!r}")
    if np.any(np.asarray(init.probs)[n_max + 1:] > 0):
        raise ValueError(f"initial distribution reaches N={init.n_max} > n_max={n_max}")
    rng = np.random.default_rng(seed)
    n0 = init.sample(rng)
    p_k = steady_state_distribution(ManifoldModel(rates.y, n_max), n0)
    k0 = int(rng.choice(n0 + 1, p=p_k))

    t, n, k = t_start, n0, k0
    chunks_t, chunks_n, chunks_k = [], [], []
    out_t = np.empty(BLOCK)
    out_n = np.empty(BLOCK, dtype=np.int16)
    out_k = np.empty(BLOCK, dtype=np.int16)
    done = n0 == 0
    size = FIRST_BLOCK
    while not done:
        exps = rng.standard_exponential(size)
        unis = rng.random(size)
        start = 0
        while start < size and not done:
            t, n, k, used, m, done = _advance(t, t_end, n, k, rates.gamma_01, rates.gamma_10,
                                              rates.Gamma_loss, exps[start:], unis[start:],
                                              out_t, out_n, out_k)
            start += used
            if m:
                chunks_t.append(out_t[:m].copy())
                chunks_n.append(out_n[:m].copy())
                chunks_k.append(out_k[:m].copy())
        size = min(4 * size, BLOCK)
    if chunks_t:
        times, ns, ks = np.concatenate(chunks_t), np.concatenate(chunks_n), np.concatenate(chunks_k)
    else:
        times, ns, ks = np.empty(0), np.empty(0, dtype=np.int16), np.empty(0, dtype=np.int16)
    return EventTrajectory(t_start, t_end, n0, k0, times, ns, ks)


def batch_simulate(rates: RateModel, init: InitialDistribution, t_span, n_traces: int,
                   master_seed: int, n_max: int = DEFAULT_N_MAX,
                   max_workers: int | None = None) -> list[EventTrajectory]:
    """Simulate ``n_traces`` trajectories, trace i seeded by ``derive_seed(master_seed, i)``.

    Output order and content do not depend on ``max_workers``.
    """
    if n_traces < 1:
        raise ValueError("n_traces must be at least 1")
    if rates.timescale_warning:
        warnings.warn("gamma_10 < 100 * Gamma_loss: telegraph switching is not fast "
                      "compared with trap loss", RuntimeWarning, stacklevel=2)
    seeds = [derive_seed(master_seed, i) for i in range(n_traces)]

    def one(s):
        return simulate_trajectory(rates, init, t_span, s, n_max=n_max)

    if max_workers and max_workers > 1:
        with ThreadPoolExecutor(max_workers) as pool:
            return list(pool.map(one, seeds))
    return [one(s) for s in seeds]


def occupancy_fractions(traj: EventTrajectory) -> dict[tuple[int, int], float]:
    """Fraction of [t_start, t_end] spent in each (N, k) state."""
    if not traj.t_end > traj.t_start:
        raise ValueError("trajectory has an empty time span")
    starts, ends, n, k = traj.segments()
    width = int(k.max()) + 1
    uniq, inv = np.unique(n * width + k, return_inverse=True)
    tot = np.bincount(inv, weights=ends - starts)
    tot = tot / tot.sum()
    return {(int(c // width), int(c % width)): float(f) for c, f in zip(uniq, tot)}


def k_occupancy(traj: EventTrajectory, n_bins: int = 1) -> np.ndarray:
    """Time fraction with k = 0..max(k), per equal-length time batch.

    Returns an array of shape ``(n_bins, kmax + 1)``.  Batches give
    batch-means standard errors for the correlated occupancy estimate.
    """
    starts, ends, _, k = traj.segments()
    edges = np.linspace(traj.t_start, traj.t_end, n_bins + 1)
    idx = np.searchsorted(starts, edges, side="right") - 1
    idx = np.clip(idx, 0, len(starts) - 1)
    out = np.empty((n_bins, int(k.max()) + 1))
    for kv in range(out.shape[1]):
        dur = np.where(k == kv, ends - starts, 0.0)
        before = np.concatenate(([0.0], np.cumsum(dur)))[idx]
        cum = before + np.where(k[idx] == kv, edges - starts[idx], 0.0)
        out[:, kv] = np.diff(cum) / np.diff(edges)
    return out
