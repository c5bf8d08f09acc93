"""Pure-death model of trap loss and the one-parameter fit of its rate."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import gammainc
from scipy.stats import binom, poisson

from .analysis import PopulationCurves

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class DeathModel:
    Gamma: float
    p_init: np.ndarray
    t0: float = 0.0

    def __post_init__(self):
        p = np.asarray(self.p_init, dtype=float)
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-10:
            raise ValueError("p_init must be a probability vector")
        if not self.Gamma >= 0:
            raise ValueError("Gamma must be non-negative")
        object.__setattr__(self, "p_init", p)


@dataclass
class FitResult:
    Gamma_hat: float
    mu_hat: float | None
    residual: float
    iterations: int
    at_bracket_edge: bool = False
    n_clamped: int = 0

    def to_text(self) -> str:
        mu = "nan" if self.mu_hat is None else f"{self.mu_hat:.9g}"
        return "\n".join([
            f"Gamma_hat={self.Gamma_hat:.9g}",
            f"mu_hat={mu}",
            f"residual={self.residual:.9g}",
            f"iterations={self.iterations}",
            f"at_bracket_edge={str(self.at_bracket_edge).lower()}",
            f"n_clamped={self.n_clamped}",
        ]) + "\n"


def survival(Gamma: float, dt) -> np.ndarray:
    return np.exp(-Gamma * np.asarray(dt, dtype=float))


def death_propagate(model: DeathModel, t) -> np.ndarray:
    """P_n(t) by binomial thinning of the initial distribution.

    Each of the m initial atoms survives independently with probability
    s = exp(-Gamma (t - t0)).  ``t`` may be an array; the result then has
    one row per time.
    """
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < model.t0):
        raise ValueError(f"t must not precede t0={model.t0}")
    s = survival(model.Gamma, np.atleast_1d(t_arr) - model.t0)
    m = np.arange(model.p_init.size)
    # kernel[j, m, n] = C(m, n) s_j^n (1 - s_j)^(m - n)
    kernel = binom.pmf(m[None, None, :], m[None, :, None], s[:, None, None])
    out = np.einsum("m,jmn->jn", model.p_init, kernel)
    return out[0] if t_arr.ndim == 0 else out


def poisson_tail(mu, n_min: int = 3):
    """P(N >= n_min) for N ~ Poisson(mu); for n_min = 3 this is 1 - e^-mu (1 + mu + mu^2/2)."""
    return gammainc(n_min, mu)


def solve_poisson_mu(phi_tail: float, n_min: int = 3, ftol: float = 1e-10,
                     xtol: float = 1e-13, max_iter: int = 300) -> float:
    """Poisson mean whose upper tail P(N >= n_min) equals ``phi_tail``, by bisection."""
    if not 0 < phi_tail < 1:
        raise ValueError(f"tail probability must lie in (0, 1), got {phi_tail!r}")
    lo, hi = 0.0, 1.0
    while poisson_tail(hi, n_min) < phi_tail:
        lo, hi = hi, 2.0 * hi
        if hi > 1e6:
            raise ValueError("could not bracket the Poisson mean; widen the bracket")
    mid = 0.5 * (lo + hi)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        f = poisson_tail(mid, n_min) - phi_tail
        if abs(f) <= ftol and hi - lo <= xtol * max(1.0, mid):
            break
        if f < 0:
            lo = mid
        else:
            hi = mid
    return mid


def build_initial_distribution(curves: PopulationCurves, n_max: int = 15):
    """Initial atom-number distribution from the first time bin of ``curves``.

    Resolved bands are copied directly.  The aggregate mass is spread over
    n_resolved+1..n_max with Poisson weights whose mean reproduces the
    aggregate as a Poisson tail.  Returns ``(p, mu)``; ``mu`` is None when
    the aggregate band is empty.
    """
    phi0 = np.asarray(curves.phi[:, 0], dtype=float)
    if np.any(phi0 < 0):
        raise ValueError("populations must be non-negative")
    n_res = curves.n_resolved
    if n_max <= n_res:
        raise ValueError("n_max must exceed the resolved atom numbers")
    phi0 = phi0 / phi0.sum()
    tail = phi0[-1]
    p = np.zeros(n_max + 1)
    p[: n_res + 1] = phi0[:-1]
    mu = None
    if tail > 0:
        if tail >= 1:
            raise ValueError("aggregate-only populations give no finite Poisson mean")
        mu = solve_poisson_mu(tail, n_res + 1)
        w = poisson.pmf(np.arange(n_res + 1, n_max + 1), mu)
        p[n_res + 1:] = tail * w / w.sum()
    return p / p.sum(), mu


def model_curves(p_init, Gamma: float, time_grid, n_resolved: int = 2) -> np.ndarray:
    """Band populations predicted by the death model, shaped like ``PopulationCurves.phi``."""
    time_grid = np.asarray(time_grid, dtype=float)
    P = death_propagate(DeathModel(Gamma, p_init, time_grid[0]), time_grid)
    resolved = P[:, : n_resolved + 1].T
    return np.vstack([resolved, 1.0 - resolved.sum(axis=0)])


def _clean(phi: np.ndarray):
    if not np.isfinite(phi).all():
        raise ValueError("population curves contain NaN or inf")
    clamped = np.clip(phi, 0.0, 1.0)
    sums = clamped.sum(axis=0)
    bad = (np.abs(clamped - phi).max(axis=0) > 1e-12) | (np.abs(sums - 1.0) > 1e-9)
    with np.errstate(invalid="ignore", divide="ignore"):
        clean = np.where(sums > 0, clamped / sums, clamped)
    return clean, int(bad.sum())


def objective(curves: PopulationCurves, p_init, Gamma: float) -> float:
    """Sum of squared differences between model and data over bands and times."""
    phi, _ = _clean(np.asarray(curves.phi, dtype=float))
    return float(((model_curves(p_init, Gamma, curves.time_grid, curves.n_resolved) - phi) ** 2).sum())


def golden_section(f, lo: float, hi: float, rtol: float = 1e-3, max_iter: int = 200):
    """Minimize a unimodal ``f`` on [lo, hi] until the bracket is narrower than rtol * x.

    Returns ``(x, f(x), iterations)``.
    """
    a, b = lo, hi
    c, d = b - INV_PHI * (b - a), a + INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    it = 0
    while it < max_iter and b - a > rtol * 0.5 * (a + b):
        it += 1
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + INV_PHI * (b - a)
            fd = f(d)
    x = 0.5 * (a + b)
    return x, f(x), it


def fit_gamma(curves: PopulationCurves, p_init, bracket=(0.1, 100.0), rtol: float = 1e-3) -> FitResult:
    """Least-squares decay rate with the initial distribution held fixed.

    Data are clamped to [0, 1] and renormalized per time bin first.  A
    minimizer within one tolerance of a bracket end is flagged.
    """
    lo, hi = map(float, bracket)
    if not 0 < lo < hi:
        raise ValueError(f"bracket must be positive and ordered, got {bracket!r}")
    if curves.phi.shape[1] < 10:
        raise ValueError("need at least 10 time bins to fit")
    phi, n_clamped = _clean(np.asarray(curves.phi, dtype=float))
    grid = np.asarray(curves.time_grid, dtype=float)
    n_res = curves.n_resolved

    def cost(g):
        return float(((model_curves(p_init, g, grid, n_res) - phi) ** 2).sum())

    x, fx, it = golden_section(cost, lo, hi, rtol=rtol)
    edge = (x - lo) <= rtol * x or (hi - x) <= rtol * x
    if edge:
        warnings.warn(f"fitted Gamma={x:.4g} is at the bracket edge {bracket!r}", RuntimeWarning,
                      stacklevel=2)
    return FitResult(x, None, fx, it, edge, n_clamped)


def fit_populations(curves: PopulationCurves, n_max: int = 15, bracket=(0.1, 100.0)):
    """Initial distribution from the first time bin, then the decay-rate fit.

    Returns ``(FitResult, p_init)``.
    """
    p_init, mu = build_initial_distribution(curves, n_max)
    result = fit_gamma(curves, p_init, bracket)
    result.mu_hat = mu
    return result, p_init


def write_fit(result: FitResult, path) -> None:
    Path(path).write_text(result.to_text())


def read_fit(path) -> FitResult:
    kv = dict(line.split("=", 1) for line in Path(path).read_text().splitlines() if "=" in line)
    mu = None if kv["mu_hat"] == "nan" else float(kv["mu_hat"])
    return FitResult(float(kv["Gamma_hat"]), mu, float(kv["residual"]), int(kv["iterations"]),
                     kv.get("at_bracket_edge") == "true", int(kv.get("n_clamped", 0)))
