"""Closed-form cavity QED quantities and the manifold-occupancy steady state.

All rates are stored as ordinary frequencies (rate / 2 pi, in Hz).  Ratios
such as the cooperativity are unaffected by the common 2 pi factor.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln


@dataclass(frozen=True)
class CavityParams:
    """Cavity and probe parameters.

    ``g0`` defaults to 24.3 MHz, the nominal 24 MHz refined to the value that
    reproduces the critical numbers n0 = 0.0057 and N0 = 0.037.
    ``w0`` is not given alongside the other constants and is a stand-in.
    """

    g0: float = 24.3e6
    kappa: float = 4.2e6
    gamma: float = 2.6e6
    delta_c: float = 0.0
    delta_4: float = 4.0e6
    nbar_empty: float = 0.02
    w0: float = 23.4e-6
    lambda0: float = 852.4e-9

    def __post_init__(self):
        for name in ("g0", "kappa", "gamma", "nbar_empty", "w0", "lambda0"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive, got {getattr(self, name)!r}")

    @property
    def strong_coupling(self) -> bool:
        return self.g0 > max(self.kappa, self.gamma)

    @property
    def k0(self) -> float:
        return 2 * math.pi / self.lambda0

    @property
    def suppression(self) -> float:
        """One-atom transmission suppression f = 4 C1^2 at peak coupling."""
        return suppression(cooperativity(self, self.g0))

    @property
    def i1_over_i0(self) -> float:
        return 1.0 / self.suppression


@dataclass(frozen=True)
class ManifoldModel:
    """Ratio y of upward to downward pumping rates and a tabulation limit."""

    y: float
    n_max: int = 20

    def __post_init__(self):
        if not self.y > 0:
            raise ValueError(f"y must be positive, got {self.y!r}")
        if self.n_max < 0 or int(self.n_max) != self.n_max:
            raise ValueError(f"n_max must be a non-negative integer, got {self.n_max!r}")


def coupling_at(params: CavityParams, rho, z, g_factor=1.0):
    """Coupling g(r) = g0 G sin(k0 z) exp(-2 rho^2 / w0^2), in Hz.

    Works elementwise on arrays.
    """
    rho = np.asarray(rho, dtype=float)
    if np.any(rho < 0):
        raise ValueError("rho must be non-negative")
    g = params.g0 * g_factor * np.sin(params.k0 * np.asarray(z, dtype=float)) \
        * np.exp(-2.0 * rho**2 / params.w0**2)
    return g[()] if g.ndim == 0 else g


def cooperativity(params: CavityParams, g):
    """Single-atom cooperativity C1 = g^2 / (2 kappa gamma)."""
    g = np.asarray(g, dtype=float)
    if np.any(g < 0):
        raise ValueError("g must be non-negative")
    c = g**2 / (2.0 * params.kappa * params.gamma)
    return c[()] if c.ndim == 0 else c


def suppression(c1):
    """Weak-drive resonant suppression factor f = 4 C1^2."""
    return 4.0 * np.asarray(c1, dtype=float)[()] ** 2


def critical_numbers(params: CavityParams) -> tuple[float, float]:
    """Critical photon number n0 = gamma^2/(2 g0^2) and atom number N0 = 2 kappa gamma / g0^2."""
    g2 = params.g0**2
    return params.gamma**2 / (2.0 * g2), 2.0 * params.kappa * params.gamma / g2


def intensity_level(k, i1_over_i0):
    """Normalized intracavity intensity I_k / I_0 with k atoms coupled.

    1 for the empty manifold, ``i1_over_i0 / k**2`` otherwise.  Accepts an
    integer array for ``k``.
    """
    if not 0 < i1_over_i0 <= 1:
        raise ValueError(f"i1_over_i0 must lie in (0, 1], got {i1_over_i0!r}")
    k = np.asarray(k)
    if np.any(k < 0):
        raise ValueError("k must be non-negative")
    kf = np.maximum(k, 1).astype(float)
    level = np.where(k == 0, 1.0, i1_over_i0 / kf**2)
    return level[()] if level.ndim == 0 else level


def log_weights(y: float, n_atoms: int) -> np.ndarray:
    """log((k!)^2 y^k) for k = 0..n_atoms."""
    k = np.arange(n_atoms + 1)
    return 2.0 * gammaln(k + 1) + k * math.log(y)


def steady_state_distribution(model: ManifoldModel, n_atoms: int) -> np.ndarray:
    """Stationary probabilities p_k of k coupled atoms out of ``n_atoms``.

    The chain has upward rate gamma_01 for every k < N and downward rate
    gamma_10 / k^2, so p_k is proportional to (k!)^2 y^k.  The weights are
    normalized in log space.
    """
    if int(n_atoms) != n_atoms or n_atoms < 0:
        raise ValueError(f"n_atoms must be a non-negative integer, got {n_atoms!r}")
    if n_atoms > model.n_max:
        raise ValueError(f"n_atoms={n_atoms} exceeds tabulation limit n_max={model.n_max}")
    lw = log_weights(model.y, int(n_atoms))
    p = np.exp(lw - lw.max())
    return p / p.sum()


def plateau_prediction(model: ManifoldModel, n_atoms: int) -> float:
    """Normalized detected plateau height for N trapped atoms, i.e. p_0^(N)(y)."""
    return float(steady_state_distribution(model, n_atoms)[0])


def plateau_table(model: ManifoldModel) -> np.ndarray:
    """p_0^(N)(y) for N = 0..n_max."""
    return np.array([plateau_prediction(model, n) for n in range(model.n_max + 1)])


def chain_rates(gamma_10: float, y: float, n_atoms: int) -> tuple[np.ndarray, np.ndarray]:
    """Transition rates of the coupled-manifold chain for N atoms.

    Returns ``(up, down)`` where ``up[k]`` is the rate k -> k+1 (k < N) and
    ``down[k]`` the rate k -> k-1 (k >= 1); closed channels are zero.
    """
    k = np.arange(n_atoms + 1)
    up = np.where(k < n_atoms, y * gamma_10, 0.0)
    down = np.where(k > 0, gamma_10 / np.maximum(k, 1) ** 2, 0.0)
    return up, down
