"""Analytic equilibria for deterministic coefficients and the Merton benchmark."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_DENOM_TOL = 1e-12


def _safe_denominator(x: float, what: str) -> float:
    if abs(x) <= _DENOM_TOL:
        raise ZeroDivisionError(f"{what} denominator {x!r} is numerically zero")
    return x


def prop_n_agent_strategy(theta, gamma: float, rho: float, lambda_self_n: float) -> np.ndarray:
    """Self-weight equilibrium ``sigma pi = theta / (1 - gamma + rho gamma lambda_ii^n)``."""
    den = _safe_denominator(1.0 - gamma + rho * gamma * lambda_self_n, "n-agent strategy")
    return np.asarray(theta, dtype=float) / den


def prop_graphon_strategy(theta, gamma: float) -> np.ndarray:
    """Graphon equilibrium ``sigma pi = theta / (1 - gamma)``."""
    return np.asarray(theta, dtype=float) / _safe_denominator(1.0 - gamma, "graphon strategy")


def prop_gap_bound(theta, gamma_i: float, gamma_tilde: float, rho: float, lambda_self_n: float) -> float:
    """Upper bound on ``|sigma pi^{i,n} - sigma pi^{i/n}|`` for the self-weight example."""
    den = _safe_denominator((1.0 - gamma_i) * (1.0 - gamma_i + rho * gamma_i * lambda_self_n), "gap bound")
    return float(rho * gamma_tilde * lambda_self_n * np.linalg.norm(np.atleast_1d(theta)) / abs(den))


def merton_benchmark(theta_path, gamma: float, x0: float, T: float, durations=None) -> tuple[float, float]:
    """Single-agent value for piecewise-constant ``theta``.

    ``theta_path`` has one row per time piece (scalar or vector entries);
    pieces have equal length unless ``durations`` is given.
    Returns ``(Y0, V0)`` with ``Y0 = sum gamma |theta|^2 / (2 (1 - gamma)) dt``.
    """
    th = np.asarray(theta_path, dtype=float)
    th = th.reshape(th.shape[0], -1) if th.ndim >= 1 else th.reshape(1, 1)
    if durations is None:
        durations = np.full(th.shape[0], T / th.shape[0])
    sq = np.sum(th * th, axis=1)
    Y0 = float(np.sum(gamma * sq / (2.0 * (1.0 - gamma)) * np.asarray(durations, float)))
    V0 = x0**gamma * np.exp(Y0) / gamma
    return Y0, float(V0)


@dataclass(frozen=True)
class ClosedFormEquilibrium:
    """Deterministic ``sigma pi`` per agent/type and their time-0 values."""

    n_agent_sigma_pi: np.ndarray
    graphon_sigma_pi: np.ndarray
    gap_bound: np.ndarray


def constant_equilibrium(thetas, gammas, rho: float, lambda_self_n) -> ClosedFormEquilibrium:
    """Vectorised evaluation of the self-weight example for several agents."""
    thetas = np.atleast_2d(np.asarray(thetas, float))
    gammas = np.asarray(gammas, float)
    lam = np.broadcast_to(np.asarray(lambda_self_n, float), gammas.shape)
    gt = float(np.max(np.abs(gammas)))
    n_pi = np.stack([prop_n_agent_strategy(th, g, rho, l) for th, g, l in zip(thetas, gammas, lam)])
    g_pi = np.stack([prop_graphon_strategy(th, g) for th, g in zip(thetas, gammas)])
    bound = np.array([prop_gap_bound(th, g, gt, rho, l) for th, g, l in zip(thetas, gammas, lam)])
    return ClosedFormEquilibrium(n_pi, g_pi, bound)
