"""Bernoulli lattices, adapted processes and exact conditional operators.

Each factor moves by ``+-sqrt(dt)`` with probability 1/2 per step.  A node at
step ``t`` has ``2**F`` children indexed by a combo ``c``; bit ``f`` of ``c``
set means factor ``f`` moved up.

Two layouts are supported:

* full tree: node index encodes the path, most recent combo in the lowest
  ``F`` bits, so every node has probability ``2**(-F t)``;
* recombining: node index is the mixed-radix vector of per-factor up-counts
  (base ``t + 1``), with binomial probabilities.
"""

from __future__ import annotations

import csv
import io
import os
from functools import lru_cache

import numpy as np
from scipy.special import comb

DEFAULT_MAX_TREE = 24


class LatticeCapError(ValueError):
    """Raised when a full tree would exceed the configured size cap."""


class MeasurabilityError(ValueError):
    """Raised when a process varies along factors outside its tag."""


def max_tree() -> int:
    return int(os.environ.get("GE_MAX_TREE", DEFAULT_MAX_TREE))


def _combo_signs(F: int) -> np.ndarray:
    c = np.arange(2**F)[:, None]
    return np.where((c >> np.arange(F)) & 1, 1.0, -1.0)


class Lattice:
    """Time grid with ``F`` independent Bernoulli factors over ``N`` steps."""

    def __init__(self, steps: int, horizon: float, n_factors: int, recombining: bool = False):
        if steps < 1:
            raise ValueError("steps must be >= 1")
        if horizon <= 0:
            raise ValueError("horizon must be > 0")
        if n_factors < 1:
            raise ValueError("need at least one factor")
        if not recombining and n_factors * steps > max_tree():
            raise LatticeCapError(
                f"full tree with F*N = {n_factors * steps} exceeds cap {max_tree()} (GE_MAX_TREE)"
            )
        self.N = int(steps)
        self.T = float(horizon)
        self.F = int(n_factors)
        self.recombining = bool(recombining)
        self.dt = self.T / self.N
        self.sqdt = np.sqrt(self.dt)
        self.n_children = 2**self.F
        self.signs = _combo_signs(self.F)
        self._cache: dict = {}

    def __repr__(self) -> str:
        mode = "recombining" if self.recombining else "tree"
        return f"Lattice(N={self.N}, T={self.T}, F={self.F}, {mode})"

    # -- structure -----------------------------------------------------
    def size(self, t: int) -> int:
        if self.recombining:
            return (t + 1) ** self.F
        return 2 ** (self.F * t)

    def counts(self, t: int) -> np.ndarray:
        """Per-factor up-counts, shape ``(S_t, F)``."""
        key = ("counts", t)
        if key not in self._cache:
            if self.recombining:
                idx = np.arange(self.size(t))
                out = np.stack([(idx // (t + 1) ** f) % (t + 1) for f in range(self.F)], axis=1)
            elif t == 0:
                out = np.zeros((1, self.F), dtype=np.int64)
            else:
                prev = self.counts(t - 1)
                bits = (self.signs > 0).astype(np.int64)
                out = (prev[:, None, :] + bits[None]).reshape(-1, self.F)
            self._cache[key] = out
        return self._cache[key]

    def children(self, t: int) -> np.ndarray:
        """Indices at step ``t + 1`` of the children of each node, ``(S_t, 2**F)``."""
        key = ("children", t)
        if key not in self._cache:
            if self.recombining:
                k = self.counts(t)
                bits = (self.signs > 0).astype(np.int64)
                nxt = k[:, None, :] + bits[None]
                base = (t + 2) ** np.arange(self.F)
                out = nxt @ base
            else:
                out = np.arange(self.size(t))[:, None] * self.n_children + np.arange(self.n_children)
            self._cache[key] = out
        return self._cache[key]

    def prob(self, t: int) -> np.ndarray:
        key = ("prob", t)
        if key not in self._cache:
            if self.recombining:
                k = self.counts(t)
                out = np.prod(comb(t, k) / 2.0**t, axis=1)
            else:
                out = np.full(self.size(t), 2.0 ** (-self.F * t))
            self._cache[key] = out
        return self._cache[key]

    def walk(self, t: int) -> np.ndarray:
        """Lattice Brownian values ``W_t`` per factor, ``(S_t, F)``."""
        return (2 * self.counts(t) - t) * self.sqdt

    def last(self, t: int) -> np.ndarray:
        """Sign of the most recent increment per factor (zero at ``t = 0``)."""
        if self.recombining:
            raise ValueError("last-increment signs need a full tree")
        if t == 0:
            return np.zeros((1, self.F))
        return np.tile(self.signs, (self.size(t - 1), 1))

    def sub_index(self, t: int, factors) -> tuple[np.ndarray, int]:
        """Index of each node in the sub-lattice generated by ``factors``."""
        factors = tuple(sorted(factors))
        key = ("sub", t, factors)
        if key not in self._cache:
            nf = len(factors)
            if nf == 0:
                out = (np.zeros(self.size(t), dtype=np.int64), 1)
            elif self.recombining:
                k = self.counts(t)[:, list(factors)]
                out = (k @ ((t + 1) ** np.arange(nf)), (t + 1) ** nf)
            elif t == 0:
                out = (np.zeros(1, dtype=np.int64), 1)
            else:
                prev, _ = self.sub_index(t - 1, factors)
                bits = ((np.arange(self.n_children)[:, None] >> np.array(factors)) & 1) @ (2 ** np.arange(nf))
                out = ((prev[:, None] * 2**nf + bits[None]).reshape(-1), 2 ** (nf * t))
            self._cache[key] = out
        return self._cache[key]

    # -- conditional operators ----------------------------------------
    def cond_expect(self, values_next: np.ndarray, t: int) -> np.ndarray:
        """``E[v_{t+1} | F_t]`` for every node at step ``t``."""
        v = np.asarray(values_next)[self.children(t)]
        return v.mean(axis=1)

    def martingale_coeffs(self, values_next: np.ndarray, t: int) -> np.ndarray:
        """``Z_f = E_t[v_{t+1} xi_f] / sqrt(dt)`` with ``xi_f = +-1``; shape ``(S_t, F, ...)``."""
        v = np.asarray(values_next)[self.children(t)]
        return np.einsum("sc...,cf->sf...", v, self.signs) / (self.n_children * self.sqdt)

    def group_mean(self, values: np.ndarray, t: int, factors) -> np.ndarray:
        """Conditional mean given the sub-filtration of ``factors``, per group."""
        idx, n = self.sub_index(t, factors)
        p = self.prob(t)
        v = np.asarray(values, dtype=float)
        flat = v.reshape(v.shape[0], -1)
        wsum = np.bincount(idx, weights=p, minlength=n)
        out = np.stack([np.bincount(idx, weights=p * flat[:, j], minlength=n) for j in range(flat.shape[1])], axis=1)
        return (out / wsum[:, None]).reshape((n,) + v.shape[1:])

    def expectation(self, values: np.ndarray, t: int) -> np.ndarray:
        v = np.asarray(values, dtype=float)
        return np.tensordot(self.prob(t), v, axes=(0, 0))


@lru_cache(maxsize=64)
def get_lattice(steps: int, horizon: float, n_factors: int, recombining: bool) -> Lattice:
    """Shared lattice instances (lattices are immutable apart from caches)."""
    return Lattice(steps, horizon, n_factors, recombining)


class AdaptedProcess:
    """Node-indexed values ``values[t]`` of shape ``(S_t, k)``.

    ``tag`` lists the factors the process may depend on (``None`` means all).
    Processes carried only on steps ``0..N-1`` (such as ``Z`` or ``pi``) simply
    have ``N`` entries.
    """

    def __init__(self, lattice: Lattice, values, tag=None, name: str = "", check: bool = True):
        self.lattice = lattice
        self.values = [np.asarray(v, dtype=float).reshape(lattice.size(t), -1) for t, v in enumerate(values)]
        if len(self.values) > lattice.N + 1:
            raise ValueError("more steps than the lattice has")
        self.tag = None if tag is None else tuple(sorted(tag))
        self.name = name
        if check and self.tag is not None and len(self.tag) < lattice.F:
            self._check_measurable()

    def _check_measurable(self, tol: float = 1e-12):
        for t, v in enumerate(self.values):
            idx, n = self.lattice.sub_index(t, self.tag)
            lo = np.full((n, v.shape[1]), np.inf)
            hi = np.full((n, v.shape[1]), -np.inf)
            np.minimum.at(lo, idx, v)
            np.maximum.at(hi, idx, v)
            spread = np.max(hi - lo) if v.size else 0.0
            if spread > tol * max(1.0, float(np.max(np.abs(v)))):
                raise MeasurabilityError(
                    f"process {self.name!r} varies outside factors {self.tag} at step {t} (spread {spread:.3g})"
                )

    @property
    def components(self) -> int:
        return self.values[0].shape[1]

    def at(self, t: int) -> np.ndarray:
        return self.values[t]

    def sup_norm(self) -> float:
        return max(float(np.max(np.linalg.norm(v, axis=1))) for v in self.values)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "node_index", "component", "value"])
        for t, v in enumerate(self.values):
            for s in range(v.shape[0]):
                for c in range(v.shape[1]):
                    w.writerow([t, s, c, repr(float(v[s, c]))])
        return buf.getvalue()


def cond_expect(proc: AdaptedProcess, t: int, node: int | None = None) -> np.ndarray:
    """Equal-weight average over the children of ``node`` (all nodes if ``None``)."""
    if t + 1 >= len(proc.values):
        raise ValueError(f"process {proc.name!r} has no values at step {t + 1}")
    out = proc.lattice.cond_expect(proc.values[t + 1], t)
    return out if node is None else out[node]


def martingale_coeffs(proc: AdaptedProcess, t: int, node: int | None = None) -> np.ndarray:
    """Per-factor representation coefficients, shape ``(F, k)`` at a node."""
    if t + 1 >= len(proc.values):
        raise ValueError(f"process {proc.name!r} has no values at step {t + 1}")
    out = proc.lattice.martingale_coeffs(proc.values[t + 1], t)
    return out if node is None else out[node]


def bmo_norm_sq(lattice: Lattice, values, squared: bool = False) -> float:
    """Lattice BMO norm squared: ``max_nodes E[sum_{s>=t} |f_s|^2 dt | node]``.

    ``values[t]`` holds ``f_t`` for ``t = 0..len-1``; with ``squared`` the
    entries are taken to be ``|f_t|^2`` already.
    """
    steps = len(values)
    acc = None
    best = 0.0
    for t in range(steps - 1, -1, -1):
        v = np.asarray(values[t], dtype=float).reshape(lattice.size(t), -1)
        sq = v[:, 0] if squared else np.sum(v * v, axis=1)
        cur = sq * lattice.dt
        if acc is not None:
            cur = cur + lattice.cond_expect(acc, t)
        acc = cur
        best = max(best, float(np.max(cur)))
    return best


def simulate_log_wealth(spec, strategy: AdaptedProcess, agent: int) -> AdaptedProcess:
    """Forward log-wealth for a strategy process, returned on a full tree.

    Log-wealth is path dependent, so strategies given on a recombining
    lattice are lifted to the full tree over the same factors first.
    """
    from .model import agent_coefficients

    params = spec.agents[agent]
    src = strategy.lattice
    own = agent_coefficients(spec, params).lattice
    if (src.F, src.N, src.T) != (own.F, own.N, own.T):
        raise ValueError("strategy lives on a different lattice")
    if strategy.components != spec.d:
        raise ValueError(f"strategy has {strategy.components} components, expected d={spec.d}")
    tree = get_lattice(own.N, own.T, own.F, False)
    coeffs = agent_coefficients(spec, params, tree)
    x = [np.full(1, np.log(params.x0))]
    for t in range(tree.N):
        pi = strategy.at(t)
        if src.recombining:
            pi = pi[tree.counts(t) @ ((t + 1) ** np.arange(tree.F))]
        x.append((x[t][:, None] + log_wealth_increment(coeffs, t, pi)).reshape(-1))
    return AdaptedProcess(tree, x, name=f"Xhat[{agent}]")


def log_wealth_increment(coeffs, t: int, pi: np.ndarray) -> np.ndarray:
    """``Delta Xhat`` per (node, child) for strategies ``pi`` of shape ``(S_t, d)``."""
    lat = coeffs.lattice
    b = np.einsum("sfd,sd->sf", coeffs.SigmaT(t), pi)
    drift = (np.sum(b * coeffs.theta_img(t), axis=1) - 0.5 * np.sum(b * b, axis=1)) * lat.dt
    return drift[:, None] + (b @ lat.signs.T) * lat.sqdt
