"""Graphon game solvers on per-type lattices.

Types sit at the midpoints ``u_k = (2k - 1) / (2m)`` and integrals over the
type space use the matching midpoint rule, so ``int h(v) G(u, v) dv`` becomes
``sum_k G(u, u_k) h(u_k) / m``.  Expectations over a type's idiosyncratic
noise are exact lattice averages (the exact law of large numbers).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .lattice import AdaptedProcess, Lattice, get_lattice
from .model import (
    AgentCoefficients,
    GameSpec,
    Graphon,
    NonConvergence,
    SpecError,
    agent_coefficients,
    require_valid,
    type_locations,
)
from .n_agent_solver import OwnSweep, own_sweep
from .projection import project_transformed, recover_strategy

OUTER_TOL = 1e-10
OUTER_TOL_COMMON = 1e-9
OUTER_MAX_ITER = 200
DAMPING_FALLBACK_AFTER = 50
GMAP_TOL = 1e-13
GMAP_MAX_ITER = 200


class GMapRefused(ValueError):
    """The g-map contraction condition ``rho < (1 - gamma_bar) / gamma_tilde`` fails."""


@dataclass
class AggregateField:
    """Per-step arrays ``(m, C_t)`` of the two graphon integrals.

    ``theta_g[t][k, c] = int E[theta^v . g^v | common node c] G(u_k, v) dv`` and
    ``half_g2`` the same for ``|g^v|^2 / 2``.  Without common noise ``C_t = 1``.
    """

    theta_g: list
    half_g2: list

    def combined(self, t: int) -> np.ndarray:
        return self.theta_g[t] - self.half_g2[t]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "common_node", "type", "component", "value"])
        for t, (a, b) in enumerate(zip(self.theta_g, self.half_g2)):
            for k in range(a.shape[0]):
                for c in range(a.shape[1]):
                    w.writerow([t, c, k, "theta_g", repr(float(a[k, c]))])
                    w.writerow([t, c, k, "half_g2", repr(float(b[k, c]))])
        return buf.getvalue()


@dataclass
class GraphonBsdeSolution:
    spec: GameSpec
    u: np.ndarray
    types: tuple
    coeffs: list
    sweeps: list  # OwnSweep per type (Z holds the own-noise coefficients)
    Y0: np.ndarray
    values: np.ndarray
    aggregate: AggregateField
    weights: np.ndarray  # (m, m) quadrature weights G(u_k, u_l) / m
    trace: list = field(default_factory=list)
    Zstar: list | None = None  # per type, per step (S_t,) common coefficients
    Ztilde_star: list | None = None
    gmap_rates: list = field(default_factory=list)
    type_means: tuple | None = None  # (E[theta.g], E[|g|^2/2]) per type and step, no common noise

    @property
    def m(self) -> int:
        return self.u.size

    def lattice(self, k: int) -> Lattice:
        return self.coeffs[k].lattice

    def pi(self, k: int) -> AdaptedProcess:
        return AdaptedProcess(self.lattice(k), self.sweeps[k].pi, name=f"pi[u={self.u[k]:.4g}]")

    def g(self, k: int) -> AdaptedProcess:
        return AdaptedProcess(self.lattice(k), self.sweeps[k].g, name=f"g[u={self.u[k]:.4g}]")

    def Y(self, k: int) -> AdaptedProcess:
        return AdaptedProcess(self.lattice(k), self.sweeps[k].Y, name=f"Y[u={self.u[k]:.4g}]")

    @property
    def contraction_rate(self) -> float:
        return max(self.gmap_rates) if self.gmap_rates else _measured_rate(self.trace)


def _measured_rate(trace, floor: float = 1e-9) -> float:
    r = [b / a for a, b in zip(trace[:-1], trace[1:]) if a >= floor]
    return max(r) if r else 0.0


def quadrature_weights(G: Graphon, u_rows, u_types) -> np.ndarray:
    u_rows = np.atleast_1d(np.asarray(u_rows, float))
    return G(u_rows[:, None], np.asarray(u_types)[None, :]) / np.asarray(u_types).size


def aggregate(type_means_theta_g, type_means_half_g2, G: Graphon, u, u_types=None) -> tuple:
    """Midpoint-rule graphon integrals at location(s) ``u``.

    ``type_means_*`` hold per-type expectations with the type axis first
    (trailing axes such as time or common node are carried through).
    """
    a = np.asarray(type_means_theta_g, float)
    b = np.asarray(type_means_half_g2, float)
    u_types = type_locations(a.shape[0]) if u_types is None else np.asarray(u_types)
    w = quadrature_weights(G, u, u_types)
    A = np.tensordot(w, a, axes=(1, 0))
    B = np.tensordot(w, b, axes=(1, 0))
    if np.ndim(u) == 0:
        return A[0], B[0]
    return A, B


def _types_of(spec: GameSpec, m: int | None):
    if spec.mode != "graphon":
        raise SpecError("graphon solver needs a graphon-mode spec")
    if spec.graphon is None:
        raise SpecError("graphon solver needs a graphon")
    if m is not None and m != spec.m:
        if spec.family is None:
            raise SpecError(f"spec has {spec.m} types and no family to resample at m={m}")
        spec = GameSpec.graphon_game(
            spec.family,
            spec.graphon,
            m,
            rho=spec.rho,
            horizon=spec.horizon,
            steps=spec.steps,
            common_noise=spec.common_noise,
            seed=spec.seed,
        )
    require_valid(spec)
    return spec, type_locations(spec.m)


def _type_expectations(sweep: OwnSweep, coeffs: AgentCoefficients):
    lat = coeffs.lattice
    e1, e2 = [], []
    for t in range(lat.N):
        g = sweep.g[t]
        e1.append(lat.expectation(np.sum(coeffs.theta_img(t) * g, axis=1), t))
        e2.append(lat.expectation(0.5 * np.sum(g * g, axis=1), t))
    return np.array(e1), np.array(e2)


def solve_graphon_bsde_no_common(
    spec: GameSpec,
    m: int | None = None,
    tol: float = OUTER_TOL,
    max_iter: int = OUTER_MAX_ITER,
    damping: float = 1.0,
) -> GraphonBsdeSolution:
    """Outer Picard on the deterministic aggregate, inner per-type sweeps."""
    spec, u = _types_of(spec, m)
    if spec.common_noise:
        raise SpecError("use solve_graphon_bsde_common_noise for games with common noise")
    m = spec.m
    N = spec.steps
    coeffs = [agent_coefficients(spec, p) for p in spec.agents]
    gam = spec.gammas
    W = quadrature_weights(spec.graphon, u, u)
    A1 = np.zeros((m, N))
    A2 = np.zeros((m, N))
    trace: list[float] = []
    omega = damping
    for it in range(1, max_iter + 1):
        drift = -spec.rho * gam[:, None] * (A1 - A2)
        sweeps = [own_sweep(c, p.gamma, extra_drift=drift[k]) for k, (c, p) in enumerate(zip(coeffs, spec.agents))]
        ex = [_type_expectations(s, c) for s, c in zip(sweeps, coeffs)]
        e1 = np.array([e[0] for e in ex])
        e2 = np.array([e[1] for e in ex])
        N1, N2 = W @ e1, W @ e2
        delta = float(max(np.max(np.abs(N1 - A1)), np.max(np.abs(N2 - A2))))
        trace.append(delta)
        if delta <= tol:
            break
        if it == DAMPING_FALLBACK_AFTER and omega == 1.0 and _measured_rate(trace) >= 1.0:
            omega = 0.5
        A1 = (1 - omega) * A1 + omega * N1
        A2 = (1 - omega) * A2 + omega * N2
    else:
        raise NonConvergence(
            f"graphon outer Picard did not converge in {max_iter} iterations (rate {_measured_rate(trace):.3g})",
            rate=_measured_rate(trace),
            iteration=max_iter,
        )
    agg = AggregateField([A1[:, t : t + 1] for t in range(N)], [A2[:, t : t + 1] for t in range(N)])
    Y0 = np.array([s.Y[0][0] for s in sweeps])
    logx = np.log([p.x0 for p in spec.agents])
    x = np.exp(logx)
    values = x**gam * np.exp(Y0 - spec.rho * gam * (W @ logx)) / gam
    return GraphonBsdeSolution(spec, u, spec.agents, coeffs, sweeps, Y0, values, agg, W, trace, type_means=(e1, e2))


@dataclass
class TypeSolution:
    """Equilibrium of a single (possibly off-grid) type against a solved aggregate."""

    u: float
    coeffs: AgentCoefficients
    sweep: OwnSweep
    Y0: float
    value: float


def evaluate_type(sol: GraphonBsdeSolution, u: float, params=None) -> TypeSolution:
    """Best response of type ``u`` to the converged aggregate (no common noise)."""
    spec = sol.spec
    params = params or spec.params_at(u)
    coeffs = agent_coefficients(spec, params)
    w = quadrature_weights(spec.graphon, u, sol.u)[0]
    if sol.type_means is None:
        raise SpecError("evaluate_type needs a solution without common noise")
    # stored aggregate rows are integrated at the grid types; re-integrate at u
    comb_u = w @ (sol.type_means[0] - sol.type_means[1])
    drift = -spec.rho * params.gamma * comb_u
    sweep = own_sweep(coeffs, params.gamma, extra_drift=drift)
    Y0 = float(sweep.Y[0][0])
    logx = np.log([p.x0 for p in sol.types])
    value = params.x0**params.gamma * np.exp(Y0 - spec.rho * params.gamma * (w @ logx)) / params.gamma
    return TypeSolution(float(u), coeffs, sweep, Y0, float(value))


# ---------------------------------------------------------------------------
# common noise


@dataclass
class GMapResult:
    Zstar: list  # per type (S_t,)
    g: list  # per type (S_t, d + 1)
    trace: list
    rate: float
    residual: float
    bound: float


def gmap_bound(spec_or_gammas, rho: float) -> float:
    """Analytic contraction constant ``rho gamma_tilde / (1 - gamma_bar)``."""
    g = np.asarray(getattr(spec_or_gammas, "gammas", spec_or_gammas), float)
    return rho * float(np.max(np.abs(g))) / (1.0 - float(np.max(g)))


def check_gmap_condition(gammas, rho: float) -> None:
    g = np.asarray(gammas, float)
    limit = (1.0 - float(np.max(g))) / float(np.max(np.abs(g)))
    if rho >= limit:
        raise GMapRefused(f"g-map refused: rho = {rho:.6g} >= (1 - gamma_bar) / gamma_tilde = {limit:.6g}")


def _gmap_iterate(
    Zt_star, Zt, SigmaT, theta, gammas, constraints, W, rho, cidx, C, lattice: Lattice, t: int, tol, max_iter
) -> GMapResult:
    m = len(Zt_star)
    d = Zt[0].shape[1]
    check_gmap_condition(gammas, rho)
    Zs = [z.copy() for z in Zt_star]

    def gvals(Zs):
        return [
            project_transformed(SigmaT[k], constraints[k], (np.column_stack([Zt[k], Zs[k]]) + theta[k]) / (1.0 - gammas[k]))
            for k in range(m)
        ]

    def shift(g):
        s = np.array([lattice.group_mean(g[k][:, d], t, (d,)) for k in range(m)])  # (m, C)
        return W @ s

    trace = []
    for it in range(max_iter):
        S = shift(gvals(Zs))
        new = [Zt_star[k] - rho * gammas[k] * S[k][cidx] for k in range(m)]
        delta = max(float(np.max(np.abs(a - b))) for a, b in zip(new, Zs))
        trace.append(delta)
        Zs = new
        if delta <= tol:
            break
    else:
        raise NonConvergence(
            f"g-map did not converge in {max_iter} iterations at step {t} (rate {_measured_rate(trace):.3g})",
            rate=_measured_rate(trace),
            iteration=max_iter,
        )
    g = gvals(Zs)
    S = shift(g)
    residual = max(float(np.max(np.abs(Zs[k] + rho * gammas[k] * S[k][cidx] - Zt_star[k]))) for k in range(m))
    return GMapResult(Zs, g, trace, _measured_rate(trace), residual, gmap_bound(gammas, rho))


def common_lattice(spec: GameSpec) -> Lattice:
    return get_lattice(spec.steps, spec.horizon, spec.d + 1, all(a.recombinable for a in spec.agents))


def g_fixed_point(spec: GameSpec, t: int, Zt_star, Zt, tol: float = GMAP_TOL, max_iter: int = GMAP_MAX_ITER) -> GMapResult:
    """Solve ``Zt*^u = Z*^u + rho gamma^u E[int g^v_common G(u, v) dv | F*_t]`` at step ``t``.

    ``Zt_star[k]`` has shape ``(S_t,)`` and ``Zt[k]`` shape ``(S_t, d)`` on
    the shared per-type lattice.  ``g^v_common`` is the common-noise component
    of the projected image-space strategy, which equals
    ``P(.)^T Sigma^T (Sigma Sigma^T)^{-1} sigma*`` because ``P(.)`` lies in the
    column space of ``Sigma^T``.
    """
    if not spec.common_noise:
        raise SpecError("g-map needs a common-noise spec")
    lat = common_lattice(spec)
    coeffs = [agent_coefficients(spec, p, lat) for p in spec.agents]
    u = type_locations(spec.m)
    W = quadrature_weights(spec.graphon, u, u)
    cidx, C = lat.sub_index(t, (spec.d,))
    return _gmap_iterate(
        [np.asarray(z, float) for z in Zt_star],
        [np.asarray(z, float).reshape(lat.size(t), spec.d) for z in Zt],
        [c.SigmaT(t) for c in coeffs],
        [c.theta_img(t) for c in coeffs],
        spec.gammas,
        [p.constraint for p in spec.agents],
        W,
        spec.rho,
        cidx,
        C,
        lat,
        t,
        tol,
        max_iter,
    )


def solve_graphon_bsde_common_noise(
    spec: GameSpec, m: int | None = None, tol: float = GMAP_TOL, max_iter: int = GMAP_MAX_ITER
) -> GraphonBsdeSolution:
    """Backward sweep of the common-noise graphon BSDE.

    On the lattice ``Zt`` and ``Zt*`` at step ``t`` are read off the step
    ``t + 1`` values, so the Picard map over the aggregates and the g-map
    inputs decouples across steps: each step solves the g-map fixed point,
    forms the conditional aggregates from it and takes one backward step.
    """
    spec, u = _types_of(spec, m)
    if not spec.common_noise:
        raise SpecError("common-noise solver needs common_noise = true")
    m = spec.m
    d = spec.d
    N = spec.steps
    gam = spec.gammas
    check_gmap_condition(gam, spec.rho)
    lat = common_lattice(spec)
    coeffs = [agent_coefficients(spec, p, lat) for p in spec.agents]
    cons = [p.constraint for p in spec.agents]
    W = quadrature_weights(spec.graphon, u, u)
    logx = np.log([p.x0 for p in spec.agents])
    term = -spec.rho * gam * (W @ logx)
    Y = [[None] * (N + 1) for _ in range(m)]
    for k in range(m):
        Y[k][N] = np.full(lat.size(N), term[k])
    keys = ("Z", "Zy", "g", "raw", "pi", "drift")
    store = [{key: [None] * N for key in keys} for _ in range(m)]
    Zstar = [[None] * N for _ in range(m)]
    Zts = [[None] * N for _ in range(m)]
    A1, A2, rates, trace = [None] * N, [None] * N, [], []
    for t in range(N - 1, -1, -1):
        cidx, C = lat.sub_index(t, (d,))
        Zfull = [lat.martingale_coeffs(Y[k][t + 1], t) for k in range(m)]
        ST = [c.SigmaT(t) for c in coeffs]
        th = [c.theta_img(t) for c in coeffs]
        res = _gmap_iterate(
            [z[:, d] for z in Zfull], [z[:, :d] for z in Zfull], ST, th, gam, cons, W, spec.rho, cidx, C, lat, t, tol, max_iter
        )
        rates.append(res.rate)
        trace.append(len(res.trace))
        e1 = np.array([lat.group_mean(np.sum(th[k] * res.g[k], axis=1), t, (d,)) for k in range(m)])
        e2 = np.array([lat.group_mean(0.5 * np.sum(res.g[k] ** 2, axis=1), t, (d,)) for k in range(m)])
        A1[t], A2[t] = W @ e1, W @ e2
        for k in range(m):
            Zy = np.column_stack([Zfull[k][:, :d], res.Zstar[k]])
            g = res.g[k]
            raw = (Zy + th[k]) / (1.0 - gam[k])
            f = (
                0.5 * np.sum(Zy * Zy, axis=1)
                + gam[k] / (2 * (1 - gam[k])) * np.sum((Zy + th[k]) ** 2, axis=1)
                - 0.5 * gam[k] * (1 - gam[k]) * np.sum((raw - g) ** 2, axis=1)
                - spec.rho * gam[k] * (A1[t][k] - A2[t][k])[cidx]
            )
            Y[k][t] = lat.cond_expect(Y[k][t + 1], t) + f * lat.dt
            s = store[k]
            s["Z"][t], s["Zy"][t], s["g"][t], s["raw"][t], s["drift"][t] = Zfull[k], Zy, g, raw, f
            s["pi"][t] = recover_strategy(ST[k], g)
            Zstar[k][t] = res.Zstar[k]
            Zts[k][t] = Zfull[k][:, d]
    sweeps = [OwnSweep(Y=Y[k], **store[k]) for k in range(m)]
    Y0 = np.array([Y[k][0][0] for k in range(m)])
    x = np.exp(logx)
    values = x**gam * np.exp(Y0) / gam
    agg = AggregateField(A1, A2)
    return GraphonBsdeSolution(
        spec, u, spec.agents, coeffs, sweeps, Y0, values, agg, W, trace[::-1], Zstar, Zts, rates[::-1]
    )


def solve_graphon(spec: GameSpec, m: int | None = None) -> GraphonBsdeSolution:
    if spec.common_noise:
        return solve_graphon_bsde_common_noise(spec, m)
    return solve_graphon_bsde_no_common(spec, m)


def self_consistency_residual(sol: GraphonBsdeSolution) -> float:
    """Re-sweep every type against the returned aggregate; sup change in ``Y``."""
    spec = sol.spec
    if spec.common_noise:
        raise SpecError("self-consistency re-sweep is implemented for the no-common-noise solver")
    N = spec.steps
    comb = np.array([sol.aggregate.combined(t)[:, 0] for t in range(N)]).T
    drift = -spec.rho * spec.gammas[:, None] * comb
    worst = 0.0
    for k, (c, p) in enumerate(zip(sol.coeffs, sol.types)):
        s = own_sweep(c, p.gamma, extra_drift=drift[k])
        worst = max(worst, max(float(np.max(np.abs(a - b))) for a, b in zip(s.Y, sol.sweeps[k].Y)))
    ex = [_type_expectations(s, c) for s, c in zip(sol.sweeps, sol.coeffs)]
    e = np.array([a - b for a, b in ex])
    worst = max(worst, float(np.max(np.abs(e - (sol.type_means[0] - sol.type_means[1])))))
    worst = max(worst, float(np.max(np.abs(sol.weights @ e - comb))))
    return worst


__all__ = [
    "AggregateField",
    "GMapRefused",
    "GMapResult",
    "GraphonBsdeSolution",
    "TypeSolution",
    "aggregate",
    "check_gmap_condition",
    "evaluate_type",
    "g_fixed_point",
    "gmap_bound",
    "quadrature_weights",
    "self_consistency_residual",
    "solve_graphon",
    "solve_graphon_bsde_common_noise",
    "solve_graphon_bsde_no_common",
]
