"""Equilibrium certification and the n -> infinity convergence experiment.

Without common noise the agents' lattices are independent, so agent ``i``'s
expected utility factorises:

    E[exp(gamma (Xhat^i - rho sum_j lam_ij Xhat^j))]
        = E[exp(gamma' Xhat^i)] * prod_j E[exp(-kappa_j Xhat^j)]

with ``kappa_j = rho gamma lam_ij^n`` and ``gamma' = gamma (1 - rho lam_ii^n)``
under the self-weight variant (``gamma' = gamma`` otherwise).  Every factor is
an exact backward recursion on one agent's own lattice, which makes best
responses an exact dynamic programme.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import logsumexp

from .graphon_solver import GraphonBsdeSolution, evaluate_type, solve_graphon_bsde_no_common
from .lattice import Lattice, bmo_norm_sq, log_wealth_increment
from .model import (
    AgentCoefficients,
    GameSpec,
    Graphon,
    ParamFamily,
    SpecError,
    agent_coefficients,
    condition_2_13_moduli,
    type_locations,
)
from .n_agent_solver import NAgentBsdeSolution, compute_values_n, solve_n_agent_bsde
from .projection import growth_certificate

GRID_POINTS = 101
GRID_BOUND = 5.0
NASH_TOL = 1e-3
MARTINGALE_TOL = 1e-11
DIRECTION_TOL = 1e-12


def _as_steps(proc) -> list:
    if hasattr(proc, "values") and hasattr(proc, "lattice"):
        return list(proc.values)
    return list(proc)


def _log_mean_exp(x: np.ndarray, axis: int = -1) -> np.ndarray:
    return logsumexp(x, axis=axis) - np.log(x.shape[axis])


def effective_gamma(spec: GameSpec, i: int) -> float:
    g = spec.agents[i].gamma
    if spec.allow_self_weight:
        return g * (1.0 - spec.rho * spec.lam_n[i, i])
    return g


def interaction_weights(spec: GameSpec, i: int) -> np.ndarray:
    """``kappa_j = rho gamma^i lam_ij^n`` for ``j != i`` (zero at ``j = i``)."""
    k = spec.rho * spec.agents[i].gamma * spec.lam_n[i].copy()
    k[i] = 0.0
    return k


# ---------------------------------------------------------------------------
# exact policy evaluation on one lattice


def policy_log_value(coeffs: AgentCoefficients, scale: float, pi: list) -> list:
    """``L_t = log E_t[exp(scale (Xhat_T - Xhat_t))]`` under strategy ``pi``."""
    lat = coeffs.lattice
    L = [None] * (lat.N + 1)
    L[lat.N] = np.zeros(lat.size(lat.N))
    for t in range(lat.N - 1, -1, -1):
        inc = log_wealth_increment(coeffs, t, np.asarray(pi[t], float))
        L[t] = _log_mean_exp(scale * inc + L[t + 1][lat.children(t)], axis=1)
    return L


def _others_log_factor(spec: GameSpec, coeffs: list, strategies: list, i: int) -> float:
    """``sum_j log E[exp(-kappa_j Xhat_T^j)]`` including the initial wealth."""
    kappa = interaction_weights(spec, i)
    total = 0.0
    for j, k in enumerate(kappa):
        if k == 0.0:
            continue
        L = policy_log_value(coeffs[j], -k, strategies[j])
        total += float(L[0][0]) - k * np.log(spec.agents[j].x0)
    return total


def _value_from_log(spec: GameSpec, i: int, own_log: float, others_log: float) -> float:
    a = spec.agents[i]
    ge = effective_gamma(spec, i)
    return float(np.exp(ge * np.log(a.x0) + own_log + others_log) / a.gamma)


def policy_value(spec: GameSpec, i: int, strategies: list, coeffs: list | None = None) -> float:
    """Expected utility of agent ``i`` when everyone plays ``strategies``."""
    coeffs = coeffs or [agent_coefficients(spec, a) for a in spec.agents]
    L = policy_log_value(coeffs[i], effective_gamma(spec, i), strategies[i])
    return _value_from_log(spec, i, float(L[0][0]), _others_log_factor(spec, coeffs, strategies, i))


# ---------------------------------------------------------------------------
# best responses


def strategy_grid(cset, d: int, points: int = GRID_POINTS, bound: float = GRID_BOUND) -> np.ndarray:
    """Uniform grid on the bounding box of ``cset`` clipped to ``[-bound, bound]^d``."""
    lo, hi = cset.bounding_box(d)
    lo = np.clip(np.asarray(lo, float), -bound, bound)
    hi = np.clip(np.asarray(hi, float), -bound, bound)
    axes = [np.linspace(lo[c], hi[c], points) for c in range(d)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    keep = cset.contains(grid)
    if not np.any(keep):
        raise ValueError("strategy grid is empty after intersecting with the constraint set")
    return grid[keep]


def grid_spacing(grid: np.ndarray) -> float:
    g = np.asarray(grid, float)
    spans = [np.diff(np.unique(g[:, c])) for c in range(g.shape[1])]
    return float(max((s.max() for s in spans if s.size), default=0.0))


@dataclass
class BestResponse:
    value: float
    argmax: list  # per step (S_t, d)
    log_value: list  # own log value-to-go per step
    spacing: float


def best_response(
    spec: GameSpec,
    strategies: list,
    agent: int,
    grid: np.ndarray | None = None,
    points: int = GRID_POINTS,
    include_current: bool = True,
    coeffs: list | None = None,
) -> BestResponse:
    """Exact lattice dynamic programme for agent ``agent`` against fixed others.

    At every node the candidate set is ``grid`` plus (by default) the node's
    current strategy, so the best response never does worse than the profile
    it is compared with.  With ``gamma > 0`` the exponential factor is
    maximised, with ``gamma < 0`` minimised.
    """
    coeffs = coeffs or [agent_coefficients(spec, a) for a in spec.agents]
    a = spec.agents[agent]
    c = coeffs[agent]
    lat = c.lattice
    if grid is None:
        grid = strategy_grid(a.constraint, spec.d, points)
    grid = np.atleast_2d(np.asarray(grid, float))
    if grid.size == 0 and not include_current:
        raise ValueError("empty strategy grid")
    ge = effective_gamma(spec, agent)
    sign = 1.0 if a.gamma > 0 else -1.0
    own = strategies[agent]
    L = [None] * (lat.N + 1)
    L[lat.N] = np.zeros(lat.size(lat.N))
    arg = [None] * lat.N
    for t in range(lat.N - 1, -1, -1):
        S = lat.size(t)
        cand = np.broadcast_to(grid, (S,) + grid.shape)
        if include_current:
            cand = np.concatenate([np.asarray(own[t], float)[:, None, :], cand], axis=1)
        b = np.einsum("sfd,skd->skf", c.SigmaT(t), cand)
        th = c.theta_img(t)
        drift = (np.einsum("skf,sf->sk", b, th) - 0.5 * np.sum(b * b, axis=2)) * lat.dt
        inc = drift[:, :, None] + np.einsum("skf,cf->skc", b, lat.signs) * lat.sqdt
        nxt = L[t + 1][lat.children(t)][:, None, :]
        vals = _log_mean_exp(ge * inc + nxt, axis=2)
        best = np.argmax(sign * vals, axis=1)
        L[t] = vals[np.arange(S), best]
        arg[t] = cand[np.arange(S), best]
    value = _value_from_log(spec, agent, float(L[0][0]), _others_log_factor(spec, coeffs, strategies, agent))
    return BestResponse(value, arg, L, grid_spacing(grid))


# ---------------------------------------------------------------------------
# martingale optimality


@dataclass
class MartingaleReport:
    agent: int
    martingale_residual: float  # lattice one-step residual of R under the profile
    others_residual: float  # same for the peers' exponential factors
    generator_residual: float  # sup-node |drift of log R| at the equilibrium (zero identity)
    worst_direction: float  # max over perturbations/nodes of the drift sign statistic
    worst_location: tuple | None  # (perturbation, step, node) of a violation
    strict_fraction: float  # share of moved (perturbation, node) pairs with strict decrease
    lattice_direction: float  # max one-step E[R_{t+1}] - R_t over perturbations (informational)
    sign_ok: bool
    passed: bool


def random_perturbations(sol: NAgentBsdeSolution, agent: int, count: int = 20, seed: int = 0, lo=0.05, hi=0.5) -> list:
    """Nodewise random shifts of the equilibrium strategy, projected onto ``A_i``."""
    rng = np.random.default_rng(seed)
    cset = sol.spec.agents[agent].constraint
    out = []
    for _ in range(count):
        steps = []
        for p in sol.own[agent].pi:
            direction = rng.normal(size=p.shape)
            direction /= np.linalg.norm(direction, axis=1, keepdims=True)
            size = rng.uniform(lo, hi, size=(p.shape[0], 1))
            steps.append(cset.project(p + size * direction))
        out.append(steps)
    return out


def check_martingale_optimality(
    spec: GameSpec,
    sol: NAgentBsdeSolution,
    agent: int,
    perturbations: list = (),
    tol: float = MARTINGALE_TOL,
    direction_tol: float = DIRECTION_TOL,
) -> MartingaleReport:
    """Martingale / supermartingale checks for ``R = exp(Y + gamma Xhat) / gamma``.

    Martingale part: ``Y`` is the exact lattice value-to-go of the profile,
    so ``R`` must be a one-step martingale at every node.  Because
    ``R_{t+1} / R_t`` depends only on the node, each step is checked with
    ``Xhat_t`` normalised to ``log x_i``; the peers' factors are exact
    martingales on their own lattices and are checked separately.

    Supermartingale part: for a perturbation ``pi`` with image ``b = Sigma^T pi``
    the drift of ``R`` divided by ``gamma R`` is

        (gamma'/gamma) (1 - gamma') [(b - g).(raw - g) - |b - g|^2 / 2]

    relative to the equilibrium, where ``g = P(raw)``.  It must be ``<= 0`` at
    every node.  ``lattice_direction`` additionally reports the discrete
    one-step change of ``R``, which carries an O(dt) scheme error.
    """
    coeffs = [agent_coefficients(spec, a) for a in spec.agents]
    a = spec.agents[agent]
    c = coeffs[agent]
    lat = c.lattice
    ge = effective_gamma(spec, agent)
    own = sol.own[agent]
    strategies = [o.pi for o in sol.own]
    L = policy_log_value(c, ge, strategies[agent])
    scale = np.exp(ge * np.log(a.x0)) / a.gamma
    resid = 0.0
    sign_ok = True
    gen = 0.0
    for t in range(lat.N):
        inc = log_wealth_increment(c, t, strategies[agent][t])
        nxt = np.mean(scale * np.exp(ge * inc + L[t + 1][lat.children(t)]), axis=1)
        R = scale * np.exp(L[t])
        resid = max(resid, float(np.max(np.abs(nxt - R))))
        sign_ok &= bool(np.all(np.sign(R) == np.sign(a.gamma)))
        # drift of log R at the equilibrium: zero by the generator identity
        th, g, Z = c.theta_img(t), own.g[t], own.Z[t]
        h = (
            -own.drift[t]
            + ge * (np.sum(g * th, axis=1) - 0.5 * np.sum(g * g, axis=1))
            + 0.5 * np.sum((Z + ge * g) ** 2, axis=1)
        )
        gen = max(gen, float(np.max(np.abs(h))))
    others = 0.0
    for j, k in enumerate(interaction_weights(spec, agent)):
        if k == 0.0:
            continue
        P = policy_log_value(coeffs[j], -k, strategies[j])
        for t in range(lat.N):
            inc = log_wealth_increment(coeffs[j], t, strategies[j][t])
            nxt = np.mean(np.exp(-k * inc + P[t + 1][coeffs[j].lattice.children(t)]), axis=1)
            others = max(others, float(np.max(np.abs(nxt - np.exp(P[t])))))
    worst, where, strict, total, lat_dir = -np.inf, None, 0, 0, -np.inf
    for q, pert in enumerate(perturbations):
        pert = _as_steps(pert)
        for t in range(lat.N):
            p = np.asarray(pert[t], float)
            g = own.g[t]
            raw = (own.Z[t] + c.theta_img(t)) / (1.0 - ge)
            b = np.einsum("sfd,sd->sf", c.SigmaT(t), p)
            stat = (ge / a.gamma) * (1.0 - ge) * (np.sum((b - g) * (raw - g), axis=1) - 0.5 * np.sum((b - g) ** 2, axis=1))
            s = int(np.argmax(stat))
            if stat[s] > worst:
                worst, where = float(stat[s]), (q, t, s)
            moved = np.linalg.norm(b - g, axis=1) > 1e-12
            strict += int(np.sum(stat[moved] < 0))
            total += int(np.sum(moved))
            inc = log_wealth_increment(c, t, p)
            nxt = np.mean(scale * np.exp(ge * inc + L[t + 1][lat.children(t)]), axis=1)
            lat_dir = max(lat_dir, float(np.max(nxt - scale * np.exp(L[t]))))
    worst_val = float(worst) if perturbations else 0.0
    passed = resid <= tol and others <= tol and gen <= tol and worst_val <= direction_tol and sign_ok
    return MartingaleReport(
        agent,
        resid,
        others,
        gen,
        worst_val,
        where if worst_val > direction_tol else None,
        strict / total if total else 1.0,
        float(lat_dir) if perturbations else 0.0,
        sign_ok,
        passed,
    )


# ---------------------------------------------------------------------------
# Nash certificate


@dataclass
class NashCertificate:
    gains: list
    equilibrium_values: list
    best_response_values: list
    argmax_gap: list  # sup-node |argmax - pi| per agent
    grid_spacing: float
    dt: float
    tolerance: float
    martingale_residuals: list
    passed: bool

    @property
    def max_gain(self) -> float:
        return float(max(self.gains))

    @property
    def status(self) -> str:
        return "PASS" if self.passed else "FAIL"

    def to_json(self) -> str:
        d = asdict(self)
        d["status"] = self.status
        d["max_gain"] = self.max_gain
        return json.dumps(d, indent=2, sort_keys=True)


def certify_nash(
    spec: GameSpec,
    sol: NAgentBsdeSolution | None = None,
    points: int = GRID_POINTS,
    grid: np.ndarray | None = None,
    strategies: list | None = None,
    tolerance: float = NASH_TOL,
) -> NashCertificate:
    """Deviation gains ``V(best response) - V(profile)`` for every agent.

    ``strategies`` overrides the solved profile (used for negative controls).
    The tolerance is fixed per instance family; 1e-3 covers ``N = 16`` and
    101-point grids in every family exercised by the test suite.
    """
    sol = sol or solve_n_agent_bsde(spec)
    coeffs = [agent_coefficients(spec, a) for a in spec.agents]
    prof = [_as_steps(s) for s in strategies] if strategies is not None else [o.pi for o in sol.own]
    gains, eqv, brv, gaps, spacing = [], [], [], [], 0.0
    for i in range(spec.n):
        v = policy_value(spec, i, prof, coeffs)
        br = best_response(spec, prof, i, grid=grid, points=points, coeffs=coeffs)
        spacing = max(spacing, br.spacing)
        eqv.append(v)
        brv.append(br.value)
        gains.append(br.value - v)
        gaps.append(max(float(np.max(np.abs(a - b))) for a, b in zip(br.argmax, prof[i])))
    mres = [check_martingale_optimality(spec, sol, i).martingale_residual for i in range(spec.n)]
    return NashCertificate(gains, eqv, brv, gaps, spacing, spec.dt, tolerance, mres, bool(max(gains) <= tolerance))


# ---------------------------------------------------------------------------
# conditional cross-moment inequality on a tree


@dataclass
class CrossMomentResult:
    pairs: int
    worst_ratio: float  # max over pairs of lhs / (|f| |g|)
    violations: int
    max_excess: float


def _conditional_cross_sum(lat: Lattice, f: list, g: list, common: int) -> float:
    acc = None
    best = -np.inf
    for t in range(lat.N - 1, -1, -1):
        idx, _ = lat.sub_index(t, (common,))
        h = lat.group_mean(np.sum(f[t] * g[t], axis=1), t, (common,))[idx] * lat.dt
        acc = h if acc is None else h + lat.cond_expect(acc, t)
        best = max(best, float(np.max(acc)))
    return best


def cross_moment_check(pairs: int = 1000, seed: int = 0, max_fn: int = 12, dim: int = 2) -> CrossMomentResult:
    """Check ``E[sum_s E[f_s . g_s | F*_s] dt | F_t] <= |f|_BMO |g|_BMO`` at every node.

    Trees use ``F`` factors with the last one as the common factor and
    ``F * N <= max_fn``.  ``g`` is drawn correlated with ``f`` so that many
    pairs come close to equality.
    """
    rng = np.random.default_rng(seed)
    shapes = [(F, N) for F in (2, 3) for N in range(1, max_fn // F + 1)]
    worst, bad, excess = 0.0, 0, 0.0
    for _ in range(pairs):
        F, N = shapes[rng.integers(len(shapes))]
        lat = Lattice(N, float(rng.uniform(0.5, 2.0)), F, recombining=False)
        rho = rng.uniform(-0.2, 1.0)
        f = [rng.normal(size=(lat.size(t), dim)) * rng.exponential() for t in range(N)]
        g = [rho * x + np.sqrt(max(1 - rho * rho, 0.0)) * rng.normal(size=x.shape) for x in f]
        lhs = _conditional_cross_sum(lat, f, g, F - 1)
        rhs = np.sqrt(bmo_norm_sq(lat, f) * bmo_norm_sq(lat, g))
        worst = max(worst, lhs / rhs)
        if lhs > rhs * (1 + 1e-12):
            bad += 1
            excess = max(excess, lhs - rhs)
    return CrossMomentResult(pairs, worst, bad, excess)


# ---------------------------------------------------------------------------
# convergence experiment


CONVERGENCE_COLUMNS = (
    "n",
    "max_strategy_gap",
    "max_value_gap",
    "gamma1_bmo",
    "gamma2_bmo",
    "gamma1_root",
    "gamma2_root",
    "max_A",
    "dz_bmo",
    "a_dominates",
    "scaled_l2",
    "modulus",
    "step_gap_lhs",
    "step_gap_rhs",
    "step_gap_holds",
    "wealth_gap",
)


@dataclass
class ConvergenceReport:
    rows: list = field(default_factory=list)
    settings: dict = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], float)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CONVERGENCE_COLUMNS)
        for r in self.rows:
            w.writerow([r["n"]] + [repr(float(r[c])) for c in CONVERGENCE_COLUMNS[1:]])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({"settings": self.settings, "rows": self.rows}, indent=2, sort_keys=True)


def n_agent_game(family: ParamFamily, G: Graphon, n: int, self_weight: bool = False, **kw) -> GameSpec:
    """Agent ``i`` gets type ``i/n`` and ``lambda_ij = G(i/n, j/n)``."""
    u = np.arange(1, n + 1) / n
    lam = G(u[:, None], u[None, :])
    if not self_weight:
        np.fill_diagonal(lam, 0.0)
    return GameSpec("finite", tuple(family.at(x) for x in u), lam=lam, allow_self_weight=self_weight, **kw)


def _cond_moments_table(lat: Lattice, m_vals: list) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """For ``s >= t``: max/min over step-``t`` nodes of ``E[m_s | node]`` and max conditional variance."""
    N = len(m_vals)
    hi = np.zeros((N, N))
    lo = np.zeros((N, N))
    var = np.zeros((N, N))
    for s in range(N):
        mean = np.asarray(m_vals[s], float)
        sq = mean * mean
        for t in range(s, -1, -1):
            if t < s:
                mean = lat.cond_expect(mean, t)
                sq = lat.cond_expect(sq, t)
            hi[t, s], lo[t, s] = mean.max(), mean.min()
            var[t, s] = max(float(np.max(sq - mean * mean)), 0.0)
    return hi, lo, var


def gamma_bmo_bound(weights: np.ndarray, tables: list, centre: np.ndarray, dt: float) -> tuple[float, float]:
    """Certified upper bounds for ``Gamma_s = sum_j w_j m_j(s) - c_s``.

    Returns ``(bound on || sqrt|Gamma| ||_BMO^2, bound on E[sum_s |Gamma_s| dt])``;
    the second is the same estimate restricted to the root node.

    The ``m_j`` live on independent lattices, so at any joint node the
    conditional mean ranges over the box of per-agent conditional means and
    the conditional variance is the weighted sum of per-agent variances.
    ``E[|Gamma_s| | F_t] <= sqrt(E[Gamma_s^2 | F_t])`` then bounds each term.
    """
    N = centre.size
    hi = sum(w * tb[0] for w, tb in zip(weights, tables))
    lo = sum(w * tb[1] for w, tb in zip(weights, tables))
    var = sum(w * w * tb[2] for w, tb in zip(weights, tables))
    mean2 = np.maximum((hi - centre[None, :]) ** 2, (lo - centre[None, :]) ** 2)
    term = np.sqrt(mean2 + var) * dt
    mask = np.triu(np.ones((N, N), bool))
    sums = np.sum(np.where(mask, term, 0.0), axis=1)
    return float(np.max(sums)), float(sums[0])


def exact_gamma_bmo(weights: np.ndarray, lattices: list, m_vals: list, centre: np.ndarray) -> float:
    """Brute-force ``max_node E[sum_{s>=t} |Gamma_s| dt | node]`` on the joint tree (small cases only)."""
    n = len(lattices)
    lat0 = lattices[0]
    N, dt = lat0.N, lat0.dt
    # joint nodes at step t: all combinations of per-agent nodes
    acc = None
    best = 0.0
    for t in range(N - 1, -1, -1):
        sizes = [lat.size(t) for lat in lattices]
        grids = np.meshgrid(*[np.arange(s) for s in sizes], indexing="ij")
        idx = [g.reshape(-1) for g in grids]
        gam = sum(w * m_vals[j][t][idx[j]] for j, w in enumerate(weights)) - centre[t]
        cur = np.abs(gam) * dt
        if acc is not None:
            nxt_sizes = [lat.size(t + 1) for lat in lattices]
            ch = [lat.children(t) for lat in lattices]
            total = np.zeros(cur.size)
            nc = [c.shape[1] for c in ch]
            for combo in np.ndindex(*nc):
                flat = np.zeros(cur.size, dtype=np.int64)
                for j in range(n):
                    flat = flat * nxt_sizes[j] + ch[j][idx[j], combo[j]]
                total += acc[flat]
            cur = cur + total / np.prod(nc)
        acc = cur
        best = max(best, float(np.max(cur)))
    return best


def convergence_experiment(
    family: ParamFamily,
    G: Graphon,
    n_list=(4, 16, 64),
    m: int = 64,
    rho: float = 0.05,
    horizon: float = 1.0,
    steps: int = 16,
    self_weight: bool = False,
    quad_points: int = 4096,
) -> ConvergenceReport:
    """Solve the n-agent games and the graphon game and compare them."""
    gspec = GameSpec.graphon_game(family, G, m, rho=rho, horizon=horizon, steps=steps)
    gsol = solve_graphon_bsde_no_common(gspec)
    cache: dict[float, object] = {}

    def type_sol(u: float):
        key = round(u, 15)
        if key not in cache:
            cache[key] = evaluate_type(gsol, u)
        return cache[key]

    R = max(np.sqrt(bmo_norm_sq(gsol.lattice(k), gsol.sweeps[k].Z)) for k in range(gsol.m))
    v = type_locations(quad_points)
    logx_v = np.log([family.at(x).x0 for x in v])
    report = ConvergenceReport(
        settings=dict(n_list=list(n_list), m=m, rho=rho, horizon=horizon, steps=steps, self_weight=self_weight, graphon=G.to_json())
    )
    for n in n_list:
        try:
            spec = n_agent_game(family, G, n, self_weight, rho=rho, horizon=horizon, steps=steps)
            sol = solve_n_agent_bsde(spec)
        except Exception as exc:  # annotate the offending n
            raise type(exc)(f"convergence experiment failed at n={n}: {exc}") from exc
        values = compute_values_n(sol, spec)
        u = np.arange(1, n + 1) / n
        types = [type_sol(x) for x in u]
        sgap = max(
            float(np.max(np.abs(a - b))) for i, ts in enumerate(types) for a, b in zip(sol.own[i].pi, ts.sweep.pi)
        )
        vgap = float(max(abs(values[i] - ts.value) for i, ts in enumerate(types)))
        # Gamma diagnostics use the graphon strategies of types j/n
        m1, m2, t1, t2 = [], [], [], []
        for i, ts in enumerate(types):
            c = ts.coeffs
            a = [np.sum(c.theta_img(t) * ts.sweep.g[t], axis=1) for t in range(steps)]
            b = [np.sum(ts.sweep.g[t] ** 2, axis=1) for t in range(steps)]
            m1.append(a)
            m2.append(b)
            t1.append(_cond_moments_table(c.lattice, a))
            t2.append(_cond_moments_table(c.lattice, b))
        e1, e2 = gsol.type_means
        lam_n = spec.lam_n.copy()
        np.fill_diagonal(lam_n, 0.0)
        gtil = float(np.max(np.abs(spec.gammas)))
        gbar = float(np.max(spec.gammas))
        theta_sup = max(float(np.max(np.linalg.norm(ts.coeffs.theta_img(t), axis=1))) for ts in types for t in range(steps))
        c0 = growth_certificate(spec.agents[0].constraint, types[0].coeffs.SigmaT(0)).c0
        tail = rho**2 * gtil**2 / (n - 1) ** 2 * (R / (1 - gbar) + np.sqrt(horizon) * theta_sup / (1 - gbar) + np.sqrt(horizon) * c0) ** 2
        g1_max = g2_max = A_max = dz_max = r1_max = r2_max = 0.0
        for i in range(n):
            w_row = G(u[i], gsol.u) / m
            c1 = w_row @ e1
            c2 = 2.0 * (w_row @ e2)
            g1, r1 = gamma_bmo_bound(lam_n[i], t1, c1, spec.dt)
            g2, r2 = gamma_bmo_bound(lam_n[i], t2, c2, spec.dt)
            r1_max, r2_max = max(r1_max, r1), max(r2_max, r2)
            A = np.sqrt(2 * rho * gtil * g1 + rho * gtil * g2 + tail)
            g1_max, g2_max, A_max = max(g1_max, np.sqrt(g1)), max(g2_max, np.sqrt(g2)), max(A_max, A)
            lat_i = sol.lattice(i)
            dz = bmo_norm_sq(lat_i, [a - b for a, b in zip(sol.own[i].Z, types[i].sweep.Z)])
            for j in range(n):
                if j != i:
                    dz += bmo_norm_sq(sol.lattice(j), [z[:, :, i] for z in sol.cross_Z[j]])
            dz_max = max(dz_max, float(np.sqrt(dz)))
        scaled, modulus = condition_2_13_moduli(G, n, quad_points=quad_points)
        cell = np.ceil(n * v) / n
        lhs = max(float(np.mean(np.abs(G(x, cell) - G(x, v)))) for x in u)
        rhs = 2 * scaled + 2 * modulus
        logx_n = np.log([a.x0 for a in spec.agents])
        wgap = max(abs(float(lam_n[i] @ logx_n) - float(np.mean(logx_v * G(u[i], v)))) for i in range(n))
        report.rows.append(
            dict(
                n=int(n),
                max_strategy_gap=sgap,
                max_value_gap=vgap,
                gamma1_bmo=float(g1_max),
                gamma2_bmo=float(g2_max),
                gamma1_root=float(r1_max),
                gamma2_root=float(r2_max),
                max_A=float(A_max),
                dz_bmo=dz_max,
                a_dominates=float(dz_max <= A_max),
                scaled_l2=scaled,
                modulus=modulus,
                step_gap_lhs=lhs,
                step_gap_rhs=rhs,
                step_gap_holds=float(lhs <= rhs),
                wealth_gap=wgap,
            )
        )
    return report


__all__ = [
    "CrossMomentResult",
    "BestResponse",
    "CONVERGENCE_COLUMNS",
    "ConvergenceReport",
    "MartingaleReport",
    "NashCertificate",
    "cross_moment_check",
    "best_response",
    "certify_nash",
    "check_martingale_optimality",
    "convergence_experiment",
    "effective_gamma",
    "exact_gamma_bmo",
    "gamma_bmo_bound",
    "grid_spacing",
    "n_agent_game",
    "policy_log_value",
    "policy_value",
    "random_perturbations",
    "strategy_grid",
]
