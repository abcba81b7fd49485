"""Acceptance criteria, one test per criterion; each prints a PASS/FAIL line.

Run ``pytest tests/test_acceptance.py -v`` (lines are repeated in the
terminal summary) or ``python3 tests/test_acceptance.py``.
"""

import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from conftest import (  # noqa: E402
    ACCEPTANCE_LINES,
    agent,
    finite_spec,
    last_sign_agent,
    merton_spec,
    prop_spec,
    state_dependent_specs,
    walk_family,
)
from oracles import joint_nodes, joint_tree_bsde  # noqa: E402

from relperf.closed_form import merton_benchmark, prop_graphon_strategy, prop_n_agent_strategy  # noqa: E402
from relperf.graphon_solver import GMapRefused, gmap_bound, solve_graphon_bsde_common_noise, solve_graphon_bsde_no_common  # noqa: E402
from relperf.model import AgentParams, GameSpec, Graphon, ParamFamily, agent_coefficients  # noqa: E402
from relperf.n_agent_solver import solve_n_agent_bsde  # noqa: E402
from relperf.projection import Ball, Box, FullSpace, HalfSpace, NonNegativeOrthant, project_transformed  # noqa: E402
from relperf.verify import cross_moment_check, certify_nash, check_martingale_optimality, convergence_experiment, random_perturbations  # noqa: E402

ROUNDOFF_FLOOR = 1e-12


def record(k: int, ok: bool, detail: str) -> None:
    line = f"criterion {k}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def nash_instances():
    s1, s2 = state_dependent_specs(16)
    return {"merton": merton_spec(0.0, 16), "constant": prop_spec(4, rho=0.5, steps=16), "state-1": s1, "state-2": s2}


# ---------------------------------------------------------------------------


def test_criterion_1_closed_form_reproduction():
    worst, slowest = 0.0, 0.0
    for n in (2, 8):
        spec = prop_spec(n, rho=0.5, steps=16)
        t0 = time.perf_counter()
        sol = solve_n_agent_bsde(spec)
        slowest = max(slowest, time.perf_counter() - t0)
        for i, a in enumerate(spec.agents):
            sig = a.sigma.value[0, 0]
            target = prop_n_agent_strategy(a.mu.value[0] / sig, a.gamma, spec.rho, spec.lam_n[i, i])
            worst = max(worst, max(float(np.max(np.abs(sig * p - target))) for p in sol.own[i].pi))
    fam = ParamFamily(agent(-1.0, 0.1, 0.2), agent(0.6, 0.3, 0.4, x0=2.0))
    gs = GameSpec.graphon_game(fam, Graphon("uniform_attachment"), 16, rho=0.5, horizon=1.0, steps=16)
    t0 = time.perf_counter()
    gsol = solve_graphon_bsde_no_common(gs)
    slowest = max(slowest, time.perf_counter() - t0)
    for k, p in enumerate(gsol.types):
        sig = p.sigma.value[0, 0]
        target = prop_graphon_strategy(p.mu.value[0] / sig, p.gamma)
        worst = max(worst, max(float(np.max(np.abs(sig * q - target))) for q in gsol.sweeps[k].pi))
    record(1, worst <= 1e-10 and slowest < 1.0, f"max |sigma pi - closed form| = {worst:.2e}, slowest solve {slowest:.3f} s")


def test_criterion_2_merton_benchmark():
    spec = merton_spec(0.0, 16)
    sol = solve_n_agent_bsde(spec)
    refs = [merton_benchmark([[0.3], [0.2]], 0.5, 1.0, 1.0), merton_benchmark([0.4], -2.0, 1.5, 1.0)]
    err = max(max(abs(sol.Y0[i] - r[0]), abs(sol.values[i] - r[1])) for i, r in enumerate(refs))
    a = AgentParams.make(0.5, 1.0, {"kind": "time", "value": [[0.6], [0.4]]}, [[2.0]])
    b = AgentParams.make(-2.0, 3.0, {"kind": "time", "value": [[0.2], [0.1]]}, [[0.5]])
    gs = GameSpec.graphon_game(ParamFamily(a, b), Graphon("uniform_attachment"), 8, rho=0.0, horizon=1.0, steps=16)
    gsol = solve_graphon_bsde_no_common(gs)
    for k, p in enumerate(gsol.types):
        Y0, V0 = merton_benchmark(p.mu.value[:, 0] / p.sigma.value[0, 0], p.gamma, p.x0, 1.0)
        err = max(err, abs(gsol.Y0[k] - Y0), abs(gsol.values[k] - V0))
    record(2, err <= 1e-12, f"max (Y0, V0) error = {err:.2e}")


def test_criterion_3_full_tree_oracle():
    t0 = time.perf_counter()
    spec = finite_spec([last_sign_agent(0.5, 0.2, 0.1), last_sign_agent(0.5, 0.2, 0.1)], rho=0.1, steps=8)
    sol = solve_n_agent_bsde(spec)
    Y, values = joint_tree_bsde([0.5, 0.5], [1.0, 1.0], [[0, 1], [1, 0]], 0.1, [0.2, 0.2], [0.1, 0.1], [1.0, 1.0], 8, 1.0)
    err = float(np.max(np.abs(sol.values - values)))
    for t in range(9):
        nodes = joint_nodes(2, t)
        for i in range(2):
            err = max(err, float(np.max(np.abs(sol.Y_joint(i, t, nodes) - Y[t][i].reshape(-1)))))
    elapsed = time.perf_counter() - t0
    record(3, err <= 1e-12 and elapsed < 10, f"max error over 2^16 paths = {err:.2e}, {elapsed:.2f} s")


def test_criterion_4_nash_certification():
    gains = {}
    for name, spec in nash_instances().items():
        cert = certify_nash(spec, points=101)
        gains[name] = cert.max_gain
    ctl = merton_spec(0.0, 16)
    sol = solve_n_agent_bsde(ctl)
    bad = certify_nash(ctl, sol, points=101, strategies=[[p + 0.05 for p in o.pi] for o in sol.own])
    ok = max(gains.values()) <= 1e-3 and bad.max_gain >= 1e-3 and not bad.passed
    detail = ", ".join(f"{k} {v:.2e}" for k, v in gains.items())
    record(4, ok, f"max gains: {detail}; perturbed control {bad.max_gain:.2e} ({bad.status})")


def test_criterion_5_martingale_optimality():
    resid, worst, count, failed = 0.0, -np.inf, 0, []
    for name, spec in nash_instances().items():
        sol = solve_n_agent_bsde(spec)
        for i in range(spec.n):
            perts = random_perturbations(sol, i, 20, seed=100 + i)
            rep = check_martingale_optimality(spec, sol, i, perts)
            resid = max(resid, rep.martingale_residual, rep.others_residual, rep.generator_residual)
            worst = max(worst, rep.worst_direction)
            count += len(perts)
            if not rep.passed:
                failed.append(f"{name}[{i}]")
    record(
        5,
        not failed and resid <= 1e-11,
        f"max residual {resid:.2e}, worst direction {worst:.2e} over {count} perturbations"
        + (f", failed {failed}" if failed else ""),
    )


def _random_common_instance(rng):
    while True:
        g0, g1 = rng.uniform(-2.0, 0.9, size=2)
        m = int(rng.integers(2, 7))
        u = (2 * np.arange(1, m + 1) - 1) / (2 * m)
        gam = (1 - u) * g0 + u * g1
        if np.min(np.abs(gam)) < 0.05:
            continue
        limit = (1 - gam.max()) / np.abs(gam).max()
        if 0.5 * limit <= 1.0 and limit > 0:
            break

    def endpoint(g):
        mu = {"kind": "walk", "value": [rng.uniform(0.02, 0.3)], "amp": [rng.uniform(-0.1, 0.1)], "factor": 0}
        return AgentParams.make(g, rng.uniform(0.5, 2.0), mu, [[rng.uniform(0.2, 1.0)]], sigma_star=[rng.uniform(-0.6, 0.6)])

    G = [Graphon("uniform_attachment"), Graphon("constant", rng.uniform(0.2, 1.0)), Graphon("min"), Graphon("product")][rng.integers(4)]
    fam = ParamFamily(endpoint(g0), endpoint(g1))
    steps = int(rng.integers(2, 7))
    return GameSpec.graphon_game(fam, G, m, rho=0.5 * limit, horizon=1.0, steps=steps, common_noise=True), limit


def test_criterion_6_gmap_contraction():
    rng = np.random.default_rng(2024)
    worst_excess, refused, testable = -np.inf, 0, 0
    for _ in range(50):
        spec, limit = _random_common_instance(rng)
        sol = solve_graphon_bsde_common_noise(spec)
        worst_excess = max(worst_excess, sol.contraction_rate - gmap_bound(spec, spec.rho))
        # rho must stay in [0, 1], so refusal is only testable when the limit is
        for rho in (limit, 0.5 * (limit + 1.0)):
            if rho > 1.0:
                continue
            testable += 1
            try:
                solve_graphon_bsde_common_noise(spec.with_overrides(rho=rho))
            except GMapRefused:
                refused += 1
    ok = worst_excess <= 1e-6 and testable > 0 and refused == testable
    record(6, ok, f"50 instances, max (rate - bound) = {worst_excess:.2e}, refused {refused}/{testable} at rho >= limit")


def _shrinks(x, floor=ROUNDOFF_FLOOR):
    x = np.maximum(np.asarray(x, float), floor)
    return bool(np.all(np.diff(x) <= 0) and x[-1] <= 0.5 * x[0] or np.all(x == floor))


def test_criterion_7_convergence_experiment():
    t0 = time.perf_counter()
    G = Graphon("uniform_attachment")
    base = convergence_experiment(walk_family(), G, (4, 16, 64), m=64, rho=0.05, steps=16)
    selfw = convergence_experiment(walk_family(), G, (4, 16, 64), m=64, rho=0.05, steps=16, self_weight=True)
    elapsed = time.perf_counter() - t0
    checks = {
        "strategy gap": _shrinks(base.column("max_strategy_gap")),
        "value gap": _shrinks(base.column("max_value_gap")),
        "self-weight strategy gap": _shrinks(selfw.column("max_strategy_gap")),
        "self-weight value gap": _shrinks(selfw.column("max_value_gap")),
        "scaled L2": bool(np.all(np.diff(base.column("scaled_l2")) < 0)),
        "modulus": bool(np.all(np.diff(base.column("modulus")) < 0)),
    }
    ok = all(checks.values()) and elapsed < 120
    fmt = lambda v: "/".join(f"{x:.2e}" for x in v)
    record(
        7,
        ok,
        f"strategy {fmt(base.column('max_strategy_gap'))} (self-weight {fmt(selfw.column('max_strategy_gap'))}), "
        f"value {fmt(base.column('max_value_gap'))}, scaled L2 {fmt(base.column('scaled_l2'))}, "
        f"modulus {fmt(base.column('modulus'))}, {elapsed:.1f} s"
        + ("" if ok else f", failing {[k for k, v in checks.items() if not v]}"),
    )


def _projection_variants(d=3):
    sets = {
        "full": (FullSpace(), True),
        "orthant": (NonNegativeOrthant(), True),
        "box": (Box([-0.5, 0.0, 0.2], [1.0, 0.3, 2.0]), False),
        "box-with-0": (Box([-1.0, 0.0, -0.5], [1.0, 2.0, 0.5]), True),
        "ball": (Ball(np.zeros(d), 1.5), True),
        "ball-offcentre": (Ball([2.0, 0.0, -1.0], 1.0), False),
        "halfspace": (HalfSpace([1.0, -2.0, 0.5], 0.7), True),
        "halfspace-shifted": (HalfSpace([1.0, 1.0, 1.0], -1.0), False),
    }
    out = {k: (s.project, z) for k, (s, z) in sets.items()}
    ST = np.array([[1.7]])
    out["image-box"] = (lambda x: project_transformed(np.broadcast_to(ST, x.shape[:-1] + (1, 1)), Box([0.1], [0.6]), x), False)
    iso = 0.8 * np.eye(d)
    out["image-ball"] = (lambda x: project_transformed(np.broadcast_to(iso, x.shape[:-1] + (d, d)), Ball([0.5, 0.0, 0.0], 1.0), x), True)
    return out


def test_criterion_8_projection_properties():
    rng = np.random.default_rng(8)
    S = 10_000
    worst = {}
    for name, (P, zero_in) in _projection_variants().items():
        dim = 1 if name == "image-box" else 3
        x = rng.normal(scale=3.0, size=(S, dim))
        y = rng.normal(scale=3.0, size=(S, dim))
        px, py = P(x), P(y)
        idem = np.linalg.norm(P(px) - px, axis=1)
        lip = np.linalg.norm(px - py, axis=1) - np.linalg.norm(x - y, axis=1)
        vi = np.sum((x - px) * (py - px), axis=1)
        growth = np.linalg.norm(px, axis=1) - np.linalg.norm(x, axis=1) if zero_in else np.zeros(S)
        worst[name] = max(idem.max(), lip.max(), vi.max(), growth.max())
    bad = {k: v for k, v in worst.items() if v > 1e-12}
    record(8, not bad, f"{len(worst)} set variants x 10^4 samples, worst excess {max(worst.values()):.2e}" + (f", violations {bad}" if bad else ""))


def test_criterion_9_cross_moment_inequality():
    res = cross_moment_check(pairs=1000, seed=0, max_fn=12)
    record(9, res.violations == 0, f"{res.pairs} pairs, worst ratio {res.worst_ratio:.6f}, violations {res.violations}")


if __name__ == "__main__":
    tests = [v for k, v in sorted(globals().items()) if k.startswith("test_criterion_")]
    failures = 0
    for fn in tests:
        try:
            fn()
        except AssertionError:
            failures += 1
    sys.exit(1 if failures else 0)
