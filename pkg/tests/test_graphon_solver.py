import numpy as np
import pytest
from conftest import agent, walk_family

from relperf.closed_form import merton_benchmark, prop_graphon_strategy
from relperf.graphon_solver import (
    GMapRefused,
    aggregate,
    evaluate_type,
    g_fixed_point,
    gmap_bound,
    self_consistency_residual,
    solve_graphon,
    solve_graphon_bsde_common_noise,
    solve_graphon_bsde_no_common,
)
from relperf.lattice import Lattice
from relperf.model import AgentParams, GameSpec, Graphon, ParamFamily, SpecError, type_locations
from relperf.projection import Box


def gspec(family, G=None, m=8, rho=0.3, steps=8, horizon=1.0, common=False):
    G = G or Graphon("uniform_attachment")
    return GameSpec.graphon_game(family, G, m, rho=rho, horizon=horizon, steps=steps, common_noise=common)


def det_family(g0=-1.0, g1=0.6, th0=0.1, th1=0.3, s0=0.2, s1=0.4, sstar=None, constraint=None):
    a = agent(g0, th0, s0, x0=1.0, sigma_star=sstar, constraint=constraint)
    b = agent(g1, th1, s1, x0=2.0, sigma_star=sstar, constraint=constraint)
    return ParamFamily(a, b)


# -- aggregate ---------------------------------------------------------------


def test_aggregate_zero():
    A, B = aggregate(np.zeros(4), np.zeros(4), Graphon("uniform_attachment"), 0.3)
    assert (A, B) == (0.0, 0.0)


def test_aggregate_constant_graphon_identical_types():
    th, g, p = 0.2, 0.4, 0.35
    A, B = aggregate(np.full(5, th * g), np.full(5, 0.5 * g * g), Graphon("constant", p), 0.7)
    assert A == pytest.approx(p * th * g, abs=1e-15)
    assert B == pytest.approx(p * 0.5 * g * g, abs=1e-15)


def test_aggregate_two_types_midpoint():
    """m = 2: the midpoint rule evaluates G at the two type locations."""
    G = Graphon("uniform_attachment")
    A, B = aggregate([0.2 * 0.4, 0.2 * 0.2], [0.08, 0.02], G, 0.25)
    assert A == pytest.approx(0.5 * (0.75 * 0.08 + 0.25 * 0.04), abs=1e-15)
    assert B == pytest.approx(0.5 * (0.75 * 0.08 + 0.25 * 0.02), abs=1e-15)


@pytest.mark.parametrize("u", [0.25, 0.6, 0.9])
def test_aggregate_dense_oracle(u):
    """Same step integrand (g = 0.4 below 1/2, 0.2 above) with m = 100 types against 10^4 points."""
    G = Graphon("uniform_attachment")
    gfun = lambda v: np.where(v <= 0.5, 0.4, 0.2)
    ut = type_locations(100)
    A, B = aggregate(0.2 * gfun(ut), 0.5 * gfun(ut) ** 2, G, u)
    v = (np.arange(10_000) + 0.5) / 10_000
    assert A == pytest.approx(np.mean(0.2 * gfun(v) * G(u, v)), abs=1e-3)
    assert B == pytest.approx(np.mean(0.5 * gfun(v) ** 2 * G(u, v)), abs=1e-3)


# -- no common noise ---------------------------------------------------------


def test_rho_zero_per_type_merton():
    a = AgentParams.make(0.5, 1.0, {"kind": "time", "value": [[0.6], [0.4]]}, [[2.0]])
    b = AgentParams.make(-2.0, 3.0, {"kind": "time", "value": [[0.2], [0.1]]}, [[0.5]])
    spec = gspec(ParamFamily(a, b), m=6, rho=0.0, steps=16)
    sol = solve_graphon_bsde_no_common(spec)
    for k, p in enumerate(sol.types):
        th = p.mu.value[:, 0] / p.sigma.value[0, 0]
        Y0, V0 = merton_benchmark(th, p.gamma, p.x0, 1.0)
        assert sol.Y0[k] == pytest.approx(Y0, abs=1e-12)
        assert sol.values[k] == pytest.approx(V0, abs=1e-12)


@pytest.mark.parametrize("G", [Graphon("uniform_attachment"), Graphon("constant", 0.7), Graphon("min"), Graphon("product")])
def test_deterministic_types_recover_closed_form(G):
    spec = gspec(det_family(), G, m=10, rho=0.8)
    sol = solve_graphon_bsde_no_common(spec)
    for k, p in enumerate(sol.types):
        th = p.mu.value[0] / p.sigma.value[0, 0]
        target = prop_graphon_strategy([th], p.gamma)
        for g in sol.sweeps[k].g:
            assert np.max(np.abs(g - target)) <= 1e-14


def test_box_constrained_deterministic_ode():
    fam = det_family(0.5, 0.5, 0.2, 0.3, 1.0, 1.0, constraint=Box([0.0], [0.35]))
    spec = gspec(fam, m=4, rho=0.4, steps=4, horizon=2.0)
    sol = solve_graphon_bsde_no_common(spec)
    gam = spec.gammas
    th = np.array([p.mu.value[0] for p in sol.types])
    raw = th / (1 - gam)
    g = np.clip(raw, 0.0, 0.35)
    W = spec.graphon(sol.u[:, None], sol.u[None, :]) / 4
    A1, A2 = W @ (th * g), W @ (0.5 * g * g)
    f = gam / (2 * (1 - gam)) * th**2 - 0.5 * gam * (1 - gam) * (raw - g) ** 2 - spec.rho * gam * (A1 - A2)
    np.testing.assert_allclose(sol.Y0, 2.0 * f, atol=1e-13)


def test_state_dependent_self_consistency():
    spec = gspec(walk_family(), m=16, rho=0.3, steps=10)
    sol = solve_graphon_bsde_no_common(spec)
    assert self_consistency_residual(sol) <= 1e-10
    assert sol.contraction_rate < 1


def test_outer_picard_trace_reaches_tolerance():
    sol = solve_graphon_bsde_no_common(gspec(walk_family(), m=8, rho=0.5))
    assert sol.trace[-1] <= 1e-10


def test_evaluate_type_on_grid_reproduces_solution():
    sol = solve_graphon_bsde_no_common(gspec(walk_family(), m=8, rho=0.5))
    for k in (0, 5):
        ts = evaluate_type(sol, sol.u[k], sol.types[k])
        assert ts.Y0 == pytest.approx(sol.Y0[k], abs=1e-14)
        assert ts.value == pytest.approx(sol.values[k], abs=1e-14)


def test_exact_lln_against_sampled_types():
    """Aggregate over 64 midpoint types vs. a 10^4-type Monte Carlo population."""
    fam = det_family()
    spec = gspec(fam, m=64, rho=0.5, steps=4)
    sol = solve_graphon_bsde_no_common(spec)
    rng = np.random.default_rng(3)
    v = rng.uniform(size=10_000)
    types = [fam.at(x) for x in v]
    th = np.array([p.mu.value[0] / p.sigma.value[0, 0] for p in types])
    g = th / (1 - np.array([p.gamma for p in types]))
    for k in (4, 19, 50):
        mc = spec.graphon(sol.u[k], v) * (th * g - 0.5 * g * g)
        est = sol.aggregate.combined(0)[k, 0]
        assert est == pytest.approx(float(np.mean(mc)), abs=4 * mc.std() / np.sqrt(v.size))


def test_graphon_solver_requires_graphon_mode():
    spec = GameSpec("finite", (agent(), agent()), rho=0.1, horizon=1.0, steps=4, lam=[[0, 1], [1, 0]])
    with pytest.raises(SpecError):
        solve_graphon(spec)


# -- common noise ------------------------------------------------------------


def _common_step_inputs(spec, t, seed=0):
    from relperf.graphon_solver import common_lattice

    lat = common_lattice(spec)
    rng = np.random.default_rng(seed)
    Zs = [rng.normal(scale=0.3, size=lat.size(t)) for _ in range(spec.m)]
    Z = [rng.normal(scale=0.3, size=(lat.size(t), spec.d)) for _ in range(spec.m)]
    return Zs, Z


def test_gmap_rho_zero_is_identity():
    spec = gspec(det_family(sstar=[0.2]), m=4, rho=0.0, steps=4, common=True)
    Zs, Z = _common_step_inputs(spec, 2)
    res = g_fixed_point(spec, 2, Zs, Z)
    assert len(res.trace) == 1 and res.trace[0] == 0.0
    for a, b in zip(res.Zstar, Zs):
        np.testing.assert_array_equal(a, b)


def test_gmap_zero_loading_is_identity():
    spec = gspec(det_family(sstar=[0.0]), m=4, rho=0.5, steps=4, common=True)
    Zs, Z = _common_step_inputs(spec, 3)
    res = g_fixed_point(spec, 3, Zs, Z)
    for a, b in zip(res.Zstar, Zs):
        np.testing.assert_allclose(a, b, atol=1e-15)


def test_gmap_contracts_within_bound():
    spec = gspec(det_family(0.2, 0.4, sstar=[0.3]), m=6, rho=0.6, steps=4, common=True)
    Zs, Z = _common_step_inputs(spec, 3, seed=2)
    res = g_fixed_point(spec, 3, Zs, Z)
    assert res.residual <= 1e-12
    assert res.rate <= gmap_bound(spec, spec.rho) + 1e-6


def test_gmap_refused_above_bound():
    spec = gspec(det_family(0.6, 0.6, sstar=[0.3]), m=4, rho=0.7, steps=4, common=True)
    Zs, Z = _common_step_inputs(spec, 1)
    with pytest.raises(GMapRefused):
        g_fixed_point(spec, 1, Zs, Z)
    with pytest.raises(GMapRefused):
        solve_graphon_bsde_common_noise(spec)


def test_common_noise_rho_zero_merton():
    fam = det_family(0.5, -1.0, sstar=[0.3])
    spec = gspec(fam, m=4, rho=0.0, steps=4, common=True)
    sol = solve_graphon_bsde_common_noise(spec)
    for k, p in enumerate(sol.types):
        sig, ss, mu = p.sigma.value[0, 0], p.sigma_star.value[0], p.mu.value[0]
        th = np.array([sig, ss]) * mu / (sig**2 + ss**2)
        Y0, V0 = merton_benchmark([th], p.gamma, p.x0, 1.0)
        assert sol.Y0[k] == pytest.approx(Y0, abs=1e-10)
        assert sol.values[k] == pytest.approx(V0, abs=1e-10)


@pytest.mark.parametrize("family", [walk_family(), det_family()])
def test_zero_loading_common_matches_no_common(family):
    a = solve_graphon_bsde_no_common(gspec(family, m=5, rho=0.4, steps=6))
    b = solve_graphon_bsde_common_noise(gspec(family, m=5, rho=0.4, steps=6, common=True))
    np.testing.assert_allclose(b.values, a.values, atol=1e-10)
    np.testing.assert_allclose(b.Y0, a.Y0 - 0.4 * a.spec.gammas * (a.weights @ np.log([p.x0 for p in a.types])), atol=1e-10)


def test_common_noise_state_dependent_runs():
    sa = AgentParams.make(0.3, 1.0, {"kind": "walk", "value": [0.1], "amp": [0.04], "factor": 0}, [[0.2]], sigma_star=[0.05])
    sb = AgentParams.make(0.1, 2.0, {"kind": "walk", "value": [0.15], "amp": [0.02], "factor": 0}, [[0.3]], sigma_star=[0.1])
    spec = gspec(ParamFamily(sa, sb), m=6, rho=0.5, steps=6, common=True)
    sol = solve_graphon_bsde_common_noise(spec)
    assert np.all(np.isfinite(sol.values))
    assert sol.contraction_rate <= gmap_bound(spec, spec.rho) + 1e-6
    lat = sol.lattice(0)
    assert isinstance(lat, Lattice) and lat.F == 2
    assert len(sol.aggregate.to_csv().splitlines()) == 1 + 2 * 6 * sum(lat.sub_index(t, (1,))[1] for t in range(6))
