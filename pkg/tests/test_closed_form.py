import hypothesis.strategies as st
import numpy as np
import pytest
from hypothesis import given

from relperf.closed_form import (
    merton_benchmark,
    prop_gap_bound,
    prop_graphon_strategy,
    prop_n_agent_strategy,
    constant_equilibrium,
)


def test_n_agent_strategy_examples():
    np.testing.assert_allclose(prop_n_agent_strategy(0.2, 0.5, 0.0, 0.7), 0.4)
    np.testing.assert_allclose(prop_n_agent_strategy(0.3, 0.5, 0.5, 0.5), 0.48)
    np.testing.assert_allclose(prop_n_agent_strategy(0.1, -1.0, 0.2, 1.0), 0.1 / 1.8)


def test_graphon_strategy_examples():
    np.testing.assert_allclose(prop_graphon_strategy(0.2, 0.5), 0.4)
    np.testing.assert_allclose(prop_graphon_strategy(0.1, -1.0), 0.05)
    np.testing.assert_allclose(prop_graphon_strategy([0.0, 0.0], -3.0), [0.0, 0.0])


def test_gap_bound_examples():
    assert prop_gap_bound(0.3, 0.5, 0.5, 0.0, 0.5) == 0.0
    assert prop_gap_bound(0.3, 0.5, 0.5, 0.5, 0.0) == 0.0
    # here the bound is attained: |0.48 - 0.6| = 0.12
    assert prop_gap_bound(0.3, 0.5, 0.5, 0.5, 0.5) == pytest.approx(0.12, abs=1e-15)


def test_gap_bound_dominates_over_random_draws():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        d = rng.integers(1, 4)
        theta = rng.normal(size=d)
        gammas = rng.uniform(-3, 0.95, size=5)
        gt = float(np.max(np.abs(gammas)))
        g = gammas[0]
        rho, lam = rng.uniform(0, 1), rng.uniform(0, 1)
        gap = np.linalg.norm(prop_n_agent_strategy(theta, g, rho, lam) - prop_graphon_strategy(theta, g))
        assert gap <= prop_gap_bound(theta, g, gt, rho, lam) * (1 + 1e-12) + 1e-15


@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_gap_bound_vanishes_with_self_weight(rho, theta):
    assert prop_gap_bound(theta, 0.5, 0.5, rho, 0.0) == 0.0


def test_merton_examples():
    Y0, V0 = merton_benchmark([0.2], 0.5, 1.0, 1.0)
    assert Y0 == pytest.approx(0.02, abs=1e-15)
    assert V0 == pytest.approx(2.0 * np.exp(0.02), abs=1e-15)
    assert V0 == pytest.approx(2.040402, abs=1e-6)
    Y0, V0 = merton_benchmark([0.0], 0.5, 4.0, 1.0)
    assert (Y0, V0) == (0.0, pytest.approx(4.0))
    Y0, V0 = merton_benchmark([0.2], -1.0, 2.0, 2.0)
    assert Y0 == pytest.approx(-0.02, abs=1e-15)
    assert V0 == pytest.approx(-0.5 * np.exp(-0.02), abs=1e-15)


def test_merton_piecewise():
    Y0, _ = merton_benchmark([0.3, 0.1], 0.5, 1.0, 1.0)
    assert Y0 == pytest.approx(0.5 * (0.09 + 0.01) / 2 * 0.5 / 0.5, abs=1e-15)
    Y0, _ = merton_benchmark([[0.3, 0.4]], 0.5, 1.0, 2.0)
    assert Y0 == pytest.approx(0.5 * 0.25 * 2.0, abs=1e-15)


def test_vectorised_equilibrium():
    eq = constant_equilibrium([[0.2], [0.1]], [0.5, -1.0], 0.5, [0.5, 1.0])
    np.testing.assert_allclose(eq.n_agent_sigma_pi[:, 0], [0.2 / 0.625, 0.1 / 1.5])
    np.testing.assert_allclose(eq.graphon_sigma_pi[:, 0], [0.4, 0.05])
    assert np.all(np.abs(eq.n_agent_sigma_pi - eq.graphon_sigma_pi)[:, 0] <= eq.gap_bound + 1e-15)


def test_zero_denominator_rejected():
    with pytest.raises(ZeroDivisionError):
        prop_graphon_strategy(0.1, 1.0)
