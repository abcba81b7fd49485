import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from relperf.model import AgentParams, GameSpec, Graphon, ParamFamily
from relperf.projection import Box

settings.register_profile(
    "default", deadline=None, max_examples=50, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def agent(gamma=0.5, theta=0.2, sigma=1.0, x0=1.0, constraint=None, mu=None, sigma_star=None):
    """One-dimensional agent with ``mu = sigma * theta`` unless ``mu`` is given."""
    if mu is None:
        mu = [sigma * theta]
    return AgentParams.make(gamma, x0, mu, [[sigma]], sigma_star=sigma_star, constraint=constraint)


def finite_spec(agents, lam=None, rho=0.0, steps=8, horizon=1.0, self_weight=False, seed=0):
    n = len(agents)
    if lam is None:
        lam = np.ones((n, n))
        if not self_weight:
            np.fill_diagonal(lam, 0.0)
    return GameSpec(
        "finite",
        tuple(agents),
        rho=rho,
        horizon=horizon,
        steps=steps,
        lam=np.asarray(lam, float),
        allow_self_weight=self_weight,
        seed=seed,
    )


def prop_spec(n, rho=0.5, steps=16, gammas=None, thetas=None, sigmas=None):
    """Deterministic coefficients with the self-weight variant and all-ones weights."""
    gammas = gammas if gammas is not None else np.linspace(-1.0, 0.6, n)
    thetas = thetas if thetas is not None else np.linspace(0.1, 0.3, n)
    sigmas = sigmas if sigmas is not None else np.linspace(0.2, 0.4, n)
    agents = [agent(g, th, s, x0=1.0 + 0.1 * i) for i, (g, th, s) in enumerate(zip(gammas, thetas, sigmas))]
    return finite_spec(agents, np.ones((n, n)), rho=rho, steps=steps, self_weight=True)


def merton_spec(rho=0.0, steps=16):
    """Two agents with piecewise-constant market price of risk."""
    a0 = AgentParams.make(0.5, 1.0, {"kind": "time", "value": [[0.6], [0.4]]}, [[2.0]])
    a1 = agent(-2.0, 0.4, 0.25, x0=1.5)
    return finite_spec([a0, a1], rho=rho, steps=steps)


def last_sign_agent(gamma=0.5, base=0.2, amp=0.1, sigma=1.0, x0=1.0, constraint=None):
    """``theta = base + amp * sign(last own increment)``."""
    mu = {"kind": "last_sign", "value": [sigma * base], "amp": [sigma * amp], "factor": 0}
    return AgentParams.make(gamma, x0, mu, [[sigma]], constraint=constraint)


def walk_agent(gamma=0.3, base=0.1, amp=0.05, sigma=0.2, x0=1.0, constraint=None):
    mu = {"kind": "walk", "value": [base], "amp": [amp], "factor": 0}
    return AgentParams.make(gamma, x0, mu, [[sigma]], constraint=constraint)


def state_dependent_specs(steps=16):
    """Two state-dependent instances: walk/last-sign mix and a constrained gamma < 0 pair."""
    s1 = finite_spec([walk_agent(0.3), last_sign_agent(-1.0, 0.15, 0.03, 0.3, x0=2.0, constraint=Box([0.0], [1.0]))], rho=0.1, steps=steps)
    s2 = finite_spec(
        [last_sign_agent(-2.0, 0.2, 0.1, 0.5), walk_agent(-0.5, 0.12, -0.04, 0.3, x0=1.5), walk_agent(0.2, 0.08, 0.03, 0.25)],
        lam=[[0, 1, 0.5], [1, 0, 0.25], [0.5, 0.25, 0]],
        rho=0.2,
        steps=steps,
    )
    return s1, s2


def walk_family(gamma0=0.3, gamma1=0.5):
    return ParamFamily(walk_agent(gamma0, 0.1, 0.04, 0.2, 1.0), walk_agent(gamma1, 0.15, 0.02, 0.3, 2.0))


def constant_family(gamma=0.5, theta=0.2, sigma=1.0, sigma_star=None):
    a = agent(gamma, theta, sigma, sigma_star=sigma_star)
    return ParamFamily(a, a)


@pytest.fixture
def ua():
    return Graphon("uniform_attachment")
