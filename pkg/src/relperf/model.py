"""Game specifications, coefficient fields, graphons and graphon distances."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .lattice import Lattice, LatticeCapError, get_lattice
from .projection import ConstraintSet, FullSpace, InvalidSet, constraint_from_json

ELLIPTIC_EPS = 1e-8
COND_CAP = 1e10


class SpecError(ValueError):
    """Invalid game specification."""


class EllipticityError(SpecError):
    """Sigma Sigma^T is singular, below the ellipticity floor, or ill-conditioned."""


class UnsupportedKind(ValueError):
    """Operation not defined for this kind of object."""


class NonConvergence(RuntimeError):
    """A fixed-point iteration failed to contract within its budget."""

    def __init__(self, message: str, rate: float | None = None, iteration: int | None = None):
        super().__init__(message)
        self.rate = rate
        self.iteration = iteration


# ---------------------------------------------------------------------------
# coefficient fields

FIELD_KINDS = ("constant", "time", "last_sign", "walk")


@dataclass(frozen=True, eq=False)
class Field:
    """Coefficient that may depend on time and on the agent's own node.

    * ``constant``: ``value``
    * ``time``: ``value[p]`` on the p-th of ``len(value)`` equal time pieces
    * ``last_sign``: ``value + amp * sign(last increment of own factor)``
    * ``walk``: ``value + amp * W_t`` of the own factor
    """

    kind: str
    value: np.ndarray
    amp: np.ndarray | float = 0.0
    factor: int = 0

    def __post_init__(self):
        if self.kind not in FIELD_KINDS:
            raise SpecError(f"unknown field kind {self.kind!r}")
        object.__setattr__(self, "value", np.asarray(self.value, dtype=float))
        object.__setattr__(self, "amp", np.asarray(self.amp, dtype=float))

    @classmethod
    def const(cls, value) -> "Field":
        return cls("constant", value)

    @property
    def shape(self) -> tuple:
        return self.value.shape[1:] if self.kind == "time" else self.value.shape

    @property
    def deterministic(self) -> bool:
        return self.kind in ("constant", "time")

    @property
    def recombinable(self) -> bool:
        return self.kind != "last_sign"

    def piece(self, t: int, N: int) -> int:
        P = self.value.shape[0]
        return min(P - 1, (t * P) // N)

    def evaluate(self, t: int, lat: Lattice) -> np.ndarray:
        S = lat.size(t)
        if self.kind == "constant":
            return np.broadcast_to(self.value, (S,) + self.value.shape).copy()
        if self.kind == "time":
            v = self.value[self.piece(t, lat.N)]
            return np.broadcast_to(v, (S,) + v.shape).copy()
        drive = lat.last(t) if self.kind == "last_sign" else lat.walk(t)
        x = drive[:, self.factor].reshape((S,) + (1,) * self.value.ndim)
        return self.value[None] + self.amp[None] * x

    def scaled(self, other: "Field", w: float) -> "Field":
        """Linear interpolation ``(1 - w) * self + w * other`` (same kind)."""
        if other.kind != self.kind or other.factor != self.factor:
            raise SpecError("can only interpolate fields of the same kind")
        return Field(
            self.kind,
            (1 - w) * self.value + w * other.value,
            (1 - w) * self.amp + w * other.amp,
            self.factor,
        )

    def to_json(self):
        if self.kind == "constant":
            return self.value.tolist()
        out = {"kind": self.kind, "value": self.value.tolist()}
        if self.kind in ("last_sign", "walk"):
            out["amp"] = self.amp.tolist()
            out["factor"] = self.factor
        return out


def as_field(obj) -> Field:
    if isinstance(obj, Field):
        return obj
    if isinstance(obj, dict):
        return Field(obj["kind"], obj["value"], obj.get("amp", 0.0), int(obj.get("factor", 0)))
    return Field.const(obj)


# ---------------------------------------------------------------------------
# agents and types


@dataclass(frozen=True, eq=False)
class AgentParams:
    gamma: float
    x0: float
    mu: Field
    sigma: Field
    sigma_star: Field
    constraint: ConstraintSet = field(default_factory=FullSpace)

    @classmethod
    def make(cls, gamma, x0, mu, sigma, sigma_star=None, constraint=None) -> "AgentParams":
        """Build from plain numbers/arrays or fields; scalars mean d = 1."""
        mu = as_field(np.atleast_1d(mu) if not isinstance(mu, (Field, dict)) else mu)
        d = mu.shape[0]
        if isinstance(sigma, (Field, dict)):
            sigma = as_field(sigma)
        else:
            sigma = Field.const(np.atleast_2d(sigma).reshape(d, d))
        if sigma_star is None:
            sigma_star = Field.const(np.zeros(d))
        elif not isinstance(sigma_star, (Field, dict)):
            sigma_star = Field.const(np.atleast_1d(np.asarray(sigma_star, float)).reshape(d))
        return cls(float(gamma), float(x0), mu, sigma, as_field(sigma_star), constraint or FullSpace())

    @property
    def d(self) -> int:
        return self.mu.shape[0]

    @property
    def fields(self) -> tuple[Field, Field, Field]:
        return self.mu, self.sigma, self.sigma_star

    @property
    def deterministic(self) -> bool:
        return all(f.deterministic for f in self.fields)

    @property
    def recombinable(self) -> bool:
        return all(f.recombinable for f in self.fields)

    @property
    def has_common_loading(self) -> bool:
        f = self.sigma_star
        return bool(np.any(f.value != 0) or np.any(f.amp != 0))

    def to_json(self) -> dict:
        return {
            "gamma": self.gamma,
            "x0": self.x0,
            "mu": self.mu.to_json(),
            "sigma": self.sigma.to_json(),
            "sigma_star": self.sigma_star.to_json(),
            "constraint": self.constraint.to_json(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "AgentParams":
        mu = as_field(obj["mu"])
        d = mu.shape[0]
        sigma = obj["sigma"]
        if not isinstance(sigma, dict):
            sigma = np.asarray(sigma, float).reshape(d, d)
        sstar = obj.get("sigma_star", [0.0] * d)
        return cls(
            float(obj["gamma"]),
            float(obj["x0"]),
            mu,
            as_field(sigma),
            as_field(sstar),
            constraint_from_json(obj.get("constraint")),
        )


@dataclass(frozen=True, eq=False)
class ParamFamily:
    """Type parameters interpolated linearly in ``u`` between two endpoints."""

    at0: AgentParams
    at1: AgentParams

    def at(self, u: float) -> AgentParams:
        a, b = self.at0, self.at1
        return AgentParams(
            (1 - u) * a.gamma + u * b.gamma,
            (1 - u) * a.x0 + u * b.x0,
            a.mu.scaled(b.mu, u),
            a.sigma.scaled(b.sigma, u),
            a.sigma_star.scaled(b.sigma_star, u),
            a.constraint,
        )

    def to_json(self) -> dict:
        return {"at0": self.at0.to_json(), "at1": self.at1.to_json()}

    @classmethod
    def from_json(cls, obj: dict) -> "ParamFamily":
        return cls(AgentParams.from_json(obj["at0"]), AgentParams.from_json(obj["at1"]))


# ---------------------------------------------------------------------------
# graphons

GRAPHON_KINDS = ("constant", "uniform_attachment", "min", "product", "step")


@dataclass(frozen=True, eq=False)
class Graphon:
    kind: str
    p: float = 0.5
    matrix: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in GRAPHON_KINDS:
            raise SpecError(f"unknown graphon kind {self.kind!r}")
        if self.kind == "constant" and not 0 <= self.p <= 1:
            raise SpecError("constant graphon needs p in [0, 1]")
        if self.kind == "step":
            m = np.asarray(self.matrix, dtype=float)
            _check_weight_matrix(m, allow_diag=True)
            object.__setattr__(self, "matrix", m)

    @property
    def analytic(self) -> bool:
        return self.kind != "step"

    def __call__(self, u, v) -> np.ndarray:
        u, v = np.broadcast_arrays(np.asarray(u, float), np.asarray(v, float))
        if self.kind == "constant":
            return np.full(u.shape, self.p)
        if self.kind == "uniform_attachment":
            return 1.0 - np.maximum(u, v)
        if self.kind == "min":
            return np.minimum(u, v)
        if self.kind == "product":
            return u * v
        m = self.matrix.shape[0]
        i = np.clip(np.ceil(u * m).astype(int) - 1, 0, m - 1)
        j = np.clip(np.ceil(v * m).astype(int) - 1, 0, m - 1)
        return self.matrix[i, j]

    def step_sample(self, n: int) -> "Graphon":
        """``G_n(u, v) = G(ceil(n u)/n, ceil(n v)/n)``."""
        grid = np.arange(1, n + 1) / n
        return Graphon("step", matrix=self(grid[:, None], grid[None, :]))

    def to_json(self) -> dict:
        out = {"kind": self.kind}
        if self.kind == "constant":
            out["p"] = self.p
        if self.kind == "step":
            out["matrix"] = self.matrix.tolist()
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "Graphon":
        return cls(obj["kind"], float(obj.get("p", 0.5)), obj.get("matrix"))


def _check_weight_matrix(lam: np.ndarray, allow_diag: bool) -> None:
    if lam.ndim != 2 or lam.shape[0] != lam.shape[1]:
        raise SpecError("sensitivity matrix must be square")
    if not np.allclose(lam, lam.T, atol=0, rtol=0):
        raise SpecError("sensitivity matrix must be symmetric")
    if np.any(lam < 0) or np.any(lam > 1) or np.any(np.isnan(lam)):
        raise SpecError("sensitivity entries must lie in [0, 1]")
    if not allow_diag and np.any(np.diag(lam) != 0):
        raise SpecError("nonzero diagonal requires allow_self_weight")


def step_graphon_from_matrix(lam) -> Graphon:
    """Step graphon with ``G_n(i/n, j/n) = lam[i-1, j-1]``, constant on cells."""
    return Graphon("step", matrix=np.asarray(lam, dtype=float))


def type_locations(m: int) -> np.ndarray:
    """Midpoints ``u_k = (2k - 1) / (2m)``."""
    return (2 * np.arange(1, m + 1) - 1) / (2 * m)


def graphon_l2_distance(G: Graphon, H: Graphon, quad_points: int = 1024) -> float:
    """Midpoint tensor quadrature of ``(int int |G - H|^2)^{1/2}``."""
    if quad_points < 1:
        raise ValueError("quad_points must be >= 1")
    x = type_locations(quad_points)
    total = 0.0
    for rows in np.array_split(np.arange(quad_points), max(1, quad_points // 512)):
        diff = G(x[rows, None], x[None, :]) - H(x[rows, None], x[None, :])
        total += float(np.sum(diff * diff))
    return float(np.sqrt(total / quad_points**2))


def condition_2_13_moduli(G: Graphon, n: int, quad_points: int = 4096, cell_points: int = 64) -> tuple[float, float]:
    """Return ``(n ||G_n - G||_2^2, max_i max_u int |G(i/n, v) - G(u, v)|^2 dv)``.

    The supremum over ``u`` in the cell ``((i-1)/n, i/n]`` is taken over
    ``cell_points + 1`` equispaced points including the left endpoint, which
    is the limit value for continuous ``G``.
    """
    if not G.analytic:
        raise UnsupportedKind("continuity modulus needs an analytic graphon")
    q = max(quad_points // n, 1) * n
    scaled = n * graphon_l2_distance(G, G.step_sample(n), q) ** 2
    v = type_locations(quad_points)
    best = 0.0
    for i in range(1, n + 1):
        u = (i - 1) / n + np.arange(cell_points + 1) / (cell_points * n)
        diff = G(i / n, v)[None, :] - G(u[:, None], v[None, :])
        best = max(best, float(np.max(np.mean(diff * diff, axis=1))))
    return scaled, best


# ---------------------------------------------------------------------------
# game specification


@dataclass(frozen=True, eq=False)
class GameSpec:
    """Finite-agent game (``mode='finite'``) or ``m``-type graphon game."""

    mode: str
    agents: tuple[AgentParams, ...]
    rho: float
    horizon: float
    steps: int
    lam: np.ndarray | None = None
    graphon: Graphon | None = None
    family: ParamFamily | None = None
    common_noise: bool = False
    allow_self_weight: bool = False
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "agents", tuple(self.agents))
        if self.lam is not None:
            object.__setattr__(self, "lam", np.asarray(self.lam, dtype=float))

    @classmethod
    def graphon_game(cls, family: ParamFamily, G: Graphon, m: int, **kw) -> "GameSpec":
        types = tuple(family.at(u) for u in type_locations(m))
        return cls("graphon", types, graphon=G, family=family, **kw)

    def with_overrides(self, **kw) -> "GameSpec":
        return replace(self, **kw)

    @property
    def n(self) -> int:
        return len(self.agents)

    @property
    def m(self) -> int:
        return len(self.agents)

    @property
    def d(self) -> int:
        return self.agents[0].d

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @property
    def lam_n(self) -> np.ndarray:
        """``lambda_ij / (n - 1)``."""
        return self.lam / max(self.n - 1, 1)

    @property
    def gammas(self) -> np.ndarray:
        return np.array([a.gamma for a in self.agents])

    @property
    def gamma_bar(self) -> float:
        return float(np.max(self.gammas))

    @property
    def gamma_tilde(self) -> float:
        return float(np.max(np.abs(self.gammas)))

    def params_at(self, u: float) -> AgentParams:
        """Type parameters at an arbitrary location (family or cell lookup)."""
        if self.family is not None:
            return self.family.at(u)
        k = int(np.clip(np.ceil(u * self.m) - 1, 0, self.m - 1))
        return self.agents[k]

    def to_json(self) -> dict:
        out = {
            "mode": self.mode,
            "rho": self.rho,
            "horizon": self.horizon,
            "steps": self.steps,
            "common_noise": self.common_noise,
            "allow_self_weight": self.allow_self_weight,
            "seed": self.seed,
            "agents": [a.to_json() for a in self.agents],
        }
        if self.lam is not None:
            out["lambda"] = self.lam.tolist()
        if self.graphon is not None:
            out["graphon"] = self.graphon.to_json()
        if self.family is not None:
            out["family"] = self.family.to_json()
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "GameSpec":
        mode = obj["mode"]
        family = ParamFamily.from_json(obj["family"]) if "family" in obj else None
        graphon = Graphon.from_json(obj["graphon"]) if "graphon" in obj else None
        kw = dict(
            rho=float(obj["rho"]),
            horizon=float(obj["horizon"]),
            steps=int(obj["steps"]),
            common_noise=bool(obj.get("common_noise", False)),
            allow_self_weight=bool(obj.get("allow_self_weight", False)),
            seed=int(obj.get("seed", 0)),
        )
        if mode == "graphon" and "agents" not in obj:
            if family is None or graphon is None:
                raise SpecError("graphon mode needs agents or a family plus a graphon")
            return cls.graphon_game(family, graphon, int(obj.get("m", 16)), **kw)
        agents = tuple(AgentParams.from_json(a) for a in obj["agents"])
        lam = np.asarray(obj["lambda"], float) if "lambda" in obj else None
        return cls(mode, agents, lam=lam, graphon=graphon, family=family, **kw)


# ---------------------------------------------------------------------------
# market price of risk


def compute_theta_batch(sigma, sigma_star, mu, eps: float = ELLIPTIC_EPS, cap: float = COND_CAP) -> np.ndarray:
    """``theta = Sigma^T (Sigma Sigma^T)^{-1} mu`` for stacks of nodes.

    ``sigma``: ``(S, d, d)``, ``sigma_star``/``mu``: ``(S, d)``; returns ``(S, d + 1)``.
    """
    sigma = np.asarray(sigma, float)
    sstar = np.asarray(sigma_star, float)
    mu = np.asarray(mu, float)
    Sigma = np.concatenate([sigma, sstar[..., None]], axis=-1)
    M = Sigma @ np.swapaxes(Sigma, -1, -2)
    ev = np.linalg.eigvalsh(M)
    lo, hi = ev[..., 0], ev[..., -1]
    bad = (lo < eps) | ~np.isfinite(lo) | (hi > cap * np.maximum(lo, 1e-300))
    if np.any(bad):
        node = int(np.flatnonzero(np.atleast_1d(bad))[0])
        raise EllipticityError(
            f"Sigma Sigma^T not uniformly elliptic at node {node}: eigenvalues in [{np.atleast_1d(lo)[node]:.3g}, {np.atleast_1d(hi)[node]:.3g}]"
        )
    y = np.linalg.solve(M, mu[..., None])
    return (np.swapaxes(Sigma, -1, -2) @ y)[..., 0]


def compute_theta(sigma, sigma_star, mu, eps: float = ELLIPTIC_EPS, cap: float = COND_CAP) -> np.ndarray:
    """Single-node version of :func:`compute_theta_batch`."""
    mu = np.atleast_1d(np.asarray(mu, float))
    d = mu.size
    sigma = np.asarray(sigma, float).reshape(d, d)
    sstar = np.atleast_1d(np.asarray(sigma_star, float)).reshape(d)
    return compute_theta_batch(sigma[None], sstar[None], mu[None], eps, cap)[0]


# ---------------------------------------------------------------------------
# coefficients on a lattice


class AgentCoefficients:
    """Per-step node arrays of ``Sigma^T`` and ``theta`` for one agent/type.

    Without common noise the image space is ``R^d`` and ``SigmaT = sigma^T``;
    with common noise it is ``R^{d+1}`` and ``SigmaT = [sigma, sigma_star]^T``.
    """

    def __init__(self, params: AgentParams, lattice: Lattice, common_noise: bool):
        self.params = params
        self.lattice = lattice
        self.common_noise = common_noise
        self._cache: dict[int, tuple] = {}

    def _at(self, t: int):
        if t not in self._cache:
            p, lat = self.params, self.lattice
            mu, sig, sst = (f.evaluate(t, lat) for f in p.fields)
            try:
                theta = compute_theta_batch(sig, sst, mu)
            except EllipticityError as exc:
                raise EllipticityError(f"step {t}: {exc}") from None
            sigT = np.swapaxes(sig, -1, -2)
            if self.common_noise:
                SigmaT = np.concatenate([sigT, sst[:, None, :]], axis=1)
                timg = theta
            else:
                SigmaT = sigT
                timg = theta[:, : p.d]
            self._cache[t] = (np.ascontiguousarray(SigmaT), np.ascontiguousarray(timg), mu)
        return self._cache[t]

    def SigmaT(self, t: int) -> np.ndarray:
        return self._at(t)[0]

    def theta_img(self, t: int) -> np.ndarray:
        return self._at(t)[1]

    def mu(self, t: int) -> np.ndarray:
        return self._at(t)[2]


def agent_lattice(spec: GameSpec, params: AgentParams | None = None, recombining: bool | None = None) -> Lattice:
    """Own lattice of an agent: ``d`` idiosyncratic factors plus the common one."""
    F = spec.d + (1 if spec.common_noise else 0)
    if recombining is None:
        pool = spec.agents if params is None else (params,)
        recombining = all(a.recombinable for a in pool)
    return get_lattice(spec.steps, spec.horizon, F, recombining)


def agent_coefficients(spec: GameSpec, params: AgentParams, lattice: Lattice | None = None) -> AgentCoefficients:
    lat = lattice or agent_lattice(spec, params)
    return AgentCoefficients(params, lat, spec.common_noise)


# ---------------------------------------------------------------------------
# validation


@dataclass
class ValidationReport:
    violations: list[str]

    @property
    def valid(self) -> bool:
        return not self.violations

    def __str__(self) -> str:
        return "valid" if self.valid else "; ".join(self.violations)


def validate_spec(spec: GameSpec) -> ValidationReport:
    """Collect every violated structural assumption (never raises)."""
    out: list[str] = []
    if spec.mode not in ("finite", "graphon"):
        out.append(f"mode: unknown mode {spec.mode!r}")
    if not spec.agents:
        out.append("agents: empty")
        return ValidationReport(out)
    if not 0 <= spec.rho <= 1:
        out.append(f"rho: {spec.rho} outside [0, 1]")
    if not spec.horizon > 0:
        out.append("horizon: must be > 0")
    if spec.steps < 1:
        out.append("steps: must be >= 1")
    d = spec.d
    for i, a in enumerate(spec.agents):
        loc = f"agents[{i}]"
        if a.gamma == 0:
            out.append(f"{loc}.gamma: gamma excluded value 0")
        elif not a.gamma < 1:
            out.append(f"{loc}.gamma: must be < 1")
        if not (a.x0 > 0 and np.isfinite(np.log(a.x0))):
            out.append(f"{loc}.x0: must be > 0")
        if a.d != d:
            out.append(f"{loc}: dimension {a.d} differs from d={d}")
            continue
        if a.sigma.shape != (d, d) or a.sigma_star.shape != (d,):
            out.append(f"{loc}: coefficient shapes do not match d={d}")
            continue
        if not spec.common_noise and a.has_common_loading:
            out.append(f"{loc}.sigma_star: nonzero loading but common_noise is off")
        if a.constraint.dim is not None and a.constraint.dim != d:
            out.append(f"{loc}.constraint: dimension {a.constraint.dim} differs from d={d}")
        if spec.steps >= 1 and spec.horizon > 0:
            try:
                coeffs = agent_coefficients(spec, a)
                for t in range(spec.steps):
                    coeffs.SigmaT(t)
            except EllipticityError as exc:
                out.append(f"{loc}: ellipticity violation ({exc})")
            except (LatticeCapError, ValueError) as exc:
                out.append(f"{loc}: {exc}")
    if spec.mode == "finite":
        if spec.lam is None:
            out.append("lambda: missing for finite mode")
        else:
            try:
                if spec.lam.shape != (spec.n, spec.n):
                    raise SpecError(f"shape {spec.lam.shape} does not match n={spec.n}")
                _check_weight_matrix(spec.lam, spec.allow_self_weight)
            except SpecError as exc:
                out.append(f"lambda: {exc}")
    elif spec.mode == "graphon" and spec.graphon is None:
        out.append("graphon: missing for graphon mode")
    return ValidationReport(out)


def require_valid(spec: GameSpec) -> None:
    rep = validate_spec(spec)
    if not rep.valid:
        raise SpecError(str(rep))


__all__ = [
    "AgentCoefficients",
    "AgentParams",
    "COND_CAP",
    "ELLIPTIC_EPS",
    "EllipticityError",
    "Field",
    "GameSpec",
    "Graphon",
    "InvalidSet",
    "NonConvergence",
    "ParamFamily",
    "SpecError",
    "UnsupportedKind",
    "ValidationReport",
    "agent_coefficients",
    "agent_lattice",
    "compute_theta",
    "compute_theta_batch",
    "condition_2_13_moduli",
    "graphon_l2_distance",
    "require_valid",
    "step_graphon_from_matrix",
    "type_locations",
    "validate_spec",
]
