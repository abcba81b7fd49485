"""Closed convex constraint sets and projections onto their linear images.

Every set works on batches: ``x`` may have shape ``(..., d)`` and the
projection is applied along the last axis.  ``project_transformed``
projects image-space vectors onto ``SigmaT @ A`` for the combinations where
an exact analytic formula exists and raises :class:`UnsupportedProjection`
for everything else.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MEMBERSHIP_TOL = 1e-12


class UnsupportedProjection(ValueError):
    """Raised when no exact projection onto ``SigmaT @ A`` is implemented."""


class InvalidSet(ValueError):
    """Raised for empty or malformed constraint sets."""


def _vec(x) -> np.ndarray:
    return np.atleast_1d(np.asarray(x, dtype=float))


class ConstraintSet:
    """Base class: a nonempty closed convex subset of R^d."""

    kind = "abstract"
    dim: int | None = None

    def project(self, x) -> np.ndarray:
        raise NotImplementedError

    def contains(self, x, tol: float = MEMBERSHIP_TOL) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.linalg.norm(self.project(x) - x, axis=-1) <= tol

    def interval(self) -> tuple[float, float]:
        """Return ``(lo, hi)`` for the one-dimensional version of the set."""
        raise NotImplementedError

    def bounding_box(self, d: int) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def to_json(self) -> dict:
        raise NotImplementedError

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.to_json()})"


class FullSpace(ConstraintSet):
    kind = "full"

    def project(self, x):
        return np.array(x, dtype=float)

    def interval(self):
        return -np.inf, np.inf

    def bounding_box(self, d):
        return np.full(d, -np.inf), np.full(d, np.inf)

    def to_json(self):
        return {"type": "full"}


class NonNegativeOrthant(ConstraintSet):
    kind = "nonneg"

    def project(self, x):
        return np.maximum(np.asarray(x, dtype=float), 0.0)

    def interval(self):
        return 0.0, np.inf

    def bounding_box(self, d):
        return np.zeros(d), np.full(d, np.inf)

    def to_json(self):
        return {"type": "nonneg"}


@dataclass(frozen=True, eq=False, repr=False)
class Box(ConstraintSet):
    lower: np.ndarray
    upper: np.ndarray
    kind = "box"

    def __post_init__(self):
        lo, hi = _vec(self.lower), _vec(self.upper)
        if lo.shape != hi.shape:
            raise InvalidSet("box bounds must have the same shape")
        if np.any(np.isnan(lo)) or np.any(np.isnan(hi)) or np.any(lo > hi):
            raise InvalidSet("box requires lower <= upper componentwise")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self):
        return self.lower.size

    def project(self, x):
        return np.clip(np.asarray(x, dtype=float), self.lower, self.upper)

    def interval(self):
        return float(self.lower[0]), float(self.upper[0])

    def bounding_box(self, d):
        return self.lower.copy(), self.upper.copy()

    def to_json(self):
        return {"type": "box", "lower": self.lower.tolist(), "upper": self.upper.tolist()}


@dataclass(frozen=True, eq=False, repr=False)
class Ball(ConstraintSet):
    center: np.ndarray
    radius: float
    kind = "ball"

    def __post_init__(self):
        object.__setattr__(self, "center", _vec(self.center))
        if not self.radius >= 0:
            raise InvalidSet("ball radius must be >= 0")
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def dim(self):
        return self.center.size

    def project(self, x):
        x = np.asarray(x, dtype=float)
        diff = x - self.center
        norm = np.linalg.norm(diff, axis=-1, keepdims=True)
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(norm > self.radius, self.radius / norm, 1.0)
        return self.center + diff * scale

    def interval(self):
        c = float(self.center[0])
        return c - self.radius, c + self.radius

    def bounding_box(self, d):
        return self.center - self.radius, self.center + self.radius

    def to_json(self):
        return {"type": "ball", "center": self.center.tolist(), "radius": self.radius}


@dataclass(frozen=True, eq=False, repr=False)
class HalfSpace(ConstraintSet):
    """The set ``{a : normal . a <= offset}``."""

    normal: np.ndarray
    offset: float
    kind = "halfspace"

    def __post_init__(self):
        n = _vec(self.normal)
        if not np.linalg.norm(n) > 0:
            raise InvalidSet("half-space normal must be nonzero")
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "offset", float(self.offset))

    @property
    def dim(self):
        return self.normal.size

    def project(self, x):
        x = np.asarray(x, dtype=float)
        excess = np.maximum(x @ self.normal - self.offset, 0.0)
        return x - excess[..., None] * self.normal / (self.normal @ self.normal)

    def interval(self):
        n, b = float(self.normal[0]), self.offset
        return (-np.inf, b / n) if n > 0 else (b / n, np.inf)

    def bounding_box(self, d):
        if d == 1:
            lo, hi = self.interval()
            return np.array([lo]), np.array([hi])
        return np.full(d, -np.inf), np.full(d, np.inf)

    def to_json(self):
        return {"type": "halfspace", "normal": self.normal.tolist(), "offset": self.offset}


def constraint_from_json(obj: dict | None) -> ConstraintSet:
    """Decode the tagged-union encoding used in spec files."""
    if obj is None:
        return FullSpace()
    kind = obj.get("type")
    if kind == "full":
        return FullSpace()
    if kind == "nonneg":
        return NonNegativeOrthant()
    if kind == "box":
        return Box(obj["lower"], obj["upper"])
    if kind == "ball":
        return Ball(obj["center"], obj["radius"])
    if kind == "halfspace":
        return HalfSpace(obj["normal"], obj["offset"])
    raise InvalidSet(f"unknown constraint type {kind!r}")


def project(cset: ConstraintSet, x) -> np.ndarray:
    """Euclidean projection of ``x`` onto ``cset``."""
    return cset.project(x)


def _is_diagonal_block(SigmaT: np.ndarray, d: int, tol: float = 1e-12) -> bool:
    top = SigmaT[..., :d, :]
    off = top - np.einsum("...ii->...i", top)[..., None] * np.eye(d)
    rest = SigmaT[..., d:, :]
    return bool(np.all(np.abs(off) <= tol) and np.all(np.abs(rest) <= tol))


def project_transformed(SigmaT, cset: ConstraintSet, z) -> np.ndarray:
    """Project image-space vectors ``z`` onto ``{SigmaT a : a in cset}``.

    ``SigmaT`` has shape ``(..., k, d)`` with ``k`` equal to ``d`` (no common
    noise) or ``d + 1``; ``z`` has shape ``(..., k)``.
    """
    SigmaT = np.asarray(SigmaT, dtype=float)
    z = np.asarray(z, dtype=float)
    k, d = SigmaT.shape[-2:]
    if cset.dim is not None and cset.dim != d:
        raise InvalidSet(f"constraint dimension {cset.dim} does not match d={d}")

    if d == 1:
        s = SigmaT[..., :, 0]
        lo, hi = cset.interval()
        a = np.clip(np.sum(s * z, axis=-1) / np.sum(s * s, axis=-1), lo, hi)
        return s * a[..., None]

    if isinstance(cset, FullSpace):
        gram = np.swapaxes(SigmaT, -1, -2) @ SigmaT
        rhs = np.swapaxes(SigmaT, -1, -2) @ z[..., None]
        return (SigmaT @ np.linalg.solve(gram, rhs))[..., 0]

    if isinstance(cset, Ball) and _is_diagonal_block(SigmaT, d):
        diag = np.einsum("...ii->...i", SigmaT[..., :d, :])
        s = diag[..., :1]
        same = np.all(np.abs(diag - s) <= 1e-12)
        if same or (np.all(cset.center == 0) and np.all(np.abs(np.abs(diag) - np.abs(s)) <= 1e-12)):
            # image of the ball under s I is the ball of radius |s| r around s c
            radius = np.abs(s) * cset.radius
            centre = s * cset.center
            top = z[..., :d] - centre
            norm = np.linalg.norm(top, axis=-1, keepdims=True)
            with np.errstate(divide="ignore", invalid="ignore"):
                scale = np.where(norm > radius, radius / norm, 1.0)
            out = np.zeros_like(z)
            out[..., :d] = centre + top * scale
            return out

    if isinstance(cset, (Box, NonNegativeOrthant)) and _is_diagonal_block(SigmaT, d):
        diag = np.einsum("...ii->...i", SigmaT[..., :d, :])
        lo, hi = cset.bounding_box(d)
        with np.errstate(invalid="ignore"):
            a, b = diag * lo, diag * hi
        a = np.where(np.isnan(a), 0.0, a)
        b = np.where(np.isnan(b), 0.0, b)
        out = np.zeros_like(z)
        out[..., :d] = np.clip(z[..., :d], np.minimum(a, b), np.maximum(a, b))
        return out

    raise UnsupportedProjection(
        f"no exact projection onto SigmaT*{type(cset).__name__} for d={d}, k={k}"
    )


def recover_strategy(SigmaT, g) -> np.ndarray:
    """Map an image-space vector back to a portfolio: (Sigma Sigma^T)^{-1} Sigma g."""
    SigmaT = np.asarray(SigmaT, dtype=float)
    Sigma = np.swapaxes(SigmaT, -1, -2)
    return np.linalg.solve(Sigma @ SigmaT, (Sigma @ np.asarray(g, float)[..., None]))[..., 0]


@dataclass(frozen=True)
class GrowthCertificate:
    c0: float
    zero_in_set: bool
    empirical: float = 0.0


def growth_certificate(cset: ConstraintSet, SigmaT, samples: int = 1000, seed: int = 0) -> GrowthCertificate:
    """Linear-growth constant ``C0`` with ``|P(x)| <= |x| + C0``.

    When the image contains the origin the projection is norm-decreasing and
    ``C0 = 0``.  Otherwise ``|P(0)|`` is a valid constant by 1-Lipschitz
    continuity; the sampled ``sup (|P(x)| - |x|)^+`` is reported alongside it.
    """
    SigmaT = np.asarray(SigmaT, dtype=float)
    k = SigmaT.shape[-2]
    p0 = float(np.linalg.norm(project_transformed(SigmaT, cset, np.zeros(k))))
    rng = np.random.default_rng(seed)
    x = rng.normal(scale=3.0, size=(samples, k))
    px = project_transformed(np.broadcast_to(SigmaT, (samples,) + SigmaT.shape[-2:]), cset, x)
    emp = float(np.max(np.maximum(np.linalg.norm(px, axis=-1) - np.linalg.norm(x, axis=-1), 0.0)))
    if p0 <= MEMBERSHIP_TOL:
        return GrowthCertificate(0.0, True, emp)
    return GrowthCertificate(max(p0, emp), False, emp)
