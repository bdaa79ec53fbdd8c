"""Absorption and scattering phantoms.

Scalar fields (``ConstantField``, ``BlobField``, ``GridField``) serve both
as the absorption coefficient sigma(x) and as the spatial factor s(x) of a
factorised kernel ``k(x, theta, theta') = s(x) * kappa(theta . theta')``.
Angular profiles are normalised so that kappa integrates to one over the
sphere; s(x) is then the total scattering cross-section.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import DomainError, SubcriticalityError
from .geometry import Domain
from .quadrature import SphereRule, fibonacci_rule, product_rule

INV_4PI = 1.0 / (4.0 * np.pi)
SUBCRITICAL_SLACK = 1e-9


class SigmaSpec(NamedTuple):
    """Flat description of a scalar field for the compiled kernels."""

    kind: int  # 0 constant, 1 gaussian blobs, 2 trilinear grid
    value: float
    centers: np.ndarray
    inv_two_w2: np.ndarray
    amps: np.ndarray
    grid: np.ndarray
    origin: np.ndarray
    spacing: np.ndarray


_EMPTY2 = np.zeros((0, 3))
_EMPTY1 = np.zeros(0)
_EMPTY3 = np.zeros((1, 1, 1))


class ScalarField:
    """Base class; subclasses implement ``__call__`` on ``(..., 3)`` arrays."""

    domain: Domain | None = None

    def __call__(self, pts) -> np.ndarray:  # pragma: no cover - abstract
        raise NotImplementedError

    def upper_bound(self) -> float:
        raise NotImplementedError

    def spec(self) -> SigmaSpec:
        raise NotImplementedError

    @property
    def is_constant(self) -> bool:
        return False

    def scaled(self, factor: float) -> "ScalarField":
        raise NotImplementedError


@dataclass(frozen=True)
class ConstantField(ScalarField):
    value: float
    domain: Domain | None = None

    def __post_init__(self):
        if not (self.value >= 0 and np.isfinite(self.value)):
            raise ValueError(f"field value must be finite and >= 0, got {self.value}")

    def __call__(self, pts):
        pts = np.asarray(pts, dtype=float)
        return np.full(pts.shape[:-1], float(self.value))

    def upper_bound(self):
        return float(self.value)

    def spec(self):
        return SigmaSpec(0, float(self.value), _EMPTY2, _EMPTY1, _EMPTY1, _EMPTY3, np.zeros(3), np.ones(3))

    @property
    def is_constant(self):
        return True

    def scaled(self, factor):
        return ConstantField(self.value * factor, self.domain)


@dataclass(frozen=True)
class Blob:
    center: tuple
    width: float
    amplitude: float


@dataclass(frozen=True)
class BlobField(ScalarField):
    """background + sum_i amp_i * exp(-|x - c_i|^2 / (2 w_i^2))."""

    blobs: tuple = ()
    background: float = 0.0
    domain: Domain | None = None

    def __post_init__(self):
        blobs = tuple(b if isinstance(b, Blob) else Blob(**b) for b in self.blobs)
        object.__setattr__(self, "blobs", blobs)
        if self.background < 0:
            raise ValueError("background must be >= 0")
        for b in blobs:
            if b.amplitude < 0 or not b.width > 0:
                raise ValueError(f"blob needs amplitude >= 0 and width > 0: {b}")

    @property
    def _arrays(self):
        c = np.array([b.center for b in self.blobs], dtype=float).reshape(-1, 3)
        w = np.array([b.width for b in self.blobs], dtype=float)
        a = np.array([b.amplitude for b in self.blobs], dtype=float)
        return c, 0.5 / w**2, a

    def __call__(self, pts):
        pts = np.asarray(pts, dtype=float)
        out = np.full(pts.shape[:-1], float(self.background))
        for b in self.blobs:
            r2 = np.sum((pts - np.asarray(b.center, dtype=float)) ** 2, axis=-1)
            out += b.amplitude * np.exp(-r2 / (2.0 * b.width**2))
        return out

    def upper_bound(self):
        return float(self.background + sum(b.amplitude for b in self.blobs))

    def spec(self):
        c, iw, a = self._arrays
        return SigmaSpec(1, float(self.background), c, iw, a, _EMPTY3, np.zeros(3), np.ones(3))

    @property
    def is_constant(self):
        return not self.blobs

    def scaled(self, factor):
        blobs = tuple(Blob(b.center, b.width, b.amplitude * factor) for b in self.blobs)
        return BlobField(blobs, self.background * factor, self.domain)


@dataclass(frozen=True, eq=False)
class GridField(ScalarField):
    """Trilinear interpolation of node values; points off the grid are clamped to it."""

    values: np.ndarray
    origin: np.ndarray
    spacing: np.ndarray
    domain: Domain | None = None

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=float)
        if v.ndim != 3 or min(v.shape) < 2:
            raise ValueError("grid values must be 3-D with at least 2 nodes per axis")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ValueError("grid values must be finite and >= 0")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float).reshape(3))
        sp = np.broadcast_to(np.asarray(self.spacing, dtype=float), (3,)).copy()
        if np.any(sp <= 0):
            raise ValueError("grid spacing must be positive")
        object.__setattr__(self, "spacing", sp)

    @classmethod
    def covering(cls, dom: Domain, values) -> "GridField":
        """Grid spanning the bounding cube of ``dom``."""
        v = np.asarray(values, dtype=float)
        n = np.array(v.shape)
        return cls(v, dom.center - dom.radius, 2.0 * dom.radius / (n - 1), dom)

    def __call__(self, pts):
        return trilinear(self.values, self.origin, self.spacing, pts)

    def upper_bound(self):
        return float(self.values.max())

    def spec(self):
        return SigmaSpec(2, 0.0, _EMPTY2, _EMPTY1, _EMPTY1, self.values, self.origin, self.spacing)

    def scaled(self, factor):
        return GridField(self.values * factor, self.origin, self.spacing, self.domain)


def trilinear(values, origin, spacing, pts) -> np.ndarray:
    pts = np.asarray(pts, dtype=float)
    shape = np.array(values.shape)
    f = (pts - origin) / spacing
    f = np.clip(f, 0.0, shape - 1)
    i0 = np.minimum(np.floor(f).astype(np.intp), shape - 2)
    t = f - i0
    ix, iy, iz = i0[..., 0], i0[..., 1], i0[..., 2]
    tx, ty, tz = t[..., 0], t[..., 1], t[..., 2]
    v = values
    c00 = v[ix, iy, iz] * (1 - tx) + v[ix + 1, iy, iz] * tx
    c10 = v[ix, iy + 1, iz] * (1 - tx) + v[ix + 1, iy + 1, iz] * tx
    c01 = v[ix, iy, iz + 1] * (1 - tx) + v[ix + 1, iy, iz + 1] * tx
    c11 = v[ix, iy + 1, iz + 1] * (1 - tx) + v[ix + 1, iy + 1, iz + 1] * tx
    c0 = c00 * (1 - ty) + c10 * ty
    c1 = c01 * (1 - ty) + c11 * ty
    return c0 * (1 - tz) + c1 * tz


# angular profiles -----------------------------------------------------------


@dataclass(frozen=True)
class Isotropic:
    def __call__(self, mu):
        return np.full(np.shape(mu), INV_4PI)

    def describe(self):
        return {"kind": "isotropic"}


@dataclass(frozen=True)
class HenyeyGreenstein:
    g: float

    def __post_init__(self):
        if not -1.0 < self.g < 1.0:
            raise ValueError(f"Henyey-Greenstein asymmetry must lie in (-1, 1), got {self.g}")

    def __call__(self, mu):
        g = self.g
        mu = np.clip(np.asarray(mu, dtype=float), -1.0, 1.0)
        denom = 1.0 + g * g - 2.0 * g * mu
        return INV_4PI * (1.0 - g * g) / (denom * np.sqrt(denom))

    def describe(self):
        return {"kind": "henyey-greenstein", "g": self.g}


@dataclass(frozen=True)
class ScatteringKernel:
    """k(x, theta, theta') = s(x) * kappa(theta . theta')."""

    spatial: ScalarField
    angular: Isotropic | HenyeyGreenstein = field(default_factory=Isotropic)

    def __call__(self, pts, theta, theta_prime) -> np.ndarray:
        mu = np.sum(np.asarray(theta, dtype=float) * np.asarray(theta_prime, dtype=float), axis=-1)
        return self.spatial(pts) * self.angular(mu)

    def profile(self, mu) -> np.ndarray:
        return self.angular(mu)

    @property
    def is_zero(self) -> bool:
        return self.spatial.upper_bound() == 0.0

    def scaled(self, factor: float) -> "ScatteringKernel":
        return ScatteringKernel(self.spatial.scaled(factor), self.angular)


def eval_sigma(field: ScalarField, x, domain: Domain | None = None) -> float:
    """Validated point evaluation of a scalar field."""
    dom = domain or field.domain
    x = np.asarray(x, dtype=float).reshape(3)
    if dom is not None and not dom.contains(x):
        raise DomainError(f"point {x.tolist()} lies outside the domain")
    return float(field(x))


def eval_k(kernel: ScatteringKernel, x, theta, theta_prime, domain: Domain | None = None) -> float:
    dom = domain or kernel.spatial.domain
    x = np.asarray(x, dtype=float).reshape(3)
    if dom is not None and not dom.contains(x):
        raise DomainError(f"point {x.tolist()} lies outside the domain")
    return float(kernel(x, theta, theta_prime))


# subcriticality ---------------------------------------------------------------


@dataclass(frozen=True)
class SubcriticalityReport:
    max_ratio: float
    worst_point: np.ndarray
    passed: bool


def _probe_directions() -> np.ndarray:
    axes = np.vstack([np.eye(3), -np.eye(3)])
    return np.vstack([axes, fibonacci_rule(8).nodes])


def check_subcriticality(coeffs, sphere_rule: SphereRule, sample_points, directions=None) -> SubcriticalityReport:
    """Largest ratio (integral of k over the sphere) / sigma over the samples.

    The rule is re-oriented so its pole sits on each probe direction
    theta'; with a product rule this integrates angle-only kernels to
    near machine precision.
    """
    if len(sphere_rule) < 64:
        raise ValueError("subcriticality check needs a sphere rule with at least 64 nodes")
    pts = np.atleast_2d(np.asarray(sample_points, dtype=float))
    dirs = _probe_directions() if directions is None else np.atleast_2d(directions)
    sigma = coeffs.sigma(pts)
    s = coeffs.kernel.spatial(pts)
    worst_per_dir = np.zeros(len(pts))
    for tp in dirs:
        rule = sphere_rule.rotated(tp)
        ang = rule.integrate(coeffs.kernel.profile(rule.nodes @ tp))
        worst_per_dir = np.maximum(worst_per_dir, s * ang)
    integral = worst_per_dir
    bad = (sigma <= 0.0) & (integral > 0.0)
    if np.any(bad):
        p = pts[np.argmax(bad)]
        raise SubcriticalityError(f"sigma vanishes at {p.tolist()} where scattering is positive")
    ratio = np.divide(integral, sigma, out=np.zeros_like(integral), where=sigma > 0)
    i = int(np.argmax(ratio))
    mr = float(ratio[i])
    return SubcriticalityReport(mr, pts[i].copy(), mr <= 1.0 + SUBCRITICAL_SLACK)


def default_sample_points(dom: Domain, n: int = 9) -> np.ndarray:
    g = np.linspace(-1.0, 1.0, n) * dom.radius * (1.0 - 1e-9)
    pts = np.stack(np.meshgrid(g, g, g, indexing="ij"), axis=-1).reshape(-1, 3) + dom.center
    keep = np.linalg.norm(pts - dom.center, axis=1) <= dom.radius
    return pts[keep]


_CHECK_RULE = None


def _check_rule() -> SphereRule:
    global _CHECK_RULE
    if _CHECK_RULE is None:
        _CHECK_RULE = product_rule(512, 8)
    return _CHECK_RULE


@dataclass(frozen=True)
class CoefficientSet:
    """Absorption plus kernel on a domain; subcriticality is verified on construction."""

    domain: Domain
    sigma: ScalarField
    kernel: ScatteringKernel
    extra_samples: Sequence | None = None

    def __post_init__(self):
        pts = default_sample_points(self.domain)
        if self.extra_samples is not None:
            pts = np.vstack([pts, np.atleast_2d(self.extra_samples)])
        rep = check_subcriticality(self, _check_rule(), pts)
        if not rep.passed:
            raise SubcriticalityError(
                f"sigma < integral of k at {rep.worst_point.tolist()} (ratio {rep.max_ratio:.6g})"
            )

    def k(self, x, theta, theta_prime) -> float:
        return eval_k(self.kernel, x, theta, theta_prime, self.domain)
