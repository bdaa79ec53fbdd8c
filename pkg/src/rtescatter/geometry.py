"""Ray geometry on a ball-shaped domain.

All routines accept array-likes and return fresh ``float64`` arrays. The
vectorised helpers (``chord_lengths`` and friends) skip validation and are
what the numerical code uses internally; the scalar entry points check
their preconditions and raise.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateGeometryError, DomainError

# points this close to the sphere (relative to the radius) count as boundary
BOUNDARY_TOL = 1e-7
PARALLEL_TOL = 1e-9


def direction(v) -> np.ndarray:
    """Return ``v`` normalised to unit length."""
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if not np.isfinite(n) or n == 0.0:
        raise ValueError(f"cannot normalise vector {v!r}")
    return v / n


def spherical_direction(polar_deg: float, azimuth_deg: float) -> np.ndarray:
    """Unit vector from polar angle (from +z) and azimuth (from +x), in degrees."""
    th, ph = np.deg2rad(polar_deg), np.deg2rad(azimuth_deg)
    return np.array([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)])


@dataclass(frozen=True)
class Domain:
    """Open ball in R^3."""

    center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    radius: float = 1.0

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float).reshape(3)
        object.__setattr__(self, "center", c)
        if not self.radius > 0:
            raise ValueError(f"radius must be positive, got {self.radius}")
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def diameter(self) -> float:
        return 2.0 * self.radius

    def is_interior(self, x) -> bool:
        r = np.linalg.norm(np.asarray(x, dtype=float) - self.center)
        return bool(r < self.radius * (1.0 - BOUNDARY_TOL))

    def contains(self, x, tol: float = 1e-9) -> bool:
        """Closed-ball membership with absolute slack ``tol``."""
        r = np.linalg.norm(np.asarray(x, dtype=float) - self.center)
        return bool(r <= self.radius + tol)

    def on_boundary(self, x, tol: float = 1e-9) -> bool:
        r = np.linalg.norm(np.asarray(x, dtype=float) - self.center)
        return bool(abs(r - self.radius) <= tol)

    def normal(self, x) -> np.ndarray:
        """Outward unit normal at (or radially through) ``x``."""
        return direction(np.asarray(x, dtype=float) - self.center)

    def normals(self, pts) -> np.ndarray:
        d = np.asarray(pts, dtype=float) - self.center
        return d / np.linalg.norm(d, axis=-1, keepdims=True)

    def require_interior(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(3)
        if not self.is_interior(x):
            raise DomainError(f"point {x.tolist()} is not strictly inside the domain")
        return x

    def require_closed(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(3)
        if not self.contains(x):
            raise DomainError(f"point {x.tolist()} lies outside the domain")
        return x

    def project_inside(self, pts, shrink: float = BOUNDARY_TOL) -> np.ndarray:
        """Radially pull points outside ``(1 - shrink) * radius`` back onto that sphere."""
        pts = np.asarray(pts, dtype=float)
        d = pts - self.center
        r = np.linalg.norm(d, axis=-1, keepdims=True)
        rmax = self.radius * (1.0 - shrink)
        scale = np.where(r > rmax, rmax / np.maximum(r, 1e-300), 1.0)
        return self.center + d * scale


def chord_lengths(dom: Domain, pts, dirs) -> tuple[np.ndarray, np.ndarray]:
    """Distances to the boundary along ``-dirs`` (backward) and ``+dirs`` (forward).

    Broadcasts over leading axes. Points outside the ball are clipped to a
    zero-length chord; callers that care validate first.
    """
    d = np.asarray(pts, dtype=float) - dom.center
    th = np.asarray(dirs, dtype=float)
    b = np.sum(d * th, axis=-1)
    c = np.sum(d * d, axis=-1) - dom.radius**2
    disc = np.sqrt(np.maximum(b * b - c, 0.0))
    forward = np.maximum(-b + disc, 0.0)
    backward = np.maximum(b + disc, 0.0)
    return backward, forward


def entry_points(dom: Domain, pts, dirs) -> np.ndarray:
    """First boundary point reached from ``pts`` travelling along ``-dirs``."""
    back, _ = chord_lengths(dom, pts, dirs)
    return np.asarray(pts, dtype=float) - back[..., None] * np.asarray(dirs, dtype=float)


def exit_points(dom: Domain, pts, dirs) -> np.ndarray:
    _, fwd = chord_lengths(dom, pts, dirs)
    return np.asarray(pts, dtype=float) + fwd[..., None] * np.asarray(dirs, dtype=float)


def boundary_exit(dom: Domain, x, theta) -> np.ndarray:
    """First point on the boundary hit from interior ``x`` moving along ``theta``."""
    x = dom.require_interior(x)
    theta = direction(theta)
    return exit_points(dom, x, theta)


def boundary_entry(dom: Domain, x, theta) -> np.ndarray:
    """Boundary point from which a ray along ``theta`` reaches interior ``x``."""
    x = dom.require_interior(x)
    theta = direction(theta)
    return entry_points(dom, x, theta)


@dataclass(frozen=True)
class BoundaryPoint:
    position: np.ndarray
    direction: np.ndarray
    side: str  # "inflow" or "outflow"

    @classmethod
    def make(cls, dom: Domain, position, theta, tol: float = 1e-9) -> "BoundaryPoint":
        p = np.asarray(position, dtype=float).reshape(3)
        if not dom.on_boundary(p, tol):
            raise DomainError(f"{p.tolist()} is not on the boundary")
        th = direction(theta)
        cos = float(dom.normal(p) @ th)
        if abs(cos) < 1e-12:
            raise DegenerateGeometryError("direction is tangential to the boundary")
        return cls(p, th, "inflow" if cos < 0 else "outflow")


@dataclass(frozen=True)
class RayConstruction:
    """Two chords through ``x``: a -> c along zeta and b -> d along eta."""

    x: np.ndarray
    zeta: np.ndarray
    eta: np.ndarray
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray

    def swapped(self) -> "RayConstruction":
        return RayConstruction(self.x, self.eta, self.zeta, self.b, self.a, self.d, self.c)

    @property
    def chord_ac(self) -> float:
        return float(np.linalg.norm(self.c - self.a))

    @property
    def chord_bd(self) -> float:
        return float(np.linalg.norm(self.d - self.b))


def construct_rays(dom: Domain, x, zeta, eta) -> RayConstruction:
    """Entry/exit points of the two chords through ``x`` along ``zeta`` and ``eta``."""
    x = dom.require_interior(x)
    zeta, eta = direction(zeta), direction(eta)
    if abs(float(zeta @ eta)) >= 1.0 - PARALLEL_TOL:
        raise DegenerateGeometryError("zeta and eta are (anti)parallel; chords do not cross at an isolated point")
    return RayConstruction(
        x=x,
        zeta=zeta,
        eta=eta,
        a=entry_points(dom, x, zeta),
        b=entry_points(dom, x, eta),
        c=exit_points(dom, x, zeta),
        d=exit_points(dom, x, eta),
    )
