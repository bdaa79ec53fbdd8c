"""Line and sphere quadrature rules."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

GOLDEN = (1.0 + 5.0**0.5) / 2.0


@lru_cache(maxsize=None)
def gauss_legendre_unit(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def composite_gauss(length: float, panel: float, n: int = 4) -> tuple[np.ndarray, np.ndarray]:
    """Composite rule on [0, length] with equal panels no longer than ``panel``."""
    if length <= 0.0:
        return np.zeros(0), np.zeros(0)
    m = max(1, int(np.ceil(length / panel - 1e-12)))
    h = length / m
    x0, w0 = gauss_legendre_unit(n)
    starts = np.arange(m) * h
    nodes = (starts[:, None] + h * x0[None, :]).ravel()
    weights = np.tile(h * w0, m)
    return nodes, weights


@dataclass(frozen=True)
class SphereRule:
    nodes: np.ndarray  # (N, 3) unit vectors
    weights: np.ndarray  # (N,), sums to 4*pi

    def __len__(self):
        return len(self.weights)

    def integrate(self, values) -> np.ndarray:
        """Integrate samples whose last axis runs over the nodes."""
        return np.asarray(values) @ self.weights

    def rotated(self, pole) -> "SphereRule":
        """Same rule with its +z axis carried onto ``pole``."""
        return SphereRule(self.nodes @ rotation_to(pole).T, self.weights)

    def nearest(self, theta) -> np.ndarray:
        """Index of the node closest to each direction in ``theta``."""
        return np.argmax(np.asarray(theta, dtype=float) @ self.nodes.T, axis=-1)


def fibonacci_rule(n: int) -> SphereRule:
    """Spherical Fibonacci points with equal weights 4*pi/n.

    Node z-coordinates are symmetric about 0, so odd functions of z
    integrate to zero up to rounding.
    """
    if n < 1:
        raise ValueError("need at least one node")
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    phi = 2.0 * np.pi * i / GOLDEN
    r = np.sqrt(np.maximum(1.0 - z * z, 0.0))
    nodes = np.column_stack([r * np.cos(phi), r * np.sin(phi), z])
    weights = np.full(n, 4.0 * np.pi / n)
    return SphereRule(nodes, weights)


def product_rule(n_polar: int, n_azimuth: int) -> SphereRule:
    """Gauss-Legendre in cos(polar) times the periodic trapezoid in azimuth."""
    mu, wmu = np.polynomial.legendre.leggauss(n_polar)
    phi = 2.0 * np.pi * np.arange(n_azimuth) / n_azimuth
    s = np.sqrt(1.0 - mu * mu)
    nodes = np.stack(
        [
            (s[:, None] * np.cos(phi)[None, :]).ravel(),
            (s[:, None] * np.sin(phi)[None, :]).ravel(),
            np.repeat(mu, n_azimuth),
        ],
        axis=1,
    )
    weights = np.repeat(wmu, n_azimuth) * (2.0 * np.pi / n_azimuth)
    return SphereRule(nodes, weights)


def rotation_to(pole) -> np.ndarray:
    """A rotation matrix taking e_z onto the unit vector ``pole``."""
    p = np.asarray(pole, dtype=float)
    p = p / np.linalg.norm(p)
    e1, e2 = tangent_frame(p)
    return np.column_stack([e1, e2, p])


def tangent_frame(v) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal e1, e2 spanning the plane perpendicular to unit ``v`` (right-handed)."""
    v = np.asarray(v, dtype=float)
    helper = np.array([1.0, 0.0, 0.0]) if abs(v[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = helper - (helper @ v) * v
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(v, e1)
    return e1, e2


@dataclass(frozen=True)
class QuadratureSpec:
    """Discretisation knobs shared by the forward operators.

    ``panel_length`` is absolute; use :meth:`for_domain` for the default
    of one hundredth of the radius. The ``beam_*`` fields size the rule
    used for the finite-width single-scatter integral.
    """

    panel_length: float = 0.01
    line_nodes: int = 4
    sphere_nodes: int = 256
    beam_line_panels: int = 4
    beam_line_nodes: int = 16
    beam_radial_nodes: int = 16
    beam_azimuth_nodes: int = 24

    def __post_init__(self):
        if not self.panel_length > 0:
            raise ValueError("panel_length must be positive")
        if self.line_nodes < 1 or self.sphere_nodes < 1:
            raise ValueError("node counts must be positive")

    @classmethod
    def for_domain(cls, dom, **overrides) -> "QuadratureSpec":
        overrides.setdefault("panel_length", 0.01 * dom.radius)
        return cls(**overrides)

    def sphere_rule(self) -> SphereRule:
        return _cached_fibonacci(self.sphere_nodes)


@lru_cache(maxsize=16)
def _cached_fibonacci(n: int) -> SphereRule:
    return fibonacci_rule(n)
