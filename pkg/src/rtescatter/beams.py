"""Narrow boundary beams and their collision-expansion readings.

A beam concentrated at boundary point ``a`` and direction ``zeta`` has
inflow profile ``psi(|x - a| / eps) * psi(|theta - zeta| / eps)`` with the
smooth bump ``psi(r) = exp(1 - 1 / (1 - r^2))``. Unit ("u") beams carry
that profile as is. Scaled ("U") beams carry ``eps^-3 / C`` times it, where
``C`` is the eps -> 0 limit of ``eps^-3`` times the raw single-scatter
integral per unit kernel and attenuation for the given source/detector
pair. The calibration depends on the pair's geometry because the
direction and position bumps couple through the lever arm from ``a`` to
the scattering point.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DegenerateGeometryError, DomainError
from .geometry import BoundaryPoint, Domain, chord_lengths, direction
from .quadrature import QuadratureSpec, composite_gauss, gauss_legendre_unit
from .transport import contraction_constant, optical_depths


def bump(r) -> np.ndarray:
    """Smooth compact profile with bump(0) = 1 and support |r| < 1."""
    r = np.abs(np.asarray(r, dtype=float))
    inside = r < 1.0
    q = np.where(inside, 1.0 - r * r, 1.0)
    return np.where(inside, np.exp(1.0 - 1.0 / q), 0.0)


def _bump_line(h) -> np.ndarray:
    """g(h) = integral over the real line of bump(sqrt(r^2 + h^2))."""
    h = np.atleast_1d(np.abs(np.asarray(h, dtype=float)))
    x, w = gauss_legendre_unit(64)
    half = np.sqrt(np.clip(1.0 - h * h, 0.0, None))
    r = half[:, None] * x[None, :]
    vals = bump(np.sqrt(r * r + h[:, None] ** 2)) @ w
    return 2.0 * half * vals


@lru_cache(maxsize=4096)
def _coupling_integral(beta: float) -> float:
    """integral over w of g(|w|) g(beta |w|)."""
    width = 1.0 if beta <= 1.0 else 1.0 / beta
    x, w = gauss_legendre_unit(96)
    ws = width * x
    return float(2.0 * width * np.sum(w * _bump_line(ws) * _bump_line(beta * ws)))


@dataclass(frozen=True)
class BeamSpec:
    base: np.ndarray
    direction: np.ndarray
    width: float
    amplitude: str = "u"
    normalization: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "base", np.asarray(self.base, dtype=float).reshape(3))
        object.__setattr__(self, "direction", direction(self.direction))
        if not self.width > 0:
            raise ValueError("beam width must be positive")
        if self.amplitude not in ("u", "U"):
            raise ValueError("amplitude must be 'u' or 'U'")

    def validate(self, dom: Domain) -> None:
        bp = BoundaryPoint.make(dom, self.base, self.direction, tol=1e-9 * dom.radius)
        if bp.side != "inflow":
            raise DomainError("beam direction must point into the domain")

    def profile(self, pts, dirs) -> np.ndarray:
        eps = self.width
        dx = np.linalg.norm(np.asarray(pts, dtype=float) - self.base, axis=-1)
        dt = np.linalg.norm(np.asarray(dirs, dtype=float) - self.direction, axis=-1)
        return bump(dx / eps) * bump(dt / eps)


def crossing_point(beam: BeamSpec, det_pos, det_dir) -> tuple[np.ndarray, float]:
    """Closest point of the detector line to the beam line, and its distance from the beam base."""
    z, e = beam.direction, np.asarray(det_dir, dtype=float)
    A = np.column_stack([z, e])
    st, *_ = np.linalg.lstsq(A, np.asarray(det_pos, dtype=float) - beam.base, rcond=None)
    s = float(st[0])
    return beam.base + s * z, s


def calibration_constant(dom: Domain, beam: BeamSpec, det_pos, det_dir) -> float:
    """Limit of eps^-3 * raw single-scatter reading / (alpha k alpha) for a crossing pair."""
    z = beam.direction
    eta = direction(det_dir)
    nu = dom.normal(beam.base)
    nz = float(nu @ z)
    p = eta - (float(nu @ eta) / nz) * z  # oblique projection of eta onto the tangent plane at a
    pn = float(np.linalg.norm(p))
    if pn < 1e-9:
        raise DegenerateGeometryError("single-scatter calibration needs non-parallel source and detector directions")
    _, lever = crossing_point(beam, det_pos, eta)
    n_hat = np.cross(nu, p / pn)
    m = n_hat - (float(z @ n_hat) / nz) * nu
    m = m - float(m @ z) * z
    beta = lever * float(np.linalg.norm(m))
    return _coupling_integral(round(beta, 12)) / pn


def _frames(c) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise orthonormal tangent frames for unit vectors ``c`` of shape (n, 3)."""
    helper = np.where(np.abs(c[:, :1]) < 0.9, np.array([[1.0, 0.0, 0.0]]), np.array([[0.0, 1.0, 0.0]]))
    e1 = helper - np.sum(helper * c, axis=1, keepdims=True) * c
    e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
    return e1, np.cross(c, e1)


def _cap_directions(centres, half_angles, n_r: int, n_b: int):
    """Polar Gauss x azimuth trapezoid nodes on caps; returns (dirs (T,R*B,3), weights (T,R*B))."""
    x, w = gauss_legendre_unit(n_r)
    beta = 2.0 * np.pi * np.arange(n_b) / n_b
    ang = half_angles[:, None] * x[None, :]  # (T, R)
    wang = half_angles[:, None] * w[None, :] * np.sin(ang) * (2.0 * np.pi / n_b)
    e1, e2 = _frames(centres)
    cb, sb = np.cos(beta), np.sin(beta)
    ring = cb[None, None, :, None] * e1[:, None, None, :] + sb[None, None, :, None] * e2[:, None, None, :]
    dirs = np.cos(ang)[:, :, None, None] * centres[:, None, None, :] + np.sin(ang)[:, :, None, None] * ring
    T = len(centres)
    weights = np.broadcast_to(wang[:, :, None], (T, n_r, n_b)).reshape(T, -1)
    return dirs.reshape(T, -1, 3), weights


def single_scatter_raw(dom: Domain, sigma_in, sigma_out, kernel, beam: BeamSpec, det_pos, det_dir, quad: QuadratureSpec) -> float:
    """Once-scattered intensity at (det_pos, det_dir) from the beam's raw profile.

    Evaluates the line integral along the detector's backward chord of
    alpha_out * (sphere integral of k * alpha_in * profile). Both the line
    and sphere integrals are restricted to where the profile can be
    non-zero: the chord to the beam's illuminated tube, and directions to
    the smaller of the profile's direction cap and the cap that can reach
    within ``eps`` of the beam base.
    """
    if kernel.is_zero:
        return 0.0
    p = np.asarray(det_pos, dtype=float)
    eta = direction(det_dir)
    a, zeta, eps = beam.base, beam.direction, beam.width
    L = float(chord_lengths(dom, p, eta)[0])
    if L <= 0.0:
        return 0.0

    ts = np.linspace(0.0, L, 2049)
    rel = p - ts[:, None] * eta - a
    along = rel @ zeta
    perp = np.linalg.norm(rel - along[:, None] * zeta, axis=1)
    reach = eps * (1.0 + np.linalg.norm(rel, axis=1) + eps) * (1.0 + 1e-6) + 1e-12
    hit = np.nonzero(perp <= reach)[0]
    if len(hit) == 0:
        return 0.0
    lo = ts[max(hit[0] - 1, 0)]
    hi = ts[min(hit[-1] + 1, len(ts) - 1)]
    span = hi - lo
    t, wt = composite_gauss(span, span / quad.beam_line_panels * (1 + 1e-9), quad.beam_line_nodes)
    t = lo + t
    y = p - t[:, None] * eta

    ell = np.linalg.norm(y - a, axis=1)
    dir_half = 2.0 * np.arcsin(min(eps / 2.0, 1.0))
    spat_half = np.arcsin(np.minimum(1.0, eps / np.maximum(ell, 1e-300)))
    use_spatial = spat_half < dir_half
    centres = np.where(use_spatial[:, None], (y - a) / np.maximum(ell, 1e-300)[:, None], zeta)
    half = np.where(use_spatial, spat_half, dir_half)
    dirs, wdir = _cap_directions(centres, half, quad.beam_radial_nodes, quad.beam_azimuth_nodes)

    yy = np.broadcast_to(y[:, None, :], dirs.shape)
    back, _ = chord_lengths(dom, yy, dirs)
    entry = yy - back[..., None] * dirs
    prof = beam.profile(entry, dirs)
    live = prof > 0.0
    if not np.any(live):
        return 0.0
    integrand = np.zeros(prof.shape)
    tau_in = optical_depths(sigma_in, yy[live], entry[live], quad.panel_length)
    kv = kernel(yy[live], eta, dirs[live])
    integrand[live] = prof[live] * kv * np.exp(-tau_in)
    inner = np.sum(integrand * wdir, axis=1)
    tau_out = optical_depths(sigma_out, np.broadcast_to(p, y.shape), y, quad.panel_length)
    return float(np.sum(wt * np.exp(-tau_out) * inner))


def ballistic_raw(dom: Domain, sigma, beam: BeamSpec, det_pos, det_dir, quad: QuadratureSpec) -> float:
    """J applied to the beam's raw profile at (det_pos, det_dir)."""
    p = np.asarray(det_pos, dtype=float)
    eta = direction(det_dir)
    L = float(chord_lengths(dom, p, eta)[0])
    e = p - L * eta
    prof = float(beam.profile(e, eta))
    if prof == 0.0:
        return 0.0
    return prof * float(np.exp(-optical_depths(sigma, e, p, quad.panel_length)))


def inflow_flux(dom: Domain, beam: BeamSpec, n_r: int = 24, n_b: int = 32) -> float:
    """Integral of the raw profile against |nu . theta| over the inflow boundary."""
    eps, R = beam.width, dom.radius
    a_hat = dom.normal(beam.base)
    gam = 2.0 * np.arcsin(min(1.0, eps / (2.0 * R)))
    pos_dirs, pos_w = _cap_directions(a_hat[None, :], np.array([gam]), n_r, n_b)
    pos = dom.center + R * pos_dirs[0]
    pos_w = pos_w[0] * R * R
    half = 2.0 * np.arcsin(min(eps / 2.0, 1.0))
    th, th_w = _cap_directions(beam.direction[None, :], np.array([half]), n_r, n_b)
    th, th_w = th[0], th_w[0]
    nu = (pos - dom.center) / R
    cos = -(nu @ th.T)  # (P, D) positive for inflow
    prof = bump(np.linalg.norm(pos - beam.base, axis=1) / eps)[:, None] * bump(
        np.linalg.norm(th - beam.direction, axis=1) / eps
    )[None, :]
    return float(pos_w @ (prof * np.maximum(cos, 0.0)) @ th_w)


@dataclass(frozen=True)
class CollisionBreakdown:
    """First two collision terms at a detector plus bounds on the rest.

    ``tail_bound`` bounds the multiply-scattered remainder pointwise via the
    geometric series; ``tail_flux_bound`` bounds its integral over the
    outflow boundary (flux measure) by the beam's incoming flux, which
    shrinks like eps for scaled beams.
    """

    ballistic: float
    single_scatter: float
    tail_bound: float
    contraction_constant: float
    tail_flux_bound: float = 0.0
    amplitude_scale: float = 1.0
    epsilon: float = 0.0

    @property
    def total(self) -> float:
        return self.ballistic + self.single_scatter


def amplitude_scale(dom: Domain, beam: BeamSpec, det_pos, det_dir) -> float:
    """Peak amplitude multiplying the raw profile for this source/detector pair.

    Scaled beams use ``beam.normalization`` when given, else the geometric
    calibration (which fails for collinear pairs).
    """
    if beam.amplitude == "u":
        return 1.0
    if beam.normalization is not None:
        return beam.width**-3 * beam.normalization
    return beam.width**-3 / calibration_constant(dom, beam, det_pos, det_dir)


def beam_reading(dom, sigma_in, sigma_out, kernel, beam, det_pos, det_dir, quad, contraction: float) -> CollisionBreakdown:
    """Collision terms for a beam whose two legs may see different absorption."""
    beam.validate(dom)
    scale = amplitude_scale(dom, beam, det_pos, det_dir)
    ball = scale * ballistic_raw(dom, sigma_out, beam, det_pos, det_dir, quad)
    single = scale * single_scatter_raw(dom, sigma_in, sigma_out, kernel, beam, det_pos, det_dir, quad)
    if kernel.is_zero or contraction <= 0.0:
        tail, flux = 0.0, 0.0
    else:
        tail = contraction**2 / (1.0 - contraction) * scale
        flux = scale * inflow_flux(dom, beam)
    return CollisionBreakdown(ball, single, tail, contraction, flux, scale, beam.width)


def measure_collision_terms(coeffs, beam: BeamSpec, exit: BoundaryPoint, quad: QuadratureSpec | None = None) -> CollisionBreakdown:
    """Ballistic and single-scatter readings of ``beam`` at the outflow point ``exit``."""
    dom = coeffs.domain
    quad = quad or QuadratureSpec.for_domain(dom)
    if exit.side != "outflow":
        raise DomainError("detector must sit on the outflow boundary")
    C = contraction_constant(coeffs)
    return beam_reading(dom, coeffs.sigma, coeffs.sigma, coeffs.kernel, beam, exit.position, exit.direction, quad, C)
