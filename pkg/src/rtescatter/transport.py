"""Pointwise transport operators on a ball.

``sigma`` arguments are scalar fields from :mod:`rtescatter.fields`;
boundary functions ``f`` and sources ``S`` are vectorised callables
``f(points, directions) -> values`` on ``(..., 3)`` arrays.
"""
from __future__ import annotations

import numpy as np

from . import _core
from .errors import DomainError
from .geometry import Domain, chord_lengths, direction, entry_points
from .quadrature import QuadratureSpec, composite_gauss, gauss_legendre_unit


def _quad(dom: Domain | None, quad: QuadratureSpec | None) -> QuadratureSpec:
    if quad is not None:
        return quad
    return QuadratureSpec.for_domain(dom) if dom is not None else QuadratureSpec()


def optical_depths(sigma, p0, p1, panel: float) -> np.ndarray:
    """Vectorised line integrals of ``sigma`` over segments (no domain checks)."""
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    shape = np.broadcast_shapes(p0.shape, p1.shape)[:-1]
    p0 = np.broadcast_to(p0, shape + (3,)).reshape(-1, 3)
    p1 = np.broadcast_to(p1, shape + (3,)).reshape(-1, 3)
    return _core.optical_depths(p0, p1, sigma.spec(), panel).reshape(shape)


def attenuation(sigma, x, y, quad: QuadratureSpec | None = None, domain: Domain | None = None) -> float:
    """exp(-integral of sigma along the segment from x to y)."""
    dom = domain or sigma.domain
    x = np.asarray(x, dtype=float).reshape(3)
    y = np.asarray(y, dtype=float).reshape(3)
    if dom is not None:
        # convexity: both endpoints inside implies the whole segment is
        for p in (x, y):
            if not dom.contains(p, tol=1e-9 * dom.radius):
                raise DomainError(f"segment endpoint {p.tolist()} lies outside the domain")
    q = _quad(dom, quad)
    return float(np.exp(-optical_depths(sigma, x, y, q.panel_length)))


def attenuation_derivative_check(sigma, x, theta, t, step: float = 1e-4, quad=None, domain=None) -> float:
    """|d/dt alpha(x, x + t theta) + sigma(x + t theta) alpha(x, x + t theta)| by central differences."""
    dom = domain or sigma.domain
    x = np.asarray(x, dtype=float)
    theta = direction(theta)
    y = x + t * theta
    if dom is not None:
        dom.require_interior(y)
    fwd = attenuation(sigma, x, x + (t + step) * theta, quad, dom)
    bwd = attenuation(sigma, x, x + (t - step) * theta, quad, dom)
    a = attenuation(sigma, x, y, quad, dom)
    return abs((fwd - bwd) / (2 * step) + float(sigma(y)) * a)


def apply_J(dom: Domain, sigma, f, x, theta, quad=None) -> float:
    """Ballistic transport of inflow data: alpha(x, x_theta-) * f(x_theta-, theta)."""
    x = dom.require_closed(x)
    theta = direction(theta)
    e = entry_points(dom, x, theta)
    val = float(np.asarray(f(e, theta)))
    if val == 0.0:
        return 0.0
    q = _quad(dom, quad)
    return val * float(np.exp(-optical_depths(sigma, e, x, q.panel_length)))


def apply_K(kernel, u, x, theta, quad=None, domain: Domain | None = None) -> float:
    """Sphere quadrature of k(x, theta, .) u(x, .)."""
    dom = domain or kernel.spatial.domain
    x = dom.require_closed(x) if dom is not None else np.asarray(x, dtype=float).reshape(3)
    theta = direction(theta)
    rule = _quad(dom, quad).sphere_rule()
    xs = np.broadcast_to(x, rule.nodes.shape)
    kv = kernel(xs, theta, rule.nodes)
    return float(rule.integrate(kv * np.asarray(u(xs, rule.nodes))))


def depth_profile(sigma, x, back_dir, t_nodes, panel: float) -> np.ndarray:
    """Optical depth from ``x`` to ``x - t back_dir`` at each sorted node ``t``.

    Panel-boundary depths are accumulated with 4-point Gauss rules; each
    node adds a nested Gauss rule over its partial panel.
    """
    t_nodes = np.asarray(t_nodes, dtype=float)
    if sigma.is_constant:
        return float(sigma(x)) * t_nodes
    if len(t_nodes) == 0:
        return t_nodes
    tmax = float(t_nodes.max())
    m = max(1, int(np.ceil(tmax / panel - 1e-12)))
    edges = np.linspace(0.0, tmax, m + 1)
    seg_starts = x - edges[:-1, None] * back_dir
    seg_ends = x - edges[1:, None] * back_dir
    cum = np.concatenate([[0.0], np.cumsum(_core.optical_depths(seg_starts, seg_ends, sigma.spec(), panel))])
    k = np.clip(np.searchsorted(edges, t_nodes, side="right") - 1, 0, m - 1)
    gx, gw = gauss_legendre_unit(4)
    lo = edges[k]
    span = t_nodes - lo
    pts = x - (lo[:, None] + span[:, None] * gx[None, :])[..., None] * back_dir
    partial = (sigma(pts) @ gw) * span
    return cum[k] + partial


def apply_Tinv(dom: Domain, sigma, S, x, theta, quad=None) -> float:
    """Attenuated integral of the source S along the backward chord from x."""
    x = dom.require_closed(x)
    theta = direction(theta)
    q = _quad(dom, quad)
    L = float(chord_lengths(dom, x, theta)[0])
    t, w = composite_gauss(L, q.panel_length, q.line_nodes)
    if len(t) == 0:
        return 0.0
    pts = x - t[:, None] * theta
    src = np.asarray(S(pts, np.broadcast_to(theta, pts.shape)), dtype=float)
    tau = depth_profile(sigma, x, theta, t, q.panel_length)
    return float(np.sum(w * np.exp(-tau) * src))


def contraction_constant(coeffs, dom: Domain | None = None, quad=None) -> float:
    """Upper bound 1 - exp(-max(sigma) * diameter) on the L-infinity norm of T^-1 K."""
    dom = dom or coeffs.domain
    return float(-np.expm1(-coeffs.sigma.upper_bound() * dom.diameter))
