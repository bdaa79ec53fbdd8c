"""Discrete-ordinate Neumann solver on a Cartesian grid.

The radiance is stored on the nodes of a box grid covering the ball for a
Fibonacci set of directions. Nodes inside the ball are unknowns; nodes
just outside (within one cell diagonal) are ghosts whose values are taken
at their radial projection onto the ball, so that trilinear interpolation
is defined everywhere inside. Each sweep applies ``T^-1 K`` by marching
backward along every characteristic with an exponential-linear step rule;
that rule keeps the discrete operator norm below ``1 - exp(-sigma L)``,
so the contraction estimate used for the stopping rule is exact for the
discrete problem too.
"""
from __future__ import annotations

import numbers
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import _core
from .errors import DomainError, SubcriticalityError
from .fields import CoefficientSet, trilinear
from .geometry import Domain, chord_lengths
from .quadrature import SphereRule, fibonacci_rule
from .transport import contraction_constant, optical_depths

InflowFunction = Callable[[np.ndarray, np.ndarray], np.ndarray]


def constant_inflow(value: float) -> InflowFunction:
    """Inflow data equal to ``value`` at every boundary point and direction."""

    def f(pts, dirs):
        return np.full(np.broadcast_shapes(np.shape(pts), np.shape(dirs))[:-1], float(value))

    return f


@dataclass(frozen=True)
class Grid:
    """Box grid of ``n`` nodes per axis over the ball's bounding cube."""

    domain: Domain
    n: int = 33

    def __post_init__(self):
        if self.n < 3:
            raise ValueError("grid needs at least 3 nodes per axis")

    @property
    def spacing(self) -> float:
        return 2.0 * self.domain.radius / (self.n - 1)

    @property
    def origin(self) -> np.ndarray:
        return self.domain.center - self.domain.radius

    @property
    def positions(self) -> np.ndarray:
        g = np.arange(self.n) * self.spacing
        X = np.stack(np.meshgrid(g, g, g, indexing="ij"), axis=-1)
        return X + self.origin

    @property
    def interior(self) -> np.ndarray:
        r = np.linalg.norm(self.positions - self.domain.center, axis=-1)
        return r < self.domain.radius * (1.0 - 1e-9)

    @property
    def active(self) -> np.ndarray:
        r = np.linalg.norm(self.positions - self.domain.center, axis=-1)
        return r <= self.domain.radius + np.sqrt(3.0) * self.spacing

    def sample_positions(self) -> np.ndarray:
        """Node positions with exterior nodes pulled back onto the ball."""
        return self.domain.project_inside(self.positions.reshape(-1, 3)).reshape(self.positions.shape)

    def interpolate(self, values, pts) -> np.ndarray:
        sp = np.full(3, self.spacing)
        return trilinear(values, self.origin, sp, pts)


@dataclass
class RadianceField:
    """Radiance on grid nodes for a discrete direction set.

    ``values`` has shape (ndir, n, n, n) and is zero at inactive nodes.
    Evaluation is trilinear in space and nearest-node in direction.
    """

    grid: Grid
    directions: SphereRule
    values: np.ndarray
    iterations: int = 0
    increments: list = field(default_factory=list)
    contraction: float = 0.0
    transport: "GridTransport | None" = field(default=None, repr=False)
    _source: np.ndarray | None = field(default=None, repr=False)

    def scattering_source(self) -> np.ndarray:
        """``K u`` on the grid for the summed field (cached)."""
        if self._source is None:
            self._source = self.transport.source(self.values)
        return self._source

    @property
    def mask(self) -> np.ndarray:
        return self.grid.active

    @property
    def ratios(self) -> np.ndarray:
        inc = np.asarray(self.increments, dtype=float)
        if len(inc) < 2:
            return np.zeros(0)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(inc[:-1] > 0, inc[1:] / inc[:-1], 0.0)

    def __call__(self, x, theta) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        j = self.directions.nearest(theta)
        j = np.broadcast_to(j, x.shape[:-1]) if x.ndim > 1 else j
        if np.ndim(j) == 0:
            return float(self.grid.interpolate(self.values[int(j)], x))
        out = np.empty(x.shape[:-1])
        for jj in np.unique(j):
            sel = j == jj
            out[sel] = self.grid.interpolate(self.values[jj], x[sel])
        return out

    def at_direction(self, x, j: int) -> np.ndarray:
        return self.grid.interpolate(self.values[j], x)


def phase_matrix(coeffs: CoefficientSet, rule: SphereRule) -> np.ndarray:
    """Row-normalised discrete angular kernel ``P[j, l] ~ w_l kappa(theta_j . theta_l)``.

    Each row sums to one, so the discrete scattering operator conserves
    the angular mean just as ``kappa`` integrates to one on the sphere.
    """
    mu = np.clip(rule.nodes @ rule.nodes.T, -1.0, 1.0)
    P = coeffs.kernel.profile(mu) * rule.weights[None, :]
    return P / P.sum(axis=1, keepdims=True)


class GridTransport:
    """Discrete ``J`` and ``T^-1 K`` on a fixed grid and direction set."""

    def __init__(self, coeffs: CoefficientSet, n: int = 33, n_dir: int = 256, step: float | None = None):
        self.coeffs = coeffs
        self.grid = Grid(coeffs.domain, n)
        self.rule = fibonacci_rule(n_dir)
        self.step = float(step) if step is not None else self.grid.spacing
        dom = coeffs.domain
        self.active = self.grid.active
        self.starts = self.grid.sample_positions()[self.active]
        back, _ = chord_lengths(dom, self.starts[:, None, :], self.rule.nodes[None, :, :])
        self.lengths = np.ascontiguousarray(back)
        samples = self.grid.sample_positions()
        self.sigma_grid = np.ascontiguousarray(coeffs.sigma(samples.reshape(-1, 3)).reshape(samples.shape[:-1]))
        self.s_grid = coeffs.kernel.spatial(samples.reshape(-1, 3)).reshape(samples.shape[:-1])
        self.const_sigma = float(coeffs.sigma.value) if coeffs.sigma.is_constant else -1.0
        self.P = phase_matrix(coeffs, self.rule)
        self._tau = None

    @property
    def shape(self) -> tuple:
        return (len(self.rule),) + (self.grid.n,) * 3

    def _march(self, source) -> tuple[np.ndarray, np.ndarray]:
        sp = np.full(3, self.grid.spacing)
        return _core.march_tinv(
            self.starts, self.rule.nodes, self.lengths, np.ascontiguousarray(source),
            self.sigma_grid, self.grid.origin.copy(), sp, self.step, self.const_sigma,
        )

    def _scatter(self, nodal: np.ndarray) -> np.ndarray:
        out = np.zeros(self.shape)
        out[:, self.active] = nodal.T
        return out

    def optical_depths(self) -> np.ndarray:
        if self._tau is None:
            _, self._tau = self._march(np.zeros(self.shape))
        return self._tau

    def apply_J(self, f: InflowFunction) -> np.ndarray:
        """Ballistic field ``Jf`` at every active node and direction."""
        entry = self.starts[:, None, :] - self.lengths[..., None] * self.rule.nodes[None, :, :]
        dirs = np.broadcast_to(self.rule.nodes[None, :, :], entry.shape)
        vals = np.asarray(f(entry, dirs), dtype=float)
        return self._scatter(np.exp(-self.optical_depths()) * vals)

    def source(self, u: np.ndarray) -> np.ndarray:
        """Scattering source ``K u`` on the grid, layout (ndir, n, n, n)."""
        flat = u.reshape(len(self.rule), -1)
        S = (self.P @ flat).reshape(self.shape)
        return S * self.s_grid[None]

    def apply_TinvK(self, u: np.ndarray) -> np.ndarray:
        integral, _ = self._march(self.source(u))
        return self._scatter(integral)


def solve_rte_neumann(
    coeffs: CoefficientSet,
    f: InflowFunction | float,
    n: int = 33,
    n_dir: int = 256,
    tol: float = 1e-8,
    max_terms: int = 500,
    step: float | None = None,
) -> RadianceField:
    """Sum the collision series ``Jf + T^-1 K Jf + ...`` on a grid.

    Stops once the newest term has sup-norm at most ``tol * (1 - C)``; the
    geometric tail then contributes at most ``tol``. Refuses coefficient
    sets whose contraction constant is not below one.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    if isinstance(f, numbers.Real):
        f = constant_inflow(float(f))
    elif not callable(f):
        raise TypeError("f must be a callable or a constant")
    C = contraction_constant(coeffs)
    if not C < 1.0:
        raise SubcriticalityError("contraction constant is not below one")
    op = GridTransport(coeffs, n, n_dir, step)
    term = op.apply_J(f)
    total = term.copy()
    increments = [float(np.abs(term).max())]
    m = 1
    if not coeffs.kernel.is_zero:
        while increments[-1] > tol * (1.0 - C):
            if m >= max_terms:
                raise ArithmeticError(f"collision series did not reach tolerance in {max_terms} terms")
            term = op.apply_TinvK(term)
            total += term
            increments.append(float(np.abs(term).max()))
            m += 1
    return RadianceField(op.grid, op.rule, total, m, increments, C, op)


def _line_nodes(grid: Grid, x, theta, L: float) -> tuple[np.ndarray, np.ndarray]:
    """Gauss nodes on [0, L] along ``x - t theta`` with breaks at grid-plane crossings."""
    h = grid.spacing
    breaks = [0.0, L]
    for ax in range(3):
        if abs(theta[ax]) < 1e-14:
            continue
        c0 = (x[ax] - grid.origin[ax]) / h
        c1 = (x[ax] - L * theta[ax] - grid.origin[ax]) / h
        lo, hi = sorted((c0, c1))
        planes = np.arange(np.ceil(lo), np.floor(hi) + 1)
        breaks.extend(((x[ax] - grid.origin[ax]) - planes * h) / theta[ax])
    b = np.unique(np.clip(breaks, 0.0, L))
    gx, gw = np.polynomial.legendre.leggauss(4)
    lo, wid = b[:-1], np.diff(b)
    keep = wid > 1e-14
    lo, wid = lo[keep], wid[keep]
    t = (lo[:, None] + 0.5 * wid[:, None] * (gx[None, :] + 1.0)).ravel()
    w = (0.5 * wid[:, None] * gw[None, :]).ravel()
    return t, w


def characteristic_extension(field_: RadianceField, f: InflowFunction, x, j: int, panel: float | None = None) -> float:
    """Radiance at an arbitrary point by integrating the interpolated source along the characteristic.

    Uses ``Jf`` plus the attenuated backward integral of the trilinear
    interpolant of ``K u`` for direction ``j``. Along a line the
    interpolant is cubic between grid-plane crossings, so Gauss nodes per
    crossing segment integrate it to near machine precision.
    """
    op: GridTransport = field_.transport
    dom = op.coeffs.domain
    theta = op.rule.nodes[j]
    x = np.asarray(x, dtype=float)
    L = float(chord_lengths(dom, x, theta)[0])
    panel = panel or 0.01 * dom.radius
    e = x - L * theta
    Jf = float(np.exp(-optical_depths(op.coeffs.sigma, x, e, panel))) * float(f(e, theta))
    if L == 0.0:
        return Jf
    S = field_.scattering_source()[j]
    t, w = _line_nodes(op.grid, x, theta, L)
    y = x - t[:, None] * theta
    tau = optical_depths(op.coeffs.sigma, np.broadcast_to(x, y.shape), y, panel)
    return Jf + float(np.sum(w * np.exp(-tau) * op.grid.interpolate(S, y)))


def rte_residual(field_: RadianceField, f: InflowFunction | float, probes, step: float = 1e-4) -> float:
    """Sup over probes and directions of ``|theta . grad u + sigma u - K u|``.

    The directional derivative is an upwind difference of the
    characteristic extension; ``K u`` uses the extension at all
    directions. Probes must be interior points.
    """
    if np.isscalar(f):
        f = constant_inflow(float(f))
    op: GridTransport = field_.transport
    dom = op.coeffs.domain
    probes = np.atleast_2d(np.asarray(probes, dtype=float))
    worst = 0.0
    J = len(op.rule)
    for x in probes:
        if not dom.is_interior(x):
            raise DomainError("residual probes must be interior")
        ext = np.array([characteristic_extension(field_, f, x, j) for j in range(J)])
        s_x = float(op.coeffs.kernel.spatial(x[None])[0])
        scat = s_x * (op.P @ ext)
        sig = float(op.coeffs.sigma(x[None])[0])
        for j in range(J):
            th = op.rule.nodes[j]
            back = characteristic_extension(field_, f, x - step * th, j)
            r = (ext[j] - back) / step + sig * ext[j] - scat[j]
            worst = max(worst, abs(r))
    return worst
