"""Algebraic reconstruction of the scattering kernel and the X-ray baseline.

Two scaled-beam single-scatter readings divided by two unit-beam
ballistic readings give ``k(x, zeta, eta)^2`` at the crossing point
because every attenuation factor cancels. The multi-frequency analogue
uses eight readings and yields ``k^4``. For comparison, absorption can be
recovered the classical way: take ``-log`` of ballistic readings to get
line integrals and invert them with Kaczmarz sweeps.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import _core
from .beams import BeamSpec, measure_collision_terms
from .errors import (
    DegenerateGeometryError,
    InvalidMeasurementError,
    UnderdeterminedWarning,
    UnderflowError,
)
from .fields import CoefficientSet, ScalarField, eval_k
from .geometry import BoundaryPoint, Domain, RayConstruction, chord_lengths, construct_rays
from .multifreq import MultiFreqCoefficients, analytic_mf_measurements, simulate_mf_measurements
from .quadrature import QuadratureSpec
from .transport import attenuation, optical_depths

DEFAULT_FLOOR = 1e-12
MIN_CHORD_FRACTION = 0.05


@dataclass(frozen=True)
class MeasurementQuad:
    """The four boundary readings behind one ``k^2`` estimate.

    ``U_ad`` and ``U_bc`` are scaled-beam readings taken across the
    crossing (a to d, b to c); ``u_ac`` and ``u_bd`` are unit-beam readings
    straight through.
    """

    U_ad: float
    U_bc: float
    u_ac: float
    u_bd: float
    provenance: str = "analytic-limit"

    def as_array(self) -> np.ndarray:
        return np.array([self.U_ad, self.U_bc, self.u_ac, self.u_bd])

    @classmethod
    def from_array(cls, values, provenance: str) -> "MeasurementQuad":
        v = np.asarray(values, dtype=float)
        return cls(float(v[0]), float(v[1]), float(v[2]), float(v[3]), provenance)


def analytic_single_scatter(coeffs: CoefficientSet, rays: RayConstruction, quad: QuadratureSpec | None = None) -> MeasurementQuad:
    """Narrow-beam limits of the four readings for the crossing at ``rays.x``."""
    dom = coeffs.domain
    quad = quad or QuadratureSpec.for_domain(dom)
    s = coeffs.sigma
    x, z, e = rays.x, rays.zeta, rays.eta
    U_ad = attenuation(s, rays.a, x, quad, dom) * coeffs.k(x, e, z) * attenuation(s, x, rays.d, quad, dom)
    U_bc = attenuation(s, rays.b, x, quad, dom) * coeffs.k(x, z, e) * attenuation(s, x, rays.c, quad, dom)
    return MeasurementQuad(
        float(U_ad), float(U_bc),
        attenuation(s, rays.a, rays.c, quad, dom),
        attenuation(s, rays.b, rays.d, quad, dom),
        "analytic-limit",
    )


def simulate_single_scatter(coeffs: CoefficientSet, rays: RayConstruction, eps: float, quad: QuadratureSpec | None = None) -> MeasurementQuad:
    """Finite-width readings (ballistic plus single-scatter terms) for the four beams."""
    dom = coeffs.domain
    quad = quad or QuadratureSpec.for_domain(dom)
    z, e = rays.zeta, rays.eta

    def read(src, th_src, amp, det, th_det):
        br = measure_collision_terms(coeffs, BeamSpec(src, th_src, eps, amp), BoundaryPoint.make(dom, det, th_det), quad)
        return br.total

    return MeasurementQuad(
        read(rays.a, z, "U", rays.d, e),
        read(rays.b, e, "U", rays.c, z),
        read(rays.a, z, "u", rays.c, z),
        read(rays.b, e, "u", rays.d, e),
        f"finite-epsilon({eps!r})",
    )


def _check_readings(values, denominators, floor: float) -> None:
    v = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(v)):
        raise InvalidMeasurementError("readings must be finite")
    if np.any(v < 0):
        raise InvalidMeasurementError("readings must be nonnegative")
    if np.any(np.asarray(denominators, dtype=float) < max(floor, 1e-300)):
        raise UnderflowError("ballistic reading below the underflow floor")


def reconstruct_k2(m: MeasurementQuad, floor: float = DEFAULT_FLOOR) -> float:
    """``U_ad U_bc / (u_ac u_bd)``."""
    _check_readings(m.as_array(), [m.u_ac, m.u_bd], floor)
    return (m.U_ad * m.U_bc) / (m.u_ac * m.u_bd)


def reconstruct_k4(m8, floor: float = DEFAULT_FLOOR) -> float:
    """``v1 v2 v3 v4 / (u5 u6 v7 v8)`` for readings in configuration order."""
    v = np.asarray(m8, dtype=float).reshape(8)
    _check_readings(v, v[4:], floor)
    return float(np.prod(v[:4]) / np.prod(v[4:]))


def k2_perturbation_bound(m: MeasurementQuad, delta: float) -> float:
    """Lipschitz-type bound on the ``k^2`` change when every reading moves by at most ``delta``.

    Sup of the gradient's l1 norm over the perturbation box times
    ``delta``; valid while ``delta`` is below both ballistic readings.
    """
    U, V, p, q = m.as_array()
    if not delta < min(p, q):
        raise ValueError("delta must be below both ballistic readings")
    Uh, Vh, pl, ql = U + delta, V + delta, p - delta, q - delta
    grad = (Vh + Uh) / (pl * ql) + Uh * Vh * (1.0 / (pl * pl * ql) + 1.0 / (pl * ql * ql))
    return float(grad * delta)


def k2_worst_perturbation(m: MeasurementQuad, delta: float) -> float:
    """Exact worst-case ``k^2`` change over the box; the quotient is monotone in each reading."""
    U, V, p, q = m.as_array()
    base = U * V / (p * q)
    up = (U + delta) * (V + delta) / ((p - delta) * (q - delta))
    lo = max(U - delta, 0.0) * max(V - delta, 0.0) / ((p + delta) * (q + delta))
    return float(max(up - base, base - lo))


# point-wise reconstruction over a grid ---------------------------------------

STATUSES = ("ok", "degenerate-geometry", "underflow", "invalid-measurement")


@dataclass
class ReconstructionGrid:
    """Per-point estimates for a fixed direction pair.

    ``quantity`` is ``"k2"``, ``"k4"`` or ``"s"``. ``truth`` holds the
    phantom value when known. Estimates at non-ok points are NaN.
    """

    points: np.ndarray
    zeta: np.ndarray
    eta: np.ndarray
    estimates: np.ndarray
    status: list
    quantity: str = "k2"
    truth: np.ndarray | None = None
    provenance: str = "analytic-limit"
    shape: tuple | None = None
    extras: dict = field(default_factory=dict)

    @property
    def ok(self) -> np.ndarray:
        return np.array([s == "ok" for s in self.status], dtype=bool)

    def status_counts(self) -> dict:
        return {s: int(sum(1 for t in self.status if t == s)) for s in STATUSES}

    def errors(self) -> tuple[np.ndarray, np.ndarray]:
        """Absolute and relative errors at ok points (relative falls back to absolute where truth is 0)."""
        if self.truth is None:
            raise ValueError("no ground truth attached")
        ok = self.ok
        err = np.abs(self.estimates[ok] - self.truth[ok])
        ref = np.abs(self.truth[ok])
        rel = np.where(ref > 0, err / np.where(ref > 0, ref, 1.0), err)
        return err, rel

    def max_abs_error(self) -> float:
        err, _ = self.errors()
        return float(err.max()) if len(err) else 0.0

    def max_rel_error(self) -> float:
        _, rel = self.errors()
        return float(rel.max()) if len(rel) else 0.0

    def summary(self) -> dict:
        out = {
            "quantity": self.quantity,
            "provenance": self.provenance,
            "n_points": int(len(self.points)),
            "status_counts": self.status_counts(),
        }
        ok = self.ok
        if ok.any():
            est = self.estimates[ok]
            out["estimate_min"] = float(est.min())
            out["estimate_max"] = float(est.max())
        if self.truth is not None:
            out["max_abs_error"] = self.max_abs_error()
            out["max_rel_error"] = self.max_rel_error()
        return out


MeasurementSource = Callable[[int, RayConstruction], object]


def crossing_rays(dom: Domain, x, zeta, eta) -> RayConstruction | None:
    """Ray construction at ``x``, or None when the point is unusable for reconstruction."""
    if not dom.is_interior(x):
        return None
    try:
        rays = construct_rays(dom, x, zeta, eta)
    except DegenerateGeometryError:
        return None
    if min(rays.chord_ac, rays.chord_bd) < MIN_CHORD_FRACTION * dom.radius:
        return None
    if min(np.linalg.norm(rays.x - p) for p in (rays.a, rays.b, rays.c, rays.d)) < 1e-9 * dom.radius:
        return None
    return rays


def reconstruct_field(
    source,
    points,
    zeta,
    eta,
    *,
    domain: Domain | None = None,
    eps: float | None = None,
    quad: QuadratureSpec | None = None,
    floor: float = DEFAULT_FLOOR,
    truth_kernel=None,
) -> ReconstructionGrid:
    """``k^2`` estimate at each point from four readings.

    ``source`` is a :class:`CoefficientSet` (analytic limits, or finite-width
    simulation when ``eps`` is given) or a callable ``(index, rays) ->
    MeasurementQuad``, in which case ``domain`` is required. Points that are
    not interior or whose chords are shorter than five percent of the
    radius are marked ``degenerate-geometry``.
    """
    if isinstance(source, CoefficientSet):
        dom = source.domain
        kernel = source.kernel
        if eps is None:
            def measure(i, rays):
                return analytic_single_scatter(source, rays, quad)
            provenance = "analytic-limit"
        else:
            def measure(i, rays):
                return simulate_single_scatter(source, rays, eps, quad)
            provenance = f"finite-epsilon({eps!r})"
    else:
        if domain is None:
            raise ValueError("a domain is required with a callable measurement source")
        dom, measure, kernel, provenance = domain, source, truth_kernel, "external"
    truth_kernel = truth_kernel or kernel
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    z, e = np.asarray(zeta, dtype=float), np.asarray(eta, dtype=float)
    est = np.full(len(pts), np.nan)
    truth = np.full(len(pts), np.nan) if truth_kernel is not None else None
    status = []
    for i, x in enumerate(pts):
        if truth is not None and dom.contains(x):
            truth[i] = eval_k(truth_kernel, x, e, z, dom) * eval_k(truth_kernel, x, z, e, dom)
        rays = crossing_rays(dom, x, z, e)
        if rays is None:
            status.append("degenerate-geometry")
            continue
        m = measure(i, rays)
        try:
            est[i] = reconstruct_k2(m, floor)
            status.append("ok")
        except UnderflowError:
            status.append("underflow")
        except InvalidMeasurementError:
            status.append("invalid-measurement")
    return ReconstructionGrid(pts, z, e, est, status, "k2", truth, provenance)


def reconstruct_field_mf(
    coeffs: MultiFreqCoefficients,
    points,
    zeta,
    eta,
    *,
    eps: float | None = None,
    quad: QuadratureSpec | None = None,
    floor: float = DEFAULT_FLOOR,
    measure: Callable[[int, RayConstruction], np.ndarray] | None = None,
) -> ReconstructionGrid:
    """``k^4`` estimate at each point from eight two-frequency readings."""
    dom = coeffs.domain
    if measure is None:
        if eps is None:
            def measure(i, rays):
                return analytic_mf_measurements(coeffs, rays, quad)
            provenance = "analytic-limit"
        else:
            def measure(i, rays):
                return simulate_mf_measurements(coeffs, rays, eps, quad)
            provenance = f"finite-epsilon({eps!r})"
    else:
        provenance = "external"
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    z, e = np.asarray(zeta, dtype=float), np.asarray(eta, dtype=float)
    est = np.full(len(pts), np.nan)
    truth = np.full(len(pts), np.nan)
    status = []
    for i, x in enumerate(pts):
        if dom.contains(x):
            truth[i] = eval_k(coeffs.kernel, x, e, z, dom) ** 4
        rays = crossing_rays(dom, x, z, e)
        if rays is None:
            status.append("degenerate-geometry")
            continue
        try:
            est[i] = reconstruct_k4(measure(i, rays), floor)
            status.append("ok")
        except UnderflowError:
            status.append("underflow")
        except InvalidMeasurementError:
            status.append("invalid-measurement")
    return ReconstructionGrid(pts, z, e, est, status, "k4", truth, provenance)


def recover_s_factorized(grid: ReconstructionGrid, kappa, zeta=None, eta=None) -> np.ndarray:
    """Spatial factor ``s(x) = sqrt(k^2) / kappa(zeta . eta)`` at each point."""
    z = grid.zeta if zeta is None else np.asarray(zeta, dtype=float)
    e = grid.eta if eta is None else np.asarray(eta, dtype=float)
    kv = float(np.asarray(kappa(np.clip(float(z @ e), -1.0, 1.0))))
    if not kv > 0:
        raise ValueError("angular profile must be positive at the measured angle")
    k2 = np.asarray(grid.estimates, dtype=float)
    if grid.quantity == "k4":
        k = np.sqrt(np.sqrt(np.maximum(k2, 0.0)))
    else:
        k = np.sqrt(np.maximum(k2, 0.0))
    return np.where(np.isnan(k2), np.nan, k / kv)


# X-ray baseline ---------------------------------------------------------------


def chord_endpoints(dom: Domain, starts, dirs) -> np.ndarray:
    """(M, 2, 3) entry/exit pairs for lines through ``starts`` along ``dirs``."""
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
    dirs = dirs / np.linalg.norm(dirs, axis=-1, keepdims=True)
    back, fwd = chord_lengths(dom, starts, dirs)
    return np.stack([starts - back[:, None] * dirs, starts + fwd[:, None] * dirs], axis=1)


def parallel_chord_families(
    dom: Domain, n_per_axis: int = 16, axes: Sequence[int] = (0, 1, 2), pitch: float | None = None
) -> np.ndarray:
    """Chords parallel to coordinate axes on a centred ``n x n`` lattice of offsets.

    ``pitch`` is the lattice spacing (default: the diameter divided by
    ``n_per_axis``). For ART on a voxel grid the pitch should not exceed
    the voxel size, otherwise whole voxel columns can fall between chords.
    Offsets outside the disk are dropped.
    """
    pitch = 2.0 * dom.radius / n_per_axis if pitch is None else float(pitch)
    g = (np.arange(n_per_axis) + 0.5 - 0.5 * n_per_axis) * pitch / dom.radius
    out = []
    for ax in axes:
        o1, o2 = [i for i in range(3) if i != ax]
        for u in g:
            for v in g:
                if u * u + v * v >= 1.0:
                    continue
                p = dom.center.copy()
                p[o1] += u * dom.radius
                p[o2] += v * dom.radius
                th = np.zeros(3)
                th[ax] = 1.0
                out.append((p, th))
    if not out:
        return np.zeros((0, 2, 3))
    P, T = map(np.array, zip(*out))
    return chord_endpoints(dom, P, T)


def xray_line_integrals(source, chords=None, quad: QuadratureSpec | None = None) -> np.ndarray:
    """Line integrals of absorption, ``-log`` of ballistic readings.

    ``source`` is either an array of ballistic readings, or an absorption
    field / coefficient set whose exact readings along ``chords`` are used.
    """
    if isinstance(source, (CoefficientSet, ScalarField)):
        sigma = source.sigma if isinstance(source, CoefficientSet) else source
        ch = np.asarray(chords, dtype=float).reshape(-1, 2, 3)
        panel = (quad or QuadratureSpec()).panel_length
        if isinstance(source, CoefficientSet):
            panel = (quad or QuadratureSpec.for_domain(source.domain)).panel_length
        readings = np.exp(-optical_depths(sigma, ch[:, 0], ch[:, 1], panel))
    else:
        readings = np.asarray(source, dtype=float)
    if np.any(~np.isfinite(readings)) or np.any(readings <= 0):
        raise InvalidMeasurementError("ballistic readings must be positive")
    return -np.log(readings)


@dataclass(frozen=True)
class VoxelGrid:
    """``n^3`` cubic voxels covering ``[origin, origin + n * size]``."""

    origin: np.ndarray
    size: float
    n: int

    @classmethod
    def covering(cls, dom: Domain, n: int) -> "VoxelGrid":
        return cls(dom.center - dom.radius, 2.0 * dom.radius / n, n)

    @property
    def centers(self) -> np.ndarray:
        g = (np.arange(self.n) + 0.5) * self.size
        return np.stack(np.meshgrid(g, g, g, indexing="ij"), axis=-1) + self.origin


def siddon_system(chords, grid: VoxelGrid) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """CSR matrix of intersection lengths of each chord with each voxel."""
    ch = np.asarray(chords, dtype=float).reshape(-1, 2, 3)
    indptr = [0]
    indices, data = [], []
    n = grid.n
    for p0, p1 in ch:
        seg = p1 - p0
        L = float(np.linalg.norm(seg))
        ts = [np.array([0.0, 1.0])]
        for ax in range(3):
            if abs(seg[ax]) > 1e-15:
                planes = grid.origin[ax] + grid.size * np.arange(n + 1)
                t = (planes - p0[ax]) / seg[ax]
                ts.append(t[(t > 0) & (t < 1)])
        t = np.unique(np.concatenate(ts))
        mid = p0 + 0.5 * (t[:-1] + t[1:])[:, None] * seg
        lens = np.diff(t) * L
        idx = np.floor((mid - grid.origin) / grid.size).astype(np.int64)
        keep = np.all((idx >= 0) & (idx < n), axis=1) & (lens > 0)
        flat = np.ravel_multi_index(tuple(idx[keep].T), (n, n, n)) if keep.any() else np.zeros(0, np.int64)
        order = np.argsort(flat, kind="stable")
        flat, lens_k = flat[order], lens[keep][order]
        uniq, first = np.unique(flat, return_index=True)
        sums = np.add.reduceat(lens_k, first) if len(first) else np.zeros(0)
        indices.append(uniq)
        data.append(sums)
        indptr.append(indptr[-1] + len(uniq))
    return (
        np.asarray(indptr, dtype=np.int64),
        np.concatenate(indices).astype(np.int64) if indices else np.zeros(0, np.int64),
        np.concatenate(data) if data else np.zeros(0),
    )


def art_invert_sigma(
    line_integrals,
    chords,
    grid: VoxelGrid,
    iterations: int = 50,
    relaxation: float = 0.5,
    coverage_threshold: int | None = None,
    nonneg: bool = True,
) -> np.ndarray:
    """Kaczmarz sweeps for voxel absorption from chord line integrals.

    Warns with :class:`UnderdeterminedWarning` when fewer chords than
    ``coverage_threshold`` (default ``n^2``) are supplied; the iterate
    started from zero is still returned.
    """
    b = np.asarray(line_integrals, dtype=float).ravel()
    ch = np.asarray(chords, dtype=float).reshape(-1, 2, 3)
    if len(b) != len(ch):
        raise ValueError("one line integral per chord is required")
    if not 0 < relaxation < 2:
        raise ValueError("relaxation must lie in (0, 2)")
    threshold = grid.n**2 if coverage_threshold is None else coverage_threshold
    if len(ch) < threshold:
        warnings.warn(
            f"{len(ch)} chords is below the coverage threshold {threshold}",
            UnderdeterminedWarning,
            stacklevel=2,
        )
    indptr, indices, data = siddon_system(ch, grid)
    x = np.zeros(grid.n**3)
    _core.kaczmarz(indptr, indices, data, np.ascontiguousarray(b), x, float(relaxation), int(iterations), bool(nonneg))
    return x.reshape((grid.n,) * 3)


__all__ = [
    "MeasurementQuad",
    "ReconstructionGrid",
    "VoxelGrid",
    "analytic_single_scatter",
    "simulate_single_scatter",
    "reconstruct_k2",
    "reconstruct_k4",
    "reconstruct_field",
    "reconstruct_field_mf",
    "recover_s_factorized",
    "k2_perturbation_bound",
    "k2_worst_perturbation",
    "chord_endpoints",
    "parallel_chord_families",
    "xray_line_integrals",
    "siddon_system",
    "art_invert_sigma",
]
