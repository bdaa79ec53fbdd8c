"""Experiment drivers behind the CLI subcommands.

Each driver takes a validated config and a :class:`RunContext`, writes its
artifacts into the context's output directory and returns ``(report,
exit_code)``. Nothing written depends on wall-clock time unless the
context asks for a timestamp, so identical config and seed give
byte-identical files.
"""
from __future__ import annotations

import datetime as _dt
import hashlib
import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import __version__
from .._core import BACKEND
from ..beams import BeamSpec, measure_collision_terms
from ..errors import ConfigError, DegenerateGeometryError, InvalidMeasurementError, UnderdeterminedWarning, UnderflowError
from ..fields import CoefficientSet
from ..geometry import BoundaryPoint
from ..recon import (
    MeasurementQuad,
    VoxelGrid,
    crossing_rays,
    analytic_single_scatter,
    art_invert_sigma,
    parallel_chord_families,
    reconstruct_field,
    reconstruct_field_mf,
    reconstruct_k2,
    reconstruct_k4,
    recover_s_factorized,
)
from ..multifreq import analytic_mf_measurements
from ..transport import optical_depths
from .config import ExperimentConfig
from .io import read_csv, write_csv, write_json, write_pgm

MEASUREMENT_HEADER = [
    "source_x", "source_y", "source_z",
    "source_dir_x", "source_dir_y", "source_dir_z",
    "detector_x", "detector_y", "detector_z",
    "detector_dir_x", "detector_dir_y", "detector_dir_z",
    "point_index", "role", "point_x", "point_y", "point_z",
    "tail_flux_bound", "normalization",
    "ballistic", "single_scatter", "tail_bound", "epsilon", "provenance",
]

ROLES = ("U_ad", "U_bc", "u_ac", "u_bd")


def _hashable_config(raw: dict) -> dict:
    """Config without the output location, which does not affect any result."""
    out = dict(raw)
    if isinstance(out.get("output"), dict):
        out["output"] = {k: v for k, v in out["output"].items() if k != "directory"}
    return out


@dataclass
class RunContext:
    command: str
    out_dir: Path
    raw_config: dict
    seed: int | None = None
    timestamp: bool = False

    def provenance(self) -> dict:
        canon = json.dumps(_hashable_config(self.raw_config), sort_keys=True, separators=(",", ":"), default=str)
        out = {
            "command": self.command,
            "config_sha256": hashlib.sha256(canon.encode("utf-8")).hexdigest(),
            "version": __version__,
            "backend": BACKEND,
            "seed": self.seed,
        }
        if self.timestamp:
            out["timestamp"] = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
        return out

    def path(self, name: str) -> Path:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        return self.out_dir / name


def loglog_slope(x, y) -> float | None:
    """Least-squares slope of log y against log x over positive pairs (None if fewer than two)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    keep = (x > 0) & (y > 0) & np.isfinite(y)
    if keep.sum() < 2:
        return None
    return float(np.polyfit(np.log(x[keep]), np.log(y[keep]), 1)[0])


def _role_beams(rays):
    z, e = rays.zeta, rays.eta
    return {
        "U_ad": (rays.a, z, "U", rays.d, e),
        "U_bc": (rays.b, e, "U", rays.c, z),
        "u_ac": (rays.a, z, "u", rays.c, z),
        "u_bd": (rays.b, e, "u", rays.d, e),
    }


def _limits(coeffs, rays, quad) -> dict:
    m = analytic_single_scatter(coeffs, rays, quad)
    return {"U_ad": m.U_ad, "U_bc": m.U_bc, "u_ac": m.u_ac, "u_bd": m.u_bd}


def _finite_readings(coeffs, rays, eps, quad) -> dict:
    dom = coeffs.domain
    out = {}
    for role, (src, ts, amp, det, td) in _role_beams(rays).items():
        beam = BeamSpec(src, ts, eps, amp)
        out[role] = measure_collision_terms(coeffs, beam, BoundaryPoint.make(dom, det, td), quad)
    return out


def _mid_slice(values, shape):
    if shape is None or 0 in shape:
        return None
    return np.asarray(values, dtype=float).reshape(shape)[:, :, shape[2] // 2].T[::-1]


def _failure_code(status_counts: dict, n: int, limit: float) -> int:
    bad = n - status_counts.get("ok", 0)
    return 3 if n and bad / n > limit else 0


# simulate -------------------------------------------------------------------------


def run_simulate(cfg: ExperimentConfig, ctx: RunContext):
    dom = cfg.build_domain()
    coeffs = cfg.build_coefficients(dom)
    quad = cfg.build_quadrature(dom)
    z, e = cfg.directions_pair()
    pts, _ = cfg.grid_points(dom)
    eps = float(cfg.simulate.epsilon)
    if eps < 0:
        raise ConfigError("simulate.epsilon: must be nonnegative")
    rows, degenerate = [], []
    max_dev = 0.0
    within = True
    for i, x in enumerate(pts):
        rays = crossing_rays(dom, x, z, e)
        if rays is None:
            degenerate.append(i)
            continue
        lim = _limits(coeffs, rays, quad)
        beams = _role_beams(rays)
        reads = _finite_readings(coeffs, rays, eps, quad) if eps > 0 else None
        for role in ROLES:
            src, ts, amp, det, td = beams[role]
            if reads is None:
                ball = lim[role] if amp == "u" else 0.0
                single = lim[role] if amp == "U" else 0.0
                tail = flux = 0.0
                norm = 1.0
                prov = "analytic-limit"
            else:
                br = reads[role]
                ball, single, tail, flux, norm = br.ballistic, br.single_scatter, br.tail_bound, br.tail_flux_bound, br.amplitude_scale
                prov = f"finite-epsilon({eps!r})"
                dev = abs(ball + single - lim[role])
                max_dev = max(max_dev, dev)
                within = within and dev <= tail + 1e-12
            rows.append([
                *src, *ts, *det, *td, i, role, *x, flux, norm,
                ball, single, tail, eps, prov,
            ])
    write_csv(ctx.path("measurements.csv"), MEASUREMENT_HEADER, rows)
    report = {
        "n_points": int(len(pts)),
        "n_rows": len(rows),
        "degenerate_points": degenerate,
        "epsilon": eps,
        "max_deviation_from_limit": max_dev,
        "deviation_within_tail_bound": within,
        "provenance": ctx.provenance(),
    }
    write_json(ctx.path("simulate.json"), report)
    return report, 0


# reconstruct ------------------------------------------------------------------------


def _quads_from_csv(path: str) -> tuple[np.ndarray, list, str]:
    header, rows = read_csv(path)
    missing = [c for c in ("point_index", "role", "point_x", "ballistic", "single_scatter") if c not in header]
    if missing:
        raise ConfigError(f"{path}: missing column(s) {', '.join(missing)}")
    by_point: dict[int, dict] = {}
    coords: dict[int, list] = {}
    prov = "external"
    for r in rows:
        i = int(r["point_index"])
        by_point.setdefault(i, {})[r["role"]] = float(r["ballistic"]) + float(r["single_scatter"])
        coords[i] = [float(r["point_x"]), float(r["point_y"]), float(r["point_z"])]
        prov = r.get("provenance", prov)
    idx = sorted(by_point)
    quads = []
    for i in idx:
        d = by_point[i]
        if set(d) != set(ROLES):
            raise InvalidMeasurementError(f"{path}: point {i} lacks some of {', '.join(ROLES)}")
        quads.append(MeasurementQuad(d["U_ad"], d["U_bc"], d["u_ac"], d["u_bd"], prov))
    pts = np.array([coords[i] for i in idx]).reshape(-1, 3)
    return pts, quads, prov


def _write_points(ctx, name, grid, label, s_est=None):
    header = ["point_index", "x", "y", "z", "status", f"{label}_estimate", f"{label}_truth", "abs_error", "rel_error"]
    if s_est is not None:
        header.append("s_estimate")
    rows = []
    for i, (x, st) in enumerate(zip(grid.points, grid.status)):
        est = grid.estimates[i]
        tr = grid.truth[i] if grid.truth is not None else float("nan")
        if st == "ok" and np.isfinite(tr):
            ae = abs(est - tr)
            re = ae / abs(tr) if tr != 0 else ae
        else:
            ae = re = float("nan")
        row = [i, *x, st, est, tr, ae, re]
        if s_est is not None:
            row.append(s_est[i])
        rows.append(row)
    write_csv(ctx.path(name), header, rows)


def _write_slices(ctx, grid, shape, label) -> dict:
    out = {}
    est = _mid_slice(np.where(grid.ok, grid.estimates, np.nan), shape)
    if est is None:
        return out
    out[f"{label}_slice.pgm"] = write_pgm(ctx.path(f"{label}_slice.pgm"), est)
    if grid.truth is not None:
        name = f"{label}_truth_slice.pgm"
        out[name] = write_pgm(ctx.path(name), _mid_slice(grid.truth, shape))
    return out


def run_reconstruct(cfg: ExperimentConfig, ctx: RunContext):
    dom = cfg.build_domain()
    coeffs = cfg.build_coefficients(dom)
    quad = cfg.build_quadrature(dom)
    z, e = cfg.directions_pair()
    rc = cfg.reconstruct
    floor = float(rc.floor)
    if rc.source == "file":
        if not rc.measurements:
            raise ConfigError("reconstruct.measurements: required when source = 'file'")
        pts, quads, _ = _quads_from_csv(rc.measurements)
        shape = None
        grid = reconstruct_field(
            lambda i, rays: quads[i], pts, z, e, domain=dom, floor=floor, truth_kernel=coeffs.kernel
        )
        grid.provenance = quads[0].provenance if quads else "external"
    elif rc.source in ("analytic", "finite-epsilon"):
        pts, shape = cfg.grid_points(dom)
        eps = None if rc.source == "analytic" else float(rc.epsilon)
        if eps is not None and not eps > 0:
            raise ConfigError("reconstruct.epsilon: must be positive")
        grid = reconstruct_field(coeffs, pts, z, e, eps=eps, quad=quad, floor=floor)
    else:
        raise ConfigError(f"reconstruct.source: unknown source {rc.source!r}")
    s_est = recover_s_factorized(grid, coeffs.kernel.angular) if len(grid.points) else np.zeros(0)
    _write_points(ctx, "points.csv", grid, "k2", s_est)
    summary = grid.summary() if len(grid.points) else {"quantity": "k2", "n_points": 0, "status_counts": {}}
    summary["slices"] = _write_slices(ctx, grid, shape, "k2")
    summary["provenance"] = ctx.provenance()
    write_json(ctx.path("summary.json"), summary)
    return summary, _failure_code(summary["status_counts"], len(grid.points), rc.max_failure_fraction)


def run_reconstruct_mf(cfg: ExperimentConfig, ctx: RunContext):
    dom = cfg.build_domain()
    mf = cfg.build_multifreq(dom)
    quad = cfg.build_quadrature(dom)
    z, e = cfg.directions_pair()
    rc = cfg.reconstruct
    if rc.source == "file":
        raise ConfigError("reconstruct.source: two-frequency runs take 'analytic' or 'finite-epsilon'")
    if rc.source not in ("analytic", "finite-epsilon"):
        raise ConfigError(f"reconstruct.source: unknown source {rc.source!r}")
    pts, shape = cfg.grid_points(dom)
    eps = None if rc.source == "analytic" else float(rc.epsilon)
    grid = reconstruct_field_mf(mf, pts, z, e, eps=eps, quad=quad, floor=float(rc.floor))
    _write_points(ctx, "points.csv", grid, "k4")
    summary = grid.summary() if len(grid.points) else {"quantity": "k4", "n_points": 0, "status_counts": {}}
    if mf.sigma_e == mf.sigma_f and eps is None and len(pts):
        single = CoefficientSet(dom, mf.sigma_e, mf.kernel)
        g2 = reconstruct_field(single, pts, z, e, quad=quad, floor=float(rc.floor))
        both = grid.ok & g2.ok
        diff = np.abs(grid.estimates[both] - g2.estimates[both] ** 2)
        ref = np.abs(grid.estimates[both])
        rel = np.where(ref > 0, diff / np.where(ref > 0, ref, 1.0), diff)
        summary["max_rel_diff_vs_k2_squared"] = float(rel.max()) if len(rel) else 0.0
    summary["slices"] = _write_slices(ctx, grid, shape, "k4")
    summary["provenance"] = ctx.provenance()
    write_json(ctx.path("summary.json"), summary)
    return summary, _failure_code(summary["status_counts"], len(grid.points), rc.max_failure_fraction)


# convergence --------------------------------------------------------------------------


def validate_epsilons(eps_list) -> list[float]:
    eps = [float(v) for v in eps_list]
    if len(eps) < 3:
        raise ConfigError("convergence.epsilons: at least three values are required")
    if any(v <= 0 for v in eps):
        raise ConfigError("convergence.epsilons: values must be positive")
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise ConfigError("convergence.epsilons: values must be strictly decreasing")
    return eps


def _monotone(seq, strict: bool) -> bool:
    return all((b < a) if strict else (b <= a) for a, b in zip(seq, seq[1:]))


def convergence_study(coeffs, rays, eps_list, quad) -> dict:
    """Finite-width readings against their narrow-beam limits for each width."""
    lim = _limits(coeffs, rays, quad)
    table = []
    ball_err, single_err, flux = [], [], []
    for eps in eps_list:
        reads = _finite_readings(coeffs, rays, eps, quad)
        for role in ROLES:
            br = reads[role]
            err = abs(br.total - lim[role])
            table.append({
                "epsilon": eps, "role": role, "reading": br.total, "limit": lim[role],
                "abs_error": err, "rel_error": err / lim[role] if lim[role] else err,
                "tail_bound": br.tail_bound, "tail_flux_bound": br.tail_flux_bound,
            })
        ball_err.append(max(abs(reads[r].total - lim[r]) for r in ("u_ac", "u_bd")))
        single_err.append(max(abs(reads[r].total - lim[r]) for r in ("U_ad", "U_bc")))
        flux.append(max(reads[r].tail_flux_bound for r in ("U_ad", "U_bc")))
    return {
        "table": table,
        "ballistic_error": ball_err,
        "single_scatter_error": single_err,
        "tail_flux_bound": flux,
        "ballistic_strictly_decreasing": _monotone(ball_err, True),
        "ballistic_nonincreasing": _monotone(ball_err, False),
        "single_scatter_strictly_decreasing": _monotone(single_err, True),
        "single_scatter_nonincreasing": _monotone(single_err, False),
        "ballistic_slope": loglog_slope(eps_list, ball_err),
        "single_scatter_slope": loglog_slope(eps_list, single_err),
        "tail_flux_slope": loglog_slope(eps_list, flux),
    }


def run_convergence(cfg: ExperimentConfig, ctx: RunContext):
    dom = cfg.build_domain()
    coeffs = cfg.build_coefficients(dom)
    quad = cfg.build_quadrature(dom)
    z, e = cfg.directions_pair()
    eps_list = validate_epsilons(cfg.convergence.epsilons)
    x = np.asarray(cfg.convergence.point, dtype=float)
    rays = crossing_rays(dom, x, z, e)
    if rays is None:
        raise DegenerateGeometryError("convergence.point: no usable crossing for the configured directions")
    study = convergence_study(coeffs, rays, eps_list, quad)
    cols = ["epsilon", "role", "reading", "limit", "abs_error", "rel_error", "tail_bound", "tail_flux_bound"]
    write_csv(ctx.path("convergence.csv"), cols, [[r[c] for c in cols] for r in study["table"]])
    report = {k: v for k, v in study.items() if k != "table"}
    report["epsilons"] = eps_list
    report["point"] = x
    report["provenance"] = ctx.provenance()
    write_json(ctx.path("convergence.json"), report)
    return report, 0


# stability ----------------------------------------------------------------------------


def _require_seed(ctx: RunContext) -> int:
    if ctx.seed is None:
        raise ConfigError("a seed is required for stochastic runs (--seed or top-level seed)")
    return int(ctx.seed)


def _noise_sweep(clean: np.ndarray, xi: np.ndarray, deltas, estimator, floor) -> list[dict]:
    """Sup-error of ``estimator`` over points for readings ``clean + delta * xi``."""
    base = np.array([_safe(estimator, c, floor) for c in clean])
    out = []
    for d in deltas:
        errs, flagged = [], 0
        for c, n, b in zip(clean, xi, base):
            if not np.isfinite(b):
                continue
            v = _safe(estimator, c + d * n, floor)
            if not np.isfinite(v):
                flagged += 1
                continue
            errs.append(abs(v - b))
        sup = float(max(errs)) if errs else float("nan")
        out.append({"delta": float(d), "sup_error": sup, "flagged": flagged,
                    "ratio": sup / d if d > 0 and np.isfinite(sup) else None})
    return out


def _safe(estimator, values, floor) -> float:
    try:
        return float(estimator(values, floor))
    except (UnderflowError, InvalidMeasurementError):
        return float("nan")


def _sweep_summary(rows) -> dict:
    pos = [r for r in rows if r["delta"] > 0 and r["ratio"] is not None]
    ratios = [r["ratio"] for r in pos]
    return {
        "rows": rows,
        "slope": loglog_slope([r["delta"] for r in pos], [r["sup_error"] for r in pos]),
        "constant": max(ratios) if ratios else None,
        "constant_spread": (max(ratios) / min(ratios)) if ratios and min(ratios) > 0 else None,
        "flagged_total": int(sum(r["flagged"] for r in rows)),
    }


def _art_setup(cfg: ExperimentConfig, dom):
    a = cfg.art
    if a.n_voxels < 1 or a.chords_per_axis < 1 or a.iterations < 0:
        raise ConfigError("art: n_voxels, chords_per_axis must be positive and iterations nonnegative")
    vg = VoxelGrid.covering(dom, int(a.n_voxels))
    pitch = a.pitch if a.pitch > 0 else min(2.0 * dom.radius / a.chords_per_axis, 0.95 * vg.size)
    chords = parallel_chord_families(dom, int(a.chords_per_axis), pitch=pitch)
    return vg, chords, pitch


def _art_run(cfg, vg, chords, readings):
    """ART from ballistic readings; nonpositive readings are dropped and counted."""
    a = cfg.art
    ok = np.isfinite(readings) & (readings > 0)
    b = -np.log(readings[ok])
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", UnderdeterminedWarning)
        x = art_invert_sigma(
            b, chords[ok], vg, iterations=int(a.iterations), relaxation=float(a.relaxation),
            coverage_threshold=int(a.coverage_threshold) or None,
        )
    under = any(issubclass(w.category, UnderdeterminedWarning) for w in caught)
    return x, int((~ok).sum()), under


def run_stability(cfg: ExperimentConfig, ctx: RunContext):
    seed = _require_seed(ctx)
    dom = cfg.build_domain()
    coeffs = cfg.build_coefficients(dom)
    quad = cfg.build_quadrature(dom)
    z, e = cfg.directions_pair()
    deltas = [float(d) for d in cfg.stability.deltas]
    if not deltas or any(d < 0 for d in deltas):
        raise ConfigError("stability.deltas: need a nonempty list of nonnegative values")
    floor = float(cfg.reconstruct.floor)
    pts, _ = cfg.grid_points(dom)
    rng = np.random.default_rng(seed)

    rays_list = [crossing_rays(dom, x, z, e) for x in pts]
    good = [r for r in rays_list if r is not None]
    clean = np.array([analytic_single_scatter(coeffs, r, quad).as_array() for r in good]).reshape(-1, 4)
    xi = rng.uniform(-1.0, 1.0, clean.shape)
    k2 = _sweep_summary(_noise_sweep(clean, xi, deltas, lambda v, f: reconstruct_k2(MeasurementQuad.from_array(v, "noisy"), f), floor))
    report = {"k2": k2, "degenerate_points": int(len(rays_list) - len(good)), "deltas": deltas}
    csv_rows = [["k2", r["delta"], r["sup_error"], r["ratio"], r["flagged"]] for r in k2["rows"]]

    if cfg.has_multifreq():
        mf = cfg.build_multifreq(dom)
        clean8 = np.array([analytic_mf_measurements(mf, r, quad) for r in good]).reshape(-1, 8)
        xi8 = rng.uniform(-1.0, 1.0, clean8.shape)
        k4 = _sweep_summary(_noise_sweep(clean8, xi8, deltas, reconstruct_k4, floor))
        report["k4"] = k4
        csv_rows += [["k4", r["delta"], r["sup_error"], r["ratio"], r["flagged"]] for r in k4["rows"]]

    vg, chords, pitch = _art_setup(cfg, dom)
    alpha = np.exp(-optical_depths(coeffs.sigma, chords[:, 0], chords[:, 1], quad.panel_length))
    xic = rng.uniform(-1.0, 1.0, alpha.shape)
    interior = np.linalg.norm(vg.centers - dom.center, axis=-1) < 0.8 * dom.radius
    truth = coeffs.sigma(vg.centers.reshape(-1, 3)).reshape(vg.centers.shape[:-1])
    ref, _, _ = _art_run(cfg, vg, chords, alpha)
    art_rows = []
    for d in deltas:
        x, dropped, under = _art_run(cfg, vg, chords, alpha + d * xic)
        noise_err = float(np.abs(x - ref)[interior].max())
        art_rows.append({
            "delta": d, "sup_error": noise_err,
            "sup_error_vs_truth": float(np.abs(x - truth)[interior].max()),
            "dropped_chords": dropped, "underdetermined": under,
            "ratio": noise_err / d if d > 0 else None,
        })
        csv_rows.append(["art_sigma", d, noise_err, noise_err / d if d > 0 else None, dropped])
    pos = [r for r in art_rows if r["delta"] > 0]
    report["art_baseline"] = {
        "rows": art_rows,
        "slope": loglog_slope([r["delta"] for r in pos], [r["sup_error"] for r in pos]),
        "n_chords": int(len(chords)),
        "pitch": pitch,
        "noiseless_sup_error_vs_truth": float(np.abs(ref - truth)[interior].max()),
    }
    report["provenance"] = ctx.provenance()
    write_csv(ctx.path("stability.csv"), ["channel", "delta", "sup_error", "ratio", "flagged"], csv_rows)
    write_json(ctx.path("stability.json"), report)
    return report, 0


# baseline -----------------------------------------------------------------------------


def run_baseline(cfg: ExperimentConfig, ctx: RunContext):
    dom = cfg.build_domain()
    coeffs = cfg.build_coefficients(dom)
    quad = cfg.build_quadrature(dom)
    vg, chords, pitch = _art_setup(cfg, dom)
    delta = float(cfg.art.delta)
    if delta < 0:
        raise ConfigError("art.delta: must be nonnegative")
    alpha = np.exp(-optical_depths(coeffs.sigma, chords[:, 0], chords[:, 1], quad.panel_length))
    if delta > 0:
        rng = np.random.default_rng(_require_seed(ctx))
        alpha = alpha + delta * rng.uniform(-1.0, 1.0, alpha.shape)
    x, dropped, under = _art_run(cfg, vg, chords, alpha)
    centers = vg.centers
    truth = coeffs.sigma(centers.reshape(-1, 3)).reshape(centers.shape[:-1])
    interior = np.linalg.norm(centers - dom.center, axis=-1) < 0.8 * dom.radius
    n = vg.n
    rows = []
    for idx in np.ndindex(n, n, n):
        rows.append([*idx, *centers[idx], x[idx], truth[idx], bool(interior[idx])])
    write_csv(ctx.path("voxels.csv"), ["i", "j", "k", "x", "y", "z", "sigma_estimate", "sigma_truth", "interior"], rows)
    slices = {
        "sigma_slice.pgm": write_pgm(ctx.path("sigma_slice.pgm"), x[:, :, n // 2].T[::-1]),
        "sigma_truth_slice.pgm": write_pgm(ctx.path("sigma_truth_slice.pgm"), truth[:, :, n // 2].T[::-1]),
    }
    report = {
        "n_chords": int(len(chords)),
        "pitch": pitch,
        "delta": delta,
        "dropped_chords": dropped,
        "underdetermined": under,
        "interior_mean": float(x[interior].mean()),
        "interior_truth_mean": float(truth[interior].mean()),
        "interior_max_abs_error": float(np.abs(x - truth)[interior].max()),
        "slices": slices,
        "provenance": ctx.provenance(),
    }
    write_json(ctx.path("baseline.json"), report)
    return report, 0


DRIVERS = {
    "simulate": run_simulate,
    "reconstruct": run_reconstruct,
    "reconstruct-mf": run_reconstruct_mf,
    "convergence": run_convergence,
    "stability": run_stability,
    "baseline": run_baseline,
}
