import warnings

import numpy as np
import pytest
from conftest import random_interior
from hypothesis import given, settings
from hypothesis import strategies as st

from rtescatter.errors import InvalidMeasurementError, UnderdeterminedWarning, UnderflowError
from rtescatter.fields import Blob, BlobField, CoefficientSet, ConstantField, HenyeyGreenstein, ScatteringKernel
from rtescatter.geometry import Domain, construct_rays
from rtescatter.multifreq import MultiFreqCoefficients, analytic_mf_measurements
from rtescatter.recon import (
    MeasurementQuad,
    VoxelGrid,
    analytic_single_scatter,
    art_invert_sigma,
    chord_endpoints,
    crossing_rays,
    k2_perturbation_bound,
    k2_worst_perturbation,
    parallel_chord_families,
    reconstruct_field,
    reconstruct_field_mf,
    reconstruct_k2,
    reconstruct_k4,
    recover_s_factorized,
    siddon_system,
    xray_line_integrals,
)
from rtescatter.transport import attenuation

INV_4PI = 1.0 / (4.0 * np.pi)
E1, E2 = np.array([1.0, 0, 0]), np.array([0, 1.0, 0])

positive = st.floats(min_value=1e-3, max_value=10.0, allow_nan=False)


def grid_points(n=5, extent=0.5):
    g = np.linspace(-extent, extent, n)
    return np.stack(np.meshgrid(g, g, g, indexing="ij"), axis=-1).reshape(-1, 3)


def test_quad_without_absorption(ball):
    coeffs = CoefficientSet(ball, ConstantField(0.0), ScatteringKernel(ConstantField(0.0)))
    rays = construct_rays(ball, [0.1, 0.1, 0], E1, E2)
    m = analytic_single_scatter(coeffs, rays)
    assert m.u_ac == 1.0 and m.u_bd == 1.0
    assert m.U_ad == 0.0 and m.U_bc == 0.0


def test_quad_constant_closed_form(constant_coeffs, ball):
    m = analytic_single_scatter(constant_coeffs, construct_rays(ball, [0, 0, 0], E1, E2))
    assert m.u_ac == pytest.approx(np.exp(-1.0), rel=1e-14)
    assert m.U_ad == pytest.approx(np.exp(-1.0) * 0.2 * INV_4PI, rel=1e-14)
    assert m.U_bc == pytest.approx(m.U_ad, rel=1e-14)


def test_k2_trivial_cases():
    assert reconstruct_k2(MeasurementQuad(1, 1, 1, 1)) == 1.0
    q = 0.37
    e = np.exp(-1.0)
    assert reconstruct_k2(MeasurementQuad(e * q, e * q, e, e)) == pytest.approx(q * q, rel=1e-15)


def test_k2_rejects_bad_readings():
    with pytest.raises(InvalidMeasurementError):
        reconstruct_k2(MeasurementQuad(-1e-3, 1, 1, 1))
    with pytest.raises(InvalidMeasurementError):
        reconstruct_k2(MeasurementQuad(np.nan, 1, 1, 1))
    with pytest.raises(UnderflowError):
        reconstruct_k2(MeasurementQuad(1, 1, 1e-13, 1))
    assert reconstruct_k2(MeasurementQuad(1, 1, 1e-13, 1), floor=1e-14) == pytest.approx(1e13)


def test_k4_trivial_and_underflow():
    assert reconstruct_k4(np.ones(8)) == 1.0
    with pytest.raises(UnderflowError):
        reconstruct_k4([1, 1, 1, 1, 1, 1, 0, 1])


def test_exact_cancellation_random_phantom(ball, rng):
    for trial in range(5):
        blobs = [Blob(rng.uniform(-0.5, 0.5, 3), rng.uniform(0.15, 0.4), rng.uniform(0, 3)) for _ in range(3)]
        sigma = BlobField(blobs, background=rng.uniform(0.6, 1.5))
        kernel = ScatteringKernel(BlobField([Blob([0, 0, 0], 0.3, 0.2)], background=0.1), HenyeyGreenstein(0.4))
        coeffs = CoefficientSet(ball, sigma, kernel)
        for x in random_interior(rng, 4, margin=0.7):
            rays = construct_rays(ball, x, E1, [0, 0.6, 0.8])
            k2 = reconstruct_k2(analytic_single_scatter(coeffs, rays))
            truth = coeffs.k(x, rays.zeta, rays.eta) ** 2
            assert k2 == pytest.approx(truth, rel=1e-10)


def test_swap_invariance(hg_coeffs, ball):
    x = [0.2, -0.1, 0.1]
    z, e = E1, np.array([0, 0.6, 0.8])
    k1 = reconstruct_k2(analytic_single_scatter(hg_coeffs, construct_rays(ball, x, z, e)))
    k2 = reconstruct_k2(analytic_single_scatter(hg_coeffs, construct_rays(ball, x, e, z)))
    assert k1 == pytest.approx(k2, rel=1e-12)


@given(positive, positive, positive, positive, positive)
def test_scaling_equivariance(U, V, p, q, lam):
    base = reconstruct_k2(MeasurementQuad(U, V, p, q), floor=0)
    scaled_U = reconstruct_k2(MeasurementQuad(lam * U, lam * V, p, q), floor=0)
    scaled_u = reconstruct_k2(MeasurementQuad(U, V, lam * p, lam * q), floor=0)
    assert scaled_U == pytest.approx(lam**2 * base, rel=1e-12)
    assert scaled_u == pytest.approx(base / lam**2, rel=1e-12)


@given(positive, positive, positive, positive)
def test_k2_symmetric_under_chord_relabeling(U, V, p, q):
    assert reconstruct_k2(MeasurementQuad(U, V, p, q), floor=0) == reconstruct_k2(
        MeasurementQuad(V, U, q, p), floor=0
    )


@settings(max_examples=50)
@given(positive, positive, st.floats(0.1, 1.0), st.floats(0.1, 1.0), st.floats(1e-6, 0.49))
def test_perturbation_bound_dominates_worst_case(U, V, p, q, frac):
    m = MeasurementQuad(U, V, p, q)
    delta = frac * min(p, q)
    assert k2_worst_perturbation(m, delta) <= k2_perturbation_bound(m, delta) * (1 + 1e-12)


def test_worst_perturbation_linear_in_small_delta():
    m = MeasurementQuad(0.3, 0.2, 0.5, 0.4)
    w = [k2_worst_perturbation(m, d) for d in (1e-6, 1e-5, 1e-4)]
    assert w[1] / w[0] == pytest.approx(10, rel=1e-3)
    assert w[2] / w[1] == pytest.approx(10, rel=1e-2)


def test_k4_matches_k2_squared_when_degenerate(ball, blob_sigma):
    kernel = ScatteringKernel(ConstantField(0.2), HenyeyGreenstein(-0.3))
    mfc = MultiFreqCoefficients(ball, blob_sigma, blob_sigma, kernel)
    rays = construct_rays(ball, [0.05, 0.1, -0.2], E1, [0, 0.6, 0.8])
    k4 = reconstruct_k4(analytic_mf_measurements(mfc, rays))
    k2 = reconstruct_k2(analytic_single_scatter(mfc.excitation(), rays))
    assert k4 == pytest.approx(k2**2, rel=1e-10)
    assert k4 == pytest.approx(mfc.k(rays.x, rays.zeta, rays.eta) ** 4, rel=1e-12)


def test_field_constant_phantom(constant_coeffs):
    grid = reconstruct_field(constant_coeffs, grid_points(), E1, E2)
    assert grid.ok.all()
    assert grid.max_rel_error() <= 1e-10
    np.testing.assert_allclose(grid.truth, (0.2 * INV_4PI) ** 2)


def test_field_zero_kernel_reports_zero(ball):
    coeffs = CoefficientSet(ball, ConstantField(0.5), ScatteringKernel(ConstantField(0.0)))
    grid = reconstruct_field(coeffs, grid_points(3), E1, E2)
    assert np.all(grid.estimates[grid.ok] == 0.0)


def test_field_statuses(constant_coeffs):
    pts = [[0, 0, 0], [0.999999, 0, 0], [2.0, 0, 0]]
    grid = reconstruct_field(constant_coeffs, pts, E1, E2)
    assert grid.status == ["ok", "degenerate-geometry", "degenerate-geometry"]
    assert np.isnan(grid.estimates[1:]).all()
    assert grid.status_counts()["degenerate-geometry"] == 2


def test_field_underflow_status(ball):
    coeffs = CoefficientSet(ball, ConstantField(20.0), ScatteringKernel(ConstantField(0.1)))
    grid = reconstruct_field(coeffs, [[0, 0, 0]], E1, E2)
    assert grid.status == ["underflow"]


def test_field_external_source(constant_coeffs, ball):
    def measure(i, rays):
        return MeasurementQuad(-1.0, 1.0, 1.0, 1.0, "external")

    grid = reconstruct_field(measure, [[0, 0, 0]], E1, E2, domain=ball)
    assert grid.status == ["invalid-measurement"]
    with pytest.raises(ValueError):
        reconstruct_field(measure, [[0, 0, 0]], E1, E2)


def test_crossing_rays_rejects_short_chords(ball):
    assert crossing_rays(ball, [0, 0, 0], E1, E2) is not None
    assert crossing_rays(ball, [0, 0, 0.9998], E1, E2) is None
    assert crossing_rays(ball, [0, 0, 0], E1, E1) is None


def test_field_mf(ball):
    mfc = MultiFreqCoefficients(ball, ConstantField(0.5), ConstantField(0.3), ScatteringKernel(ConstantField(0.2)))
    grid = reconstruct_field_mf(mfc, grid_points(3), E1, E2)
    assert grid.ok.all() and grid.max_rel_error() <= 1e-10


def test_recover_s(constant_coeffs):
    grid = reconstruct_field(constant_coeffs, grid_points(3), E1, E2)
    s = recover_s_factorized(grid, ScatteringKernel(ConstantField(1.0)).profile)
    np.testing.assert_allclose(s, 0.2, rtol=1e-12)
    grid.estimates[:] = 0.0
    np.testing.assert_array_equal(recover_s_factorized(grid, np.vectorize(lambda mu: INV_4PI)), 0.0)


def test_recover_s_hg_profile():
    hg = HenyeyGreenstein(0.5)
    assert float(hg(0.0)) == pytest.approx(0.04270, abs=1e-5)


@pytest.mark.slow
def test_finite_width_field_error(constant_coeffs):
    errs = []
    for eps in (0.1, 0.05):
        grid = reconstruct_field(constant_coeffs, grid_points(3, 0.4), E1, E2, eps=eps)
        errs.append(grid.max_rel_error())
    assert errs[0] <= 0.15
    assert errs[1] < errs[0]


# X-ray baseline


def test_xray_line_integrals(ball, blob_sigma):
    ch = np.array([[[-1, 0, 0], [1, 0, 0]], [[0, -1, 0], [0, 1, 0]]], dtype=float)
    np.testing.assert_allclose(xray_line_integrals(ConstantField(0.0), ch), 0.0)
    np.testing.assert_allclose(xray_line_integrals(ConstantField(0.5), ch), 1.0, rtol=1e-14)
    oracle = [-np.log(attenuation(blob_sigma, p, q, domain=ball)) for p, q in ch]
    np.testing.assert_allclose(xray_line_integrals(blob_sigma, ch), oracle, atol=1e-8)
    with pytest.raises(InvalidMeasurementError):
        xray_line_integrals(np.array([0.5, 0.0]))


def test_siddon_lengths_sum_to_chord(ball, rng):
    grid = VoxelGrid.covering(ball, 7)
    starts = random_interior(rng, 20)
    dirs = rng.normal(size=(20, 3))
    ch = chord_endpoints(ball, starts, dirs)
    indptr, indices, data = siddon_system(ch, grid)
    sums = np.add.reduceat(data, indptr[:-1])
    np.testing.assert_allclose(sums, np.linalg.norm(ch[:, 1] - ch[:, 0], axis=1), rtol=1e-12)
    assert np.all(np.diff(indptr) > 0)


def test_siddon_axis_aligned_voxel_path():
    grid = VoxelGrid(np.zeros(3), 1.0, 3)
    ch = np.array([[[0.0, 0.5, 0.5], [3.0, 0.5, 0.5]]])
    indptr, indices, data = siddon_system(ch, grid)
    np.testing.assert_array_equal(indices, [0, 9, 18])
    np.testing.assert_allclose(data, 1.0)


def test_art_zero_data(ball):
    grid = VoxelGrid.covering(ball, 5)
    ch = parallel_chord_families(ball, 6)
    np.testing.assert_array_equal(art_invert_sigma(np.zeros(len(ch)), ch, grid), 0.0)


def test_art_constant_phantom(ball):
    n = 17
    grid = VoxelGrid.covering(ball, n)
    ch = parallel_chord_families(ball, 22, pitch=0.95 * grid.size)
    b = xray_line_integrals(ConstantField(0.5), ch)
    sig = art_invert_sigma(b, ch, grid)
    inner = np.linalg.norm(grid.centers, axis=-1) < 0.8
    assert abs(sig[inner].mean() - 0.5) <= 0.05 * 0.5


def test_art_single_chord_warns(ball):
    grid = VoxelGrid.covering(ball, 5)
    ch = parallel_chord_families(ball, 1, axes=(0,))
    with pytest.warns(UnderdeterminedWarning):
        art_invert_sigma([1.0], ch, grid)


def test_art_argument_checks(ball):
    grid = VoxelGrid.covering(ball, 3)
    ch = parallel_chord_families(ball, 4)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UnderdeterminedWarning)
        with pytest.raises(ValueError):
            art_invert_sigma(np.zeros(len(ch) + 1), ch, grid)
        with pytest.raises(ValueError):
            art_invert_sigma(np.zeros(len(ch)), ch, grid, relaxation=2.5)


def test_small_domain_units():
    dom = Domain(np.array([1.0, 2.0, 3.0]), 0.01)
    coeffs = CoefficientSet(dom, ConstantField(25.0), ScatteringKernel(ConstantField(18.0)))
    rays = construct_rays(dom, dom.center + [0.001, 0, 0], E1, E2)
    k2 = reconstruct_k2(analytic_single_scatter(coeffs, rays))
    assert k2 == pytest.approx((18 * INV_4PI) ** 2, rel=1e-12)
