import numpy as np
import pytest

from rtescatter.beams import (
    BeamSpec,
    _bump_line,
    bump,
    calibration_constant,
    inflow_flux,
    measure_collision_terms,
)
from rtescatter.errors import DegenerateGeometryError, DomainError
from rtescatter.fields import CoefficientSet, ConstantField, ScatteringKernel
from rtescatter.geometry import BoundaryPoint, Domain, construct_rays
from rtescatter.transport import attenuation


def test_bump_shape():
    assert bump(0.0) == 1.0
    assert bump(1.0) == 0.0 and bump(-1.5) == 0.0
    r = np.linspace(0, 0.99, 50)
    assert np.all(np.diff(bump(r)) < 0)


def test_bump_line_integral_matches_brute_force():
    h = 0.4
    s = np.linspace(-1, 1, 200001)
    ref = np.sum(bump(np.sqrt(s**2 + h**2))) * (s[1] - s[0])
    assert _bump_line(h)[0] == pytest.approx(ref, rel=1e-6)


def test_beam_spec_validation(ball):
    with pytest.raises(ValueError):
        BeamSpec([-1, 0, 0], [1, 0, 0], 0.0)
    with pytest.raises(ValueError):
        BeamSpec([-1, 0, 0], [1, 0, 0], 0.1, amplitude="x")
    with pytest.raises(DomainError):
        BeamSpec([-1, 0, 0], [-1, 0, 0], 0.1).validate(ball)
    BeamSpec([-1, 0, 0], [1, 0, 0], 0.1).validate(ball)


def test_ballistic_u_beam_exact(ball, blob_sigma):
    coeffs = CoefficientSet(ball, blob_sigma, ScatteringKernel(ConstantField(0.0)))
    rays = construct_rays(ball, [0.1, 0.2, 0.0], [1, 0, 0], [0, 1, 0])
    beam = BeamSpec(rays.a, rays.zeta, 0.05)
    res = measure_collision_terms(coeffs, beam, BoundaryPoint.make(ball, rays.c, rays.zeta))
    assert res.single_scatter == 0.0
    assert res.tail_bound == 0.0
    assert res.ballistic == pytest.approx(attenuation(blob_sigma, rays.a, rays.c, domain=ball), rel=1e-12)


def test_offline_detector_reads_zero(constant_coeffs, ball):
    rays = construct_rays(ball, [0.0, 0.0, 0.0], [1, 0, 0], [0, 1, 0])
    beam = BeamSpec(rays.a, rays.zeta, 0.05)
    # detector far from the beam tube, looking along a chord that never meets it
    det = BoundaryPoint.make(ball, [0, 0.8, 0.6], [0, 0, 1])
    res = measure_collision_terms(constant_coeffs, beam, det)
    assert res.ballistic == 0.0
    assert res.single_scatter == 0.0


def test_detector_must_be_outflow(constant_coeffs, ball):
    beam = BeamSpec([-1, 0, 0], [1, 0, 0], 0.05)
    with pytest.raises(DomainError):
        measure_collision_terms(constant_coeffs, beam, BoundaryPoint.make(ball, [1, 0, 0], [-1, 0, 0]))


def test_collinear_U_beam_needs_normalization(constant_coeffs, ball):
    beam = BeamSpec([-1, 0, 0], [1, 0, 0], 0.05, "U")
    with pytest.raises(DegenerateGeometryError):
        calibration_constant(ball, beam, [1, 0, 0], [1, 0, 0])
    fixed = BeamSpec([-1, 0, 0], [1, 0, 0], 0.05, "U", normalization=1.0)
    res = measure_collision_terms(constant_coeffs, fixed, BoundaryPoint.make(ball, [1, 0, 0], [1, 0, 0]))
    assert res.amplitude_scale == pytest.approx(0.05**-3)


def test_single_scatter_converges_to_limit():
    dom = Domain(np.zeros(3), 1.0)
    sigma, s = 0.3, 0.1
    coeffs = CoefficientSet(dom, ConstantField(sigma), ScatteringKernel(ConstantField(s)))
    rays = construct_rays(dom, [0.1, -0.1, 0.05], [1, 0, 0], [0, 1, 0])
    exact = (
        attenuation(coeffs.sigma, rays.a, rays.x, domain=dom)
        * coeffs.k(rays.x, rays.eta, rays.zeta)
        * attenuation(coeffs.sigma, rays.x, rays.d, domain=dom)
    )
    det = BoundaryPoint.make(dom, rays.d, rays.eta)
    errs = []
    for eps in (0.1, 0.05, 0.025):
        res = measure_collision_terms(coeffs, BeamSpec(rays.a, rays.zeta, eps, "U"), det)
        errs.append(abs(res.single_scatter - exact) / exact)
    assert errs[1] < 0.1
    assert errs[0] > errs[1] > errs[2]


def test_tail_flux_bound_shrinks_with_eps(constant_coeffs, ball):
    rays = construct_rays(ball, [0, 0, 0], [1, 0, 0], [0, 1, 0])
    det = BoundaryPoint.make(ball, rays.d, rays.eta)
    flux = [
        measure_collision_terms(constant_coeffs, BeamSpec(rays.a, rays.zeta, eps, "U"), det).tail_flux_bound
        for eps in (0.1, 0.05)
    ]
    assert flux[1] / flux[0] == pytest.approx(0.5, rel=0.1)


def test_inflow_flux_scales_like_eps4(ball):
    f1 = inflow_flux(ball, BeamSpec([-1, 0, 0], [1, 0, 0], 0.02))
    f2 = inflow_flux(ball, BeamSpec([-1, 0, 0], [1, 0, 0], 0.01))
    assert f1 / f2 == pytest.approx(16.0, rel=0.02)
