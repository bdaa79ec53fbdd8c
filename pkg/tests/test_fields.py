import numpy as np
import pytest
from conftest import random_directions, random_interior

from rtescatter.errors import DomainError, SubcriticalityError
from rtescatter.fields import (
    Blob,
    BlobField,
    CoefficientSet,
    ConstantField,
    GridField,
    HenyeyGreenstein,
    Isotropic,
    ScatteringKernel,
    check_subcriticality,
    eval_k,
    eval_sigma,
    trilinear,
)
from rtescatter.geometry import Domain
from rtescatter.quadrature import fibonacci_rule, product_rule

INV_4PI = 1.0 / (4.0 * np.pi)


def test_constant_sigma_anywhere(ball):
    f = ConstantField(0.5)
    assert eval_sigma(f, [0.3, -0.2, 0.1], ball) == 0.5


def test_blob_peak_and_offset(ball):
    assert eval_sigma(BlobField([Blob([0.1, 0.2, 0.0], 0.2, 1.0)]), [0.1, 0.2, 0.0], ball) == pytest.approx(1.0)
    f = BlobField([Blob([0, 0, 0], 0.3, 2.0)])
    assert eval_sigma(f, [0.3, 0, 0], ball) == pytest.approx(2.0 * np.exp(-0.5), rel=1e-14)
    assert eval_sigma(f, [0.3, 0, 0], ball) == pytest.approx(1.2131, abs=1e-4)


def test_eval_outside_domain_rejected(ball):
    with pytest.raises(DomainError):
        eval_sigma(ConstantField(1.0), [1.5, 0, 0], ball)
    with pytest.raises(DomainError):
        eval_k(ScatteringKernel(ConstantField(1.0)), [0, 2, 0], [1, 0, 0], [0, 1, 0], ball)


def test_negative_parameters_rejected():
    with pytest.raises(ValueError):
        ConstantField(-0.1)
    with pytest.raises(ValueError):
        BlobField([Blob([0, 0, 0], 0.3, -1.0)])
    with pytest.raises(ValueError):
        BlobField([Blob([0, 0, 0], 0.0, 1.0)])
    with pytest.raises(ValueError):
        GridField(-np.ones((2, 2, 2)), np.zeros(3), 1.0)


def test_trilinear_reproduces_linear_functions(ball, rng):
    g = np.linspace(-1, 1, 5)
    X, Y, Z = np.meshgrid(g, g, g, indexing="ij")
    vals = 2.0 + 0.3 * X - 0.5 * Y + 0.7 * Z
    field = GridField.covering(ball, vals)
    pts = random_interior(rng, 50)
    expect = 2.0 + pts @ np.array([0.3, -0.5, 0.7])
    np.testing.assert_allclose(field(pts), expect, atol=1e-13)
    np.testing.assert_allclose(trilinear(vals, field.origin, field.spacing, pts), expect, atol=1e-13)


def test_isotropic_kernel_value(ball):
    k = ScatteringKernel(ConstantField(1.0))
    assert eval_k(k, [0.1, 0, 0], [1, 0, 0], [0, 0, 1], ball) == pytest.approx(0.0795775, abs=1e-7)


def test_hg_zero_is_isotropic(rng):
    mu = rng.uniform(-1, 1, 20)
    np.testing.assert_allclose(HenyeyGreenstein(0.0)(mu), Isotropic()(mu), rtol=1e-15)


def test_hg_forward_peak(ball):
    k = ScatteringKernel(ConstantField(1.0), HenyeyGreenstein(0.5))
    assert eval_k(k, [0, 0, 0], [0, 0, 1], [0, 0, 1], ball) == pytest.approx(6 * INV_4PI, rel=1e-14)


def test_hg_rejects_bad_asymmetry():
    with pytest.raises(ValueError):
        HenyeyGreenstein(1.0)


@pytest.mark.parametrize("g", [0.0, 0.3, -0.3, 0.7, -0.7])
def test_hg_normalized(g):
    rule = product_rule(256, 8)
    assert rule.integrate(HenyeyGreenstein(g)(rule.nodes[:, 2])) == pytest.approx(1.0, abs=1e-6)


def test_kernel_symmetry_bitwise(rng, blob_sigma):
    k = ScatteringKernel(blob_sigma, HenyeyGreenstein(0.4))
    n = 10_000
    x = random_interior(rng, n)
    t1 = random_directions(rng, n)
    t2 = random_directions(rng, n)
    np.testing.assert_allclose(k(x, t1, t2), k(x, t2, t1), rtol=1e-15, atol=0)


def test_kernel_rotation_invariance(rng, blob_sigma):
    k = ScatteringKernel(blob_sigma, HenyeyGreenstein(-0.6))
    x = random_interior(rng, 200)
    t1 = random_directions(rng, 200)
    t2 = random_directions(rng, 200)
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    np.testing.assert_allclose(k(x, t1 @ q.T, t2 @ q.T), k(x, t1, t2), rtol=1e-12)


def test_subcriticality_isotropic_half():
    dom = Domain(np.zeros(3), 1.0)
    coeffs = CoefficientSet(dom, ConstantField(1.0), ScatteringKernel(ConstantField(0.5)))
    rep = check_subcriticality(coeffs, fibonacci_rule(256), [[0, 0, 0], [0.5, 0, 0]])
    assert rep.max_ratio == pytest.approx(0.5, abs=1e-12)
    assert rep.passed


def test_subcriticality_zero_kernel(ball):
    coeffs = CoefficientSet(ball, ConstantField(1.0), ScatteringKernel(ConstantField(0.0)))
    rep = check_subcriticality(coeffs, fibonacci_rule(64), [[0, 0, 0]])
    assert rep.max_ratio == 0.0 and rep.passed


def test_supercritical_rejected(ball):
    with pytest.raises(SubcriticalityError):
        CoefficientSet(ball, ConstantField(0.1), ScatteringKernel(ConstantField(1.0)))


def test_vanishing_sigma_with_scattering_rejected(ball):
    with pytest.raises(SubcriticalityError):
        CoefficientSet(ball, ConstantField(0.0), ScatteringKernel(ConstantField(0.1)))


def test_local_violation_found_by_sampling(ball):
    # the blob in s outgrows sigma only near its centre
    s = BlobField([Blob([0.5, 0, 0], 0.1, 2.0)])
    with pytest.raises(SubcriticalityError):
        CoefficientSet(ball, ConstantField(1.0), ScatteringKernel(s))


def test_small_rule_rejected(constant_coeffs):
    with pytest.raises(ValueError):
        check_subcriticality(constant_coeffs, fibonacci_rule(32), [[0, 0, 0]])
