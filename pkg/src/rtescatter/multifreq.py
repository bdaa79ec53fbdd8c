"""Two-frequency (excitation/fluorescence) transport.

The excitation field ``u`` is transported without scattering under
``sigma_e``; each scattering event converts it to the fluorescence field
``v``, which is transported under ``sigma_f`` and not scattered further.
Boundary readings are therefore an exact two-term composition:
``u = J_e phi`` and ``v = T_f^-1 K J_e phi + J_f psi``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .beams import BeamSpec, amplitude_scale, ballistic_raw, single_scatter_raw
from .errors import DomainError
from .fields import CoefficientSet, ScalarField, ScatteringKernel
from .geometry import BoundaryPoint, Domain, RayConstruction
from .quadrature import QuadratureSpec
from .transport import attenuation


@dataclass(frozen=True)
class MultiFreqCoefficients:
    domain: Domain
    sigma_e: ScalarField
    sigma_f: ScalarField
    kernel: ScatteringKernel

    def __post_init__(self):
        for name in ("sigma_e", "sigma_f"):
            f = getattr(self, name)
            if f.domain is not None and f.domain != self.domain:
                raise DomainError(f"{name} is defined on a different domain")
        # scattering removes excitation light, so only sigma_e must dominate the kernel
        CoefficientSet(self.domain, self.sigma_e, self.kernel)

    def excitation(self) -> CoefficientSet:
        return CoefficientSet(self.domain, self.sigma_e, self.kernel)

    def k(self, x, theta, theta_prime) -> float:
        return float(self.kernel(np.asarray(x, dtype=float)[None], theta, theta_prime)[0])


@dataclass(frozen=True)
class MFBoundaryCondition:
    """Inflow data ``(phi, psi)`` for the excitation and fluorescence fields.

    ``index`` (1 to 8) marks one of the eight standard configurations; the
    matching detector is stored alongside so the reading is unambiguous.
    """

    phi: BeamSpec | None = None
    psi: BeamSpec | None = None
    index: int | None = None
    detector: BoundaryPoint | None = None
    channel: str = "v"

    def __post_init__(self):
        if self.index is not None and not 1 <= self.index <= 8:
            raise ValueError("configuration index must be between 1 and 8")
        if self.channel not in ("u", "v"):
            raise ValueError("channel must be 'u' or 'v'")


@dataclass(frozen=True)
class MFReading:
    u: float
    v: float

    def channel(self, name: str) -> float:
        return self.u if name == "u" else self.v


def solve_multifreq(coeffs: MultiFreqCoefficients, bc: MFBoundaryCondition, det_pos, det_dir, quad: QuadratureSpec | None = None) -> MFReading:
    """Excitation and fluorescence radiance at an outflow boundary point."""
    dom = coeffs.domain
    quad = quad or QuadratureSpec.for_domain(dom)
    det = BoundaryPoint.make(dom, det_pos, det_dir)
    if det.side != "outflow":
        raise DomainError("detector must sit on the outflow boundary")
    u = v = 0.0
    if bc.phi is not None:
        bc.phi.validate(dom)
        scale = amplitude_scale(dom, bc.phi, det.position, det.direction)
        u = scale * ballistic_raw(dom, coeffs.sigma_e, bc.phi, det.position, det.direction, quad)
        v = scale * single_scatter_raw(dom, coeffs.sigma_e, coeffs.sigma_f, coeffs.kernel, bc.phi, det.position, det.direction, quad)
    if bc.psi is not None:
        bc.psi.validate(dom)
        scale = amplitude_scale(dom, bc.psi, det.position, det.direction)
        v += scale * ballistic_raw(dom, coeffs.sigma_f, bc.psi, det.position, det.direction, quad)
    return MFReading(u, v)


def eight_conditions(dom: Domain, rays: RayConstruction, eps: float) -> list[MFBoundaryCondition]:
    """The eight source/detector configurations whose readings determine ``k^4``.

    Scaled excitation beams enter at a, b, c, d along zeta, eta, -zeta, -eta
    and are read in the fluorescence channel where the crossing chord
    leaves; unit beams from a and b are read ballistically in each channel.
    """
    z, e = rays.zeta, rays.eta
    a, b, c, d = rays.a, rays.b, rays.c, rays.d

    def det(p, th):
        return BoundaryPoint.make(dom, p, th)

    return [
        MFBoundaryCondition(BeamSpec(a, z, eps, "U"), None, 1, det(d, e), "v"),
        MFBoundaryCondition(BeamSpec(b, e, eps, "U"), None, 2, det(c, z), "v"),
        MFBoundaryCondition(BeamSpec(c, -z, eps, "U"), None, 3, det(b, -e), "v"),
        MFBoundaryCondition(BeamSpec(d, -e, eps, "U"), None, 4, det(a, -z), "v"),
        MFBoundaryCondition(BeamSpec(a, z, eps, "u"), None, 5, det(c, z), "u"),
        MFBoundaryCondition(BeamSpec(b, e, eps, "u"), None, 6, det(d, e), "u"),
        MFBoundaryCondition(None, BeamSpec(a, z, eps, "u"), 7, det(c, z), "v"),
        MFBoundaryCondition(None, BeamSpec(b, e, eps, "u"), 8, det(d, e), "v"),
    ]


def simulate_mf_measurements(coeffs: MultiFreqCoefficients, rays: RayConstruction, eps: float, quad: QuadratureSpec | None = None) -> np.ndarray:
    """Finite-width readings for the eight configurations, in index order."""
    out = np.empty(8)
    for i, bc in enumerate(eight_conditions(coeffs.domain, rays, eps)):
        r = solve_multifreq(coeffs, bc, bc.detector.position, bc.detector.direction, quad)
        out[i] = r.channel(bc.channel)
    return out


def analytic_mf_measurements(coeffs: MultiFreqCoefficients, rays: RayConstruction, quad: QuadratureSpec | None = None) -> np.ndarray:
    """Narrow-beam limits of the eight readings, in index order."""
    dom = coeffs.domain
    quad = quad or QuadratureSpec.for_domain(dom)
    se, sf = coeffs.sigma_e, coeffs.sigma_f
    x, z, e = rays.x, rays.zeta, rays.eta
    a, b, c, d = rays.a, rays.b, rays.c, rays.d

    def ae(p, q):
        return attenuation(se, p, q, quad, dom)

    def af(p, q):
        return attenuation(sf, p, q, quad, dom)

    k = coeffs.k
    return np.array([
        ae(a, x) * k(x, e, z) * af(x, d),
        ae(b, x) * k(x, z, e) * af(x, c),
        ae(c, x) * k(x, -e, -z) * af(x, b),
        ae(d, x) * k(x, -z, -e) * af(x, a),
        ae(a, c),
        ae(b, d),
        af(a, c),
        af(b, d),
    ])
