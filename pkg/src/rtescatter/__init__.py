"""Scattering-kernel reconstruction from narrow-beam boundary measurements of the radiative transport equation."""
__version__ = "0.1.0"

from .errors import (
    ConfigError,
    DegenerateGeometryError,
    DomainError,
    InvalidMeasurementError,
    SubcriticalityError,
    UnderdeterminedWarning,
    UnderflowError,
)
from .geometry import BoundaryPoint, Domain, RayConstruction, construct_rays, spherical_direction
from .fields import (
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
)
from .quadrature import QuadratureSpec
from .transport import apply_J, apply_K, apply_Tinv, attenuation, contraction_constant
from .beams import BeamSpec, CollisionBreakdown, measure_collision_terms
from .solver import RadianceField, solve_rte_neumann
from .multifreq import MFBoundaryCondition, MultiFreqCoefficients, analytic_mf_measurements, solve_multifreq
from .recon import (
    MeasurementQuad,
    ReconstructionGrid,
    analytic_single_scatter,
    art_invert_sigma,
    reconstruct_field,
    reconstruct_k2,
    reconstruct_k4,
    recover_s_factorized,
    xray_line_integrals,
)

__all__ = [
    "__version__",
    "ConfigError",
    "DegenerateGeometryError",
    "DomainError",
    "InvalidMeasurementError",
    "SubcriticalityError",
    "UnderdeterminedWarning",
    "UnderflowError",
    "BoundaryPoint",
    "Domain",
    "RayConstruction",
    "construct_rays",
    "spherical_direction",
    "Blob",
    "BlobField",
    "CoefficientSet",
    "ConstantField",
    "GridField",
    "HenyeyGreenstein",
    "Isotropic",
    "ScatteringKernel",
    "check_subcriticality",
    "eval_k",
    "eval_sigma",
    "QuadratureSpec",
    "apply_J",
    "apply_K",
    "apply_Tinv",
    "attenuation",
    "contraction_constant",
    "BeamSpec",
    "CollisionBreakdown",
    "measure_collision_terms",
    "RadianceField",
    "solve_rte_neumann",
    "MFBoundaryCondition",
    "MultiFreqCoefficients",
    "analytic_mf_measurements",
    "solve_multifreq",
    "MeasurementQuad",
    "ReconstructionGrid",
    "analytic_single_scatter",
    "art_invert_sigma",
    "reconstruct_field",
    "reconstruct_k2",
    "reconstruct_k4",
    "recover_s_factorized",
    "xray_line_integrals",
]
