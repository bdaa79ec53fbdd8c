"""Experiment configuration: TOML schema, strict parsing and phantom builders.

Every section and key is optional; omitted values take the defaults
below. Unknown keys anywhere are rejected with their dotted path.

.. code-block:: toml

    seed = 7                         # required by `stability`

    [domain]
    center = [0.0, 0.0, 0.0]
    radius = 1.0

    [phantom.sigma]                  # absorption
    kind = "constant"                # "constant" | "blobs"
    value = 0.5                      # constant value
    background = 0.0                 # blobs: additive floor
    blobs = []                       # blobs: [{center, width, amplitude}, ...]

    [phantom.s]                      # spatial factor of the kernel, same layout
    kind = "constant"
    value = 0.2

    [phantom.kappa]
    kind = "isotropic"               # "isotropic" | "hg"
    g = 0.0                          # hg asymmetry in (-1, 1)

    # [phantom.sigma_e] / [phantom.sigma_f]: two-frequency absorptions

    [quadrature]                     # overrides of the forward rules
    panel_length = 0.01              # default 0.01 * radius
    beam_line_panels = 4
    beam_line_nodes = 16
    beam_radial_nodes = 16
    beam_azimuth_nodes = 24

    [grid]
    n = 5                            # n^3 points on [-extent, extent]^3 * radius
    extent = 0.5
    # points = [[x, y, z], ...]      # explicit list instead

    [directions]                     # (polar, azimuth) in degrees
    zeta = [90.0, 0.0]
    eta = [90.0, 90.0]

    [simulate]
    epsilon = 0.05                   # 0 writes narrow-beam limits

    [reconstruct]
    source = "analytic"              # "analytic" | "finite-epsilon" | "file"
    epsilon = 0.1
    measurements = ""                # CSV written by `simulate` (source = "file")
    floor = 1e-12
    max_failure_fraction = 0.5       # above this, exit with a numeric failure

    [convergence]
    epsilons = [0.4, 0.2, 0.1, 0.05]
    point = [0.0, 0.0, 0.0]

    [stability]
    deltas = [1e-3, 1e-2, 1e-1]

    [art]
    n_voxels = 17
    chords_per_axis = 16
    pitch = 0.0                      # 0 picks min(diameter / chords, 0.95 voxel)
    iterations = 50
    relaxation = 0.5
    coverage_threshold = 0           # 0 means n_voxels^2
    delta = 0.0                      # noise level for `baseline`

    [output]
    directory = "out"
    timestamp = false
"""
from __future__ import annotations

import dataclasses
import sys
import typing
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ConfigError, SubcriticalityError
from ..fields import Blob, BlobField, CoefficientSet, ConstantField, HenyeyGreenstein, Isotropic, ScatteringKernel
from ..geometry import Domain, spherical_direction
from ..multifreq import MultiFreqCoefficients
from ..quadrature import QuadratureSpec

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


@dataclass
class DomainCfg:
    center: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    radius: float = 1.0


@dataclass
class BlobCfg:
    center: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    width: float = 0.25
    amplitude: float = 0.0


@dataclass
class FieldCfg:
    kind: str = "constant"
    value: float = 0.0
    background: float = 0.0
    blobs: list = field(default_factory=list)


@dataclass
class KappaCfg:
    kind: str = "isotropic"
    g: float = 0.0


@dataclass
class PhantomCfg:
    sigma: FieldCfg = field(default_factory=lambda: FieldCfg(value=0.5))
    s: FieldCfg = field(default_factory=lambda: FieldCfg(value=0.2))
    kappa: KappaCfg = field(default_factory=KappaCfg)
    sigma_e: typing.Optional[FieldCfg] = None
    sigma_f: typing.Optional[FieldCfg] = None


@dataclass
class QuadratureCfg:
    panel_length: float = 0.0
    beam_line_panels: int = 4
    beam_line_nodes: int = 16
    beam_radial_nodes: int = 16
    beam_azimuth_nodes: int = 24


@dataclass
class GridCfg:
    n: int = 5
    extent: float = 0.5
    points: list = field(default_factory=list)


@dataclass
class DirectionsCfg:
    zeta: list = field(default_factory=lambda: [90.0, 0.0])
    eta: list = field(default_factory=lambda: [90.0, 90.0])


@dataclass
class SimulateCfg:
    epsilon: float = 0.05


@dataclass
class ReconstructCfg:
    source: str = "analytic"
    epsilon: float = 0.1
    measurements: str = ""
    floor: float = 1e-12
    max_failure_fraction: float = 0.5


@dataclass
class ConvergenceCfg:
    epsilons: list = field(default_factory=lambda: [0.4, 0.2, 0.1, 0.05])
    point: list = field(default_factory=lambda: [0.0, 0.0, 0.0])


@dataclass
class StabilityCfg:
    deltas: list = field(default_factory=lambda: [1e-3, 1e-2, 1e-1])


@dataclass
class ArtCfg:
    n_voxels: int = 17
    chords_per_axis: int = 16
    pitch: float = 0.0
    iterations: int = 50
    relaxation: float = 0.5
    coverage_threshold: int = 0
    delta: float = 0.0


@dataclass
class OutputCfg:
    directory: str = "out"
    timestamp: bool = False


@dataclass
class ExperimentConfig:
    seed: typing.Optional[int] = None
    domain: DomainCfg = field(default_factory=DomainCfg)
    phantom: PhantomCfg = field(default_factory=PhantomCfg)
    quadrature: QuadratureCfg = field(default_factory=QuadratureCfg)
    grid: GridCfg = field(default_factory=GridCfg)
    directions: DirectionsCfg = field(default_factory=DirectionsCfg)
    simulate: SimulateCfg = field(default_factory=SimulateCfg)
    reconstruct: ReconstructCfg = field(default_factory=ReconstructCfg)
    convergence: ConvergenceCfg = field(default_factory=ConvergenceCfg)
    stability: StabilityCfg = field(default_factory=StabilityCfg)
    art: ArtCfg = field(default_factory=ArtCfg)
    output: OutputCfg = field(default_factory=OutputCfg)

    # builders -------------------------------------------------------------

    def build_domain(self) -> Domain:
        try:
            return Domain(np.asarray(self.domain.center, dtype=float), float(self.domain.radius))
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"domain: {exc}") from exc

    def build_quadrature(self, dom: Domain | None = None) -> QuadratureSpec:
        dom = dom or self.build_domain()
        q = self.quadrature
        kw = dict(
            beam_line_panels=q.beam_line_panels,
            beam_line_nodes=q.beam_line_nodes,
            beam_radial_nodes=q.beam_radial_nodes,
            beam_azimuth_nodes=q.beam_azimuth_nodes,
        )
        if q.panel_length > 0:
            kw["panel_length"] = q.panel_length
        try:
            return QuadratureSpec.for_domain(dom, **kw)
        except ValueError as exc:
            raise ConfigError(f"quadrature: {exc}") from exc

    def directions_pair(self) -> tuple[np.ndarray, np.ndarray]:
        try:
            z = spherical_direction(*map(float, self.directions.zeta))
            e = spherical_direction(*map(float, self.directions.eta))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"directions: expected [polar, azimuth] pairs ({exc})") from exc
        return z, e

    def grid_points(self, dom: Domain | None = None) -> tuple[np.ndarray, tuple | None]:
        """Reconstruction points and, for lattice grids, their (n, n, n) shape."""
        dom = dom or self.build_domain()
        g = self.grid
        if g.points:
            try:
                pts = np.asarray(g.points, dtype=float).reshape(-1, 3)
            except ValueError as exc:
                raise ConfigError("grid.points: expected a list of [x, y, z]") from exc
            return pts, None
        if g.n < 0:
            raise ConfigError("grid.n: must be nonnegative")
        if g.n == 0:
            return np.zeros((0, 3)), (0, 0, 0)
        if not 0 < g.extent < 1:
            raise ConfigError("grid.extent: must lie in (0, 1)")
        ax = np.linspace(-g.extent, g.extent, g.n) * dom.radius if g.n > 1 else np.zeros(1)
        P = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), axis=-1).reshape(-1, 3) + dom.center
        return P, (g.n,) * 3

    def build_coefficients(self, dom: Domain | None = None) -> CoefficientSet:
        dom = dom or self.build_domain()
        p = self.phantom
        try:
            return CoefficientSet(dom, _field(p.sigma, "phantom.sigma"), self._kernel())
        except SubcriticalityError as exc:
            raise ConfigError(f"phantom: {exc}") from exc
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"phantom: {exc}") from exc

    def has_multifreq(self) -> bool:
        return self.phantom.sigma_e is not None and self.phantom.sigma_f is not None

    def build_multifreq(self, dom: Domain | None = None) -> MultiFreqCoefficients:
        dom = dom or self.build_domain()
        p = self.phantom
        if not self.has_multifreq():
            raise ConfigError("phantom.sigma_e and phantom.sigma_f are required for two-frequency runs")
        try:
            return MultiFreqCoefficients(
                dom, _field(p.sigma_e, "phantom.sigma_e"), _field(p.sigma_f, "phantom.sigma_f"), self._kernel()
            )
        except SubcriticalityError as exc:
            raise ConfigError(f"phantom: {exc}") from exc
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"phantom: {exc}") from exc

    def _kernel(self) -> ScatteringKernel:
        k = self.phantom.kappa
        if k.kind == "isotropic":
            ang = Isotropic()
        elif k.kind == "hg":
            try:
                ang = HenyeyGreenstein(float(k.g))
            except ValueError as exc:
                raise ConfigError(f"phantom.kappa.g: {exc}") from exc
        else:
            raise ConfigError(f"phantom.kappa.kind: unknown profile {k.kind!r}")
        return ScatteringKernel(_field(self.phantom.s, "phantom.s"), ang)


def _field(cfg: FieldCfg, path: str):
    if cfg.kind == "constant":
        try:
            return ConstantField(float(cfg.value))
        except ValueError as exc:
            raise ConfigError(f"{path}.value: {exc}") from exc
    if cfg.kind == "blobs":
        blobs = []
        for i, b in enumerate(cfg.blobs):
            bc = _build(BlobCfg, b, f"{path}.blobs[{i}]")
            blobs.append(Blob(np.asarray(bc.center, dtype=float), float(bc.width), float(bc.amplitude)))
        try:
            return BlobField(blobs, background=float(cfg.background))
        except ValueError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    raise ConfigError(f"{path}.kind: unknown field kind {cfg.kind!r}")


# strict parsing -----------------------------------------------------------------


def _is_dataclass_type(tp) -> bool:
    return isinstance(tp, type) and dataclasses.is_dataclass(tp)


def _unwrap_optional(tp):
    if typing.get_origin(tp) is typing.Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if len(args) == 1:
            return args[0]
    return tp


def _coerce(value, tp, path: str):
    tp = _unwrap_optional(tp)
    if _is_dataclass_type(tp):
        return _build(tp, value, path)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true or false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    if tp is list:
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected an array, got {value!r}")
        return value
    return value


def _build(cls, data, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or '<root>'}: expected a table, got {data!r}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        where = f"{path}." if path else ""
        raise ConfigError("unknown key(s): " + ", ".join(where + k for k in unknown))
    kwargs = {}
    for name, value in data.items():
        sub = f"{path}.{name}" if path else name
        kwargs[name] = _coerce(value, hints[name], sub)
    return cls(**kwargs)


def parse_config(data: dict) -> ExperimentConfig:
    return _build(ExperimentConfig, data, "")


def _set_dotted(data: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    cur = data
    for k in keys[:-1]:
        nxt = cur.setdefault(k, {})
        if not isinstance(nxt, dict):
            raise ConfigError(f"override {dotted}: {k} is not a table")
        cur = nxt
    cur[keys[-1]] = value


def parse_override(text: str) -> tuple[str, object]:
    """``section.key=value`` with the value in TOML syntax (bare words are strings)."""
    if "=" not in text:
        raise ConfigError(f"override {text!r}: expected key=value")
    key, raw = text.split("=", 1)
    key = key.strip()
    try:
        value = tomllib.loads(f"v = {raw.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    return key, value


def load_config(path: str | Path | None, overrides: typing.Sequence[str] = ()) -> tuple[ExperimentConfig, dict]:
    """Read a TOML file (or start empty), apply ``key=value`` overrides, validate.

    Returns the config and the merged raw table (used for hashing).
    """
    data: dict = {}
    if path is not None:
        p = Path(path)
        text = p.read_text(encoding="utf-8")  # OSError propagates as an I/O failure
        try:
            data = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{p}: {exc}") from exc
    for ov in overrides:
        key, value = parse_override(ov)
        _set_dotted(data, key, value)
    return parse_config(data), data
