"""Exception and warning types raised across the package."""


class DomainError(ValueError):
    """A point or segment lies outside the closed domain (or on it, where interior is required)."""


class DegenerateGeometryError(ValueError):
    """Ray construction is ill-posed, e.g. parallel directions or a grazing chord."""


class SubcriticalityError(ValueError):
    """Scattering would create light: sigma(x) < integral of k over the sphere."""


class UnderflowError(ArithmeticError):
    """A reconstruction denominator fell below the configured floor."""


class InvalidMeasurementError(ValueError):
    """A boundary reading is negative or otherwise unusable."""


class ConfigError(ValueError):
    """Malformed or inconsistent experiment configuration."""


class UnderdeterminedWarning(UserWarning):
    """Too few rays for the requested ART reconstruction."""
