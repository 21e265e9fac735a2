"""Exception types shared across the toolkit."""


class TiltSpinError(Exception):
    """Base class for toolkit errors."""


class ConfigError(TiltSpinError, ValueError):
    """Malformed or schema-violating input (CLI exit code 2)."""


class PhysicsDomainError(TiltSpinError, ValueError):
    """Inputs are well-formed but outside the physical model's domain (exit code 3)."""


class ResonanceError(PhysicsDomainError):
    """Perturbative denominator D^2 - (gamma_e*Bz)^2 is too close to zero."""


class LabelingError(PhysicsDomainError):
    """Eigenstates cannot be assigned a dominant basis character."""


class GeometryError(PhysicsDomainError):
    """Degenerate measurement geometry (collinear axes, undefined directions)."""


class NoPeakError(PhysicsDomainError):
    """Spectral analysis found no usable peak (flat or constant input)."""


class LabelingWarning(UserWarning):
    """Two eigenstates share a dominant label or the overlap is not confident."""


class TomographyWarning(UserWarning):
    """Readout or reconstruction data violate an expected physical bound."""


class OptimizationWarning(UserWarning):
    """Scan/optimizer found a flat objective or a boundary maximum."""
