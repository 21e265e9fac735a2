"""Spin-Hamiltonian toolkit for a spin-1 defect coupled to a spin-1/2 nucleus under a tilted field."""

from .errors import (
    ConfigError,
    GeometryError,
    LabelingError,
    NoPeakError,
    PhysicsDomainError,
    ResonanceError,
    TiltSpinError,
)
from .spin_core import FieldConfig, SpinSystemParams, build_full_hamiltonian, gs_doublet_splitting
from .effective import effective_hamiltonian, nuclear_frequency, sweet_spot

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "FieldConfig",
    "GeometryError",
    "LabelingError",
    "NoPeakError",
    "PhysicsDomainError",
    "ResonanceError",
    "SpinSystemParams",
    "TiltSpinError",
    "build_full_hamiltonian",
    "effective_hamiltonian",
    "gs_doublet_splitting",
    "nuclear_frequency",
    "sweet_spot",
]
