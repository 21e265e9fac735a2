"""Density-matrix reconstruction from Pauli expectations.

The two-qubit ordering is electron (first factor) times nucleus. Raw
linear-inversion matrices need not be positive; use :func:`project_psd`
when a physical state is required.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import GeometryError, PhysicsDomainError, TomographyWarning

PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}
AXES = ("X", "Y", "Z")
PAIRS = tuple(a + b for a in AXES for b in AXES)


@dataclass(frozen=True)
class ReadoutQuad:
    """Three measured basis populations; the fourth follows from sum = 2."""

    sigma1: float
    sigma2: float
    sigma3: float

    @property
    def sigma4(self) -> float:
        return 2.0 - self.sigma1 - self.sigma2 - self.sigma3


def expectation_from_readouts(quad: ReadoutQuad) -> float:
    """Signed half-sum (s1 - s2 - s3 + s4)/2 with s4 inferred from the sum rule."""
    s4 = quad.sigma4
    if not -0.05 <= s4 <= 1.05:
        warnings.warn(f"inferred sigma4 = {s4:.3f} lies outside [-0.05, 1.05]", TomographyWarning, stacklevel=2)
    return 0.5 * (quad.sigma1 - quad.sigma2 - quad.sigma3 + s4)


@dataclass(frozen=True)
class TomographyRecord1Q:
    exp_x: float
    exp_y: float
    exp_z: float

    def __post_init__(self):
        for v in (self.exp_x, self.exp_y, self.exp_z):
            if not -1.0 <= v <= 1.0:
                raise PhysicsDomainError(f"expectation {v} outside [-1, 1]")
        if self.bloch_norm > 1.0 + 1e-12:
            warnings.warn(f"Bloch vector norm {self.bloch_norm:.4f} exceeds 1", TomographyWarning, stacklevel=2)

    @property
    def bloch_norm(self) -> float:
        return math.sqrt(self.exp_x**2 + self.exp_y**2 + self.exp_z**2)


@dataclass(frozen=True)
class TomographyRecord2Q:
    correlators: Mapping[str, float]
    electron: tuple = (0.0, 0.0, 0.0)
    nuclear: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        missing = set(PAIRS) - set(self.correlators)
        if missing:
            raise PhysicsDomainError(f"missing correlators {sorted(missing)}")
        for v in list(self.correlators.values()) + list(self.electron) + list(self.nuclear):
            if not -1.0 <= v <= 1.0:
                raise PhysicsDomainError(f"expectation {v} outside [-1, 1]")

    @classmethod
    def from_quads(cls, quads: Mapping[str, tuple], **marginals) -> "TomographyRecord2Q":
        corr = {k.upper(): expectation_from_readouts(ReadoutQuad(*q)) for k, q in quads.items()}
        return cls(corr, **marginals)


def reconstruct_1q(rec: TomographyRecord1Q) -> np.ndarray:
    """rho = (I + x X + y Y + z Z)/2."""
    rho = 0.5 * (PAULI["I"] + rec.exp_x * PAULI["X"] + rec.exp_y * PAULI["Y"] + rec.exp_z * PAULI["Z"])
    _flag_negative(rho)
    return rho


def reconstruct_2q(rec: TomographyRecord2Q) -> np.ndarray:
    """rho = (II + sum <S_i I_j> S_i I_j + optional marginals)/4."""
    rho = np.kron(PAULI["I"], PAULI["I"])
    for key, v in rec.correlators.items():
        rho = rho + v * np.kron(PAULI[key[0]], PAULI[key[1]])
    for ax, v in zip(AXES, rec.electron):
        rho = rho + v * np.kron(PAULI[ax], PAULI["I"])
    for ax, v in zip(AXES, rec.nuclear):
        rho = rho + v * np.kron(PAULI["I"], PAULI[ax])
    rho = rho / 4.0
    _flag_negative(rho)
    return rho


def _flag_negative(rho: np.ndarray) -> None:
    lo = float(np.linalg.eigvalsh(rho).min())
    if lo < -1e-12:
        warnings.warn(f"reconstructed state is not PSD (min eigenvalue {lo:.4f})", TomographyWarning, stacklevel=3)


def pauli_expectations(rho: np.ndarray) -> dict:
    """Inverse of the reconstruction: Tr(rho P) for every non-identity Pauli string."""
    if rho.shape == (2, 2):
        return {a: float(np.real(np.trace(rho @ PAULI[a]))) for a in AXES}
    out = {}
    for a in "IXYZ":
        for b in "IXYZ":
            if a == b == "I":
                continue
            out[a + b] = float(np.real(np.trace(rho @ np.kron(PAULI[a], PAULI[b]))))
    return out


def target_state(name: str) -> np.ndarray:
    if name == "zero":
        v = np.array([1, 0], dtype=complex)
    elif name == "one":
        v = np.array([0, 1], dtype=complex)
    elif name == "bell_phi_plus":
        v = np.array([1, 0, 0, 1], dtype=complex) / math.sqrt(2.0)
    elif name == "bell_psi_plus":
        v = np.array([0, 1, 1, 0], dtype=complex) / math.sqrt(2.0)
    else:
        raise PhysicsDomainError(f"unknown target {name!r}")
    return np.outer(v, v.conj())


def fidelity(rho: np.ndarray, target, convention: str = "overlap") -> float:
    """State fidelity against ``target`` (matrix or target name).

    "overlap" is Tr(rho target), i.e. <psi|rho|psi> for pure targets.
    "uhlmann" is Tr sqrt(sqrt(rho) target sqrt(rho)) without squaring, so
    it equals sqrt(overlap) for pure targets; rho must be PSD.
    """
    tgt = target_state(target) if isinstance(target, str) else np.asarray(target, dtype=complex)
    if tgt.shape != rho.shape:
        raise PhysicsDomainError("state and target dimensions differ")
    if convention == "overlap":
        return float(np.real(np.trace(rho @ tgt)))
    if convention == "uhlmann":
        if np.linalg.eigvalsh(rho).min() < -1e-10:
            raise PhysicsDomainError("uhlmann fidelity needs a PSD state; call project_psd first")
        s = _psd_sqrt(rho)
        return float(np.real(np.trace(_psd_sqrt(s @ tgt @ s))))
    raise PhysicsDomainError(f"unknown fidelity convention {convention!r}")


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(0.5 * (m + m.conj().T))
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.conj().T


def project_psd(rho: np.ndarray) -> np.ndarray:
    """Frobenius-nearest PSD matrix of unit trace.

    Eigenvalues are shifted by a common offset and clipped at zero so the
    kept ones still sum to one (the exact Euclidean projection onto the
    probability simplex). PSD inputs come back unchanged.
    """
    w, v = np.linalg.eigh(0.5 * (rho + rho.conj().T))
    if w.min() >= 0:
        return np.asarray(rho, dtype=complex)
    return (v * _simplex_projection(w)) @ v.conj().T


def _simplex_projection(w: np.ndarray) -> np.ndarray:
    u = np.sort(w)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, len(u) + 1)
    rho = k[u - css / k > 0][-1]
    shift = css[rho - 1] / rho
    return np.clip(w - shift, 0.0, None)


def tilted_pulse_state(theta_eff: float, nominal: str = "pi") -> np.ndarray:
    """Nuclear state after a nominal pi/2 or pi rotation about a tilted axis, from |0>."""
    c, s = math.cos(theta_eff), math.sin(theta_eff)
    if nominal == "half_pi":
        return np.array([1 - 1j * c, -1j * s], dtype=complex) / math.sqrt(2.0)
    if nominal == "pi":
        return -1j * np.array([c, s], dtype=complex)
    raise PhysicsDomainError(f"unknown nominal rotation {nominal!r}")


def measurement_axes(theta_eff: float) -> np.ndarray:
    """Rows are the three XZ-plane axes reachable with a tilted rotation axis."""
    # sin(2 theta) = 0 makes n1 and n2 collinear (theta = 0 mod pi/2)
    if abs(math.sin(2 * theta_eff)) < 1e-9:
        raise GeometryError("tilt is a multiple of pi/2; measurement axes are collinear")
    axes = np.array([
        [0.0, 0.0, 1.0],
        [math.sin(2 * theta_eff), 0.0, math.cos(2 * theta_eff)],
        [math.sin(theta_eff), 0.0, math.cos(theta_eff)],
    ])
    return axes


@dataclass(frozen=True)
class XZEstimate:
    x: float
    z: float
    residual: float


def reconstruct_xz(meas, axes) -> XZEstimate:
    """Least-squares Bloch components (x, z) from projections on XZ-plane axes."""
    a = np.asarray(axes, dtype=float)[:, [0, 2]]
    m = np.asarray(meas, dtype=float)
    if a.shape[0] != m.shape[0]:
        raise GeometryError("one projection per axis is required")
    if np.linalg.matrix_rank(a, tol=1e-9) < 2:
        raise GeometryError("axes are collinear; the XZ components are not identifiable")
    sol, *_ = np.linalg.lstsq(a, m, rcond=None)
    res = float(np.linalg.norm(a @ sol - m))
    return XZEstimate(float(sol[0]), float(sol[1]), res)


def eigenvalues(rho: np.ndarray) -> np.ndarray:
    return np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))
