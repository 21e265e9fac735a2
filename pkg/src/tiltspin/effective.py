"""Second-order effective Hamiltonian of the nuclear spin in the m_s = 0 doublet.

Two independent routes are provided: the closed-form corrections
(:func:`second_order_corrections`, :func:`effective_hamiltonian`) and a
literal projector sum over the 6x6 operators
(:func:`numeric_schrieffer_wolff`). The transverse zero-field term E is
dropped in both; the exact oracle in :mod:`tiltspin.spin_core` keeps it.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import GeometryError, OptimizationWarning, PhysicsDomainError, ResonanceError
from .spin_core import (
    FieldConfig,
    SpinSystemParams,
    build_full_hamiltonian,
    electron_op,
    gs_doublet_splitting,
    spin1_operators,
)

RESONANCE_EPS = 1e-6


@dataclass(frozen=True)
class UnperturbedEnergies:
    e_plus: float
    e_minus: float


@dataclass(frozen=True)
class EffectiveModel:
    h_eff: np.ndarray
    nu_z: float
    nu_perp: float
    omega_z: float
    omega_x: float
    f_nucl: float
    theta_eff: float
    c_e: float
    c_n: float
    c_total: float

    def as_record(self) -> dict:
        return {
            "nu_z": self.nu_z,
            "nu_perp": self.nu_perp,
            "f_nucl_mhz": self.f_nucl,
            "theta_eff_deg": math.degrees(self.theta_eff),
            "c_e": self.c_e,
            "c_n": self.c_n,
            "c_total": self.c_total,
        }


def unperturbed_energies(p: SpinSystemParams, f: FieldConfig) -> UnperturbedEnergies:
    ez = p.gamma_e * f.Bz
    return UnperturbedEnergies(p.D + ez, p.D - ez)


def _denominator(p: SpinSystemParams, f: FieldConfig, eps: float) -> float:
    ez = p.gamma_e * f.Bz
    den = p.D**2 - ez**2
    if abs(den) < eps * p.D**2:
        raise ResonanceError(
            f"gamma_e*Bz = {ez:.6g} MHz is resonant with D = {p.D:.6g} MHz; second-order theory breaks down"
        )
    return den


def second_order_corrections(p: SpinSystemParams, f: FieldConfig, eps: float = RESONANCE_EPS):
    """Return ``(nu_z, nu_perp)`` in MHz."""
    den = _denominator(p, f, eps)
    nu_z = p.gamma_e * f.Bz * p.A_perp**2 / den
    nu_perp = -2.0 * p.gamma_e * f.Bperp * p.A_perp * p.D / den
    # the eps test alone lets |nu| reach ~A_perp^2/(eps D) before tripping
    if max(abs(nu_z), abs(nu_perp)) > 10.0 * p.D:
        raise ResonanceError("second-order shift exceeds 10 D near gamma_e*Bz = D; theory breaks down")
    return nu_z, nu_perp


def _contrast_terms(p: SpinSystemParams, f: FieldConfig, omega_x: float, f_nucl: float):
    detuned = p.gamma_e * f.Bz - p.A_par
    f_e = math.hypot(detuned, p.gamma_e * f.Bperp)
    if f_nucl <= 0.0:
        raise PhysicsDomainError("nuclear precession frequency is zero; contrast undefined")
    if f_e <= 0.0:
        raise PhysicsDomainError("detuned electron frequency is zero; readout contrast undefined")
    c_n = (omega_x / f_nucl) ** 2
    c_e = (detuned / f_e) ** 2
    return c_e, c_n


def effective_hamiltonian(p: SpinSystemParams, f: FieldConfig, eps: float = RESONANCE_EPS) -> EffectiveModel:
    """Closed-form 2x2 nuclear Hamiltonian in the (|0,up>, |0,down>) basis.

    ``h_eff = 1/2 [[Om_z, Om_x e^{-i az}], [Om_x e^{i az}, -Om_z]]`` with
    ``Om_z = gamma_i Bz + nu_z`` and ``Om_x = gamma_i Bperp + nu_perp``.
    A non-zero azimuth only rotates the transverse phase.
    """
    nu_z, nu_perp = second_order_corrections(p, f, eps)
    om_z = p.gamma_i * f.Bz + nu_z
    om_x = p.gamma_i * f.Bperp + nu_perp
    phase = np.exp(-1j * f.azimuth)
    h = 0.5 * np.array([[om_z, om_x * phase], [om_x * np.conj(phase), -om_z]], dtype=complex)
    f_nucl = math.hypot(om_z, om_x)
    theta = math.atan2(om_x, om_z) if f_nucl > 1e-15 else 0.0
    if f_nucl > 0.0 and math.hypot(p.gamma_e * f.Bz - p.A_par, p.gamma_e * f.Bperp) > 0.0:
        c_e, c_n = _contrast_terms(p, f, om_x, f_nucl)
    else:
        c_e, c_n = float("nan"), float("nan")
    return EffectiveModel(h, nu_z, nu_perp, om_z, om_x, f_nucl, theta, c_e, c_n, c_e * c_n)


def nuclear_frequency(p: SpinSystemParams, f: FieldConfig) -> float:
    """Nuclear precession frequency sqrt(Om_z^2 + Om_x^2) in MHz."""
    return effective_hamiltonian(p, f).f_nucl


def effective_tilt(p: SpinSystemParams, f: FieldConfig) -> float:
    """Tilt of the effective nuclear field from the defect axis, atan2(Om_x, Om_z)."""
    m = effective_hamiltonian(p, f)
    if abs(m.omega_x) < 1e-15 and abs(m.omega_z) < 1e-15:
        raise GeometryError("effective field vanishes; tilt undefined")
    return math.atan2(m.omega_x, m.omega_z)


def precession_contrast(p: SpinSystemParams, f: FieldConfig):
    """Return ``(c_e, c_n, c_total)`` for the nuclear precession signal."""
    m = effective_hamiltonian(p, f)
    c_e, c_n = _contrast_terms(p, f, m.omega_x, m.f_nucl)
    return c_e, c_n, c_e * c_n


def numeric_schrieffer_wolff(p: SpinSystemParams, f: FieldConfig, eps: float = RESONANCE_EPS) -> np.ndarray:
    """Second-order projector sum evaluated on the 6x6 operators.

    ``H_eff = P V P - sum_m P V |m><m| V P / (E_m - E_0)`` where P projects
    on {|0,up>, |0,down>}, the sum runs over the four m_s = +-1 product
    states, H0 = D Sz^2 + gamma_e Bz Sz and V is the remainder of the full
    Hamiltonian with E = 0. Returns the traceless 2x2 block.
    """
    _denominator(p, f, eps)
    ops = spin1_operators()
    h_full = build_full_hamiltonian(p.replace(E=0.0), f)
    h0 = electron_op(p.D * ops.Sz @ ops.Sz + p.gamma_e * f.Bz * ops.Sz)
    v = h_full - h0
    energies = np.real(np.diag(h0))
    low = [2, 3]
    high = [0, 1, 4, 5]
    e0 = energies[2]
    heff = v[np.ix_(low, low)].copy()
    for m in high:
        heff -= np.outer(v[low, m], v[m, low]) / (energies[m] - e0)
    return heff - 0.5 * np.trace(heff) * np.eye(2)


def oracle_deviation(p: SpinSystemParams, f: FieldConfig) -> tuple:
    """Return ``(f_oracle, relative deviation of the closed form from it)``."""
    f_eff = nuclear_frequency(p, f)
    f_exact = gs_doublet_splitting(p, f)
    return f_exact, abs(f_eff - f_exact) / f_eff if f_eff > 0 else float("inf")


@dataclass(frozen=True)
class SweetSpot:
    phi: float
    contrast: float
    at_boundary: bool


def _golden_max(fn: Callable[[float], float], a: float, b: float, tol: float) -> float:
    inv = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - inv * (b - a)
    d = a + inv * (b - a)
    fc, fd = fn(c), fn(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - inv * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv * (b - a)
            fd = fn(d)
    return 0.5 * (a + b)


def maximize_scan(fn: Callable[[float], float], lo: float, hi: float, n: int = 2001,
                  tol: float = 1e-6) -> SweetSpot:
    """Dense scan followed by golden-section refinement of the best bracket."""
    grid = np.linspace(lo, hi, n)
    values = np.array([fn(x) for x in grid])
    if values.max() - values.min() < 1e-12:
        warnings.warn("objective is flat over the scan range", OptimizationWarning, stacklevel=2)
    k = int(np.argmax(values))
    if k == 0 or k == n - 1:
        return SweetSpot(float(grid[k]), float(values[k]), True)
    x = _golden_max(fn, grid[k - 1], grid[k + 1], tol)
    fx = fn(x)
    if fx < values[k]:
        x, fx = grid[k], values[k]
    return SweetSpot(float(x), float(fx), False)


def sweet_spot(p: SpinSystemParams, B: float, phi_range=(1e-4, math.radians(20.0)), n: int = 2001,
               tol: float = 1e-6, contrast_fn: Optional[Callable[[float], float]] = None) -> SweetSpot:
    """Tilt angle maximizing the observable precession contrast at field ``B``.

    ``contrast_fn`` replaces the physical c_total(phi) when given.
    """
    lo, hi = phi_range
    if not 0.0 < lo < hi < math.pi / 2:
        raise PhysicsDomainError("phi_range must lie inside (0, pi/2)")
    if contrast_fn is None:
        def contrast_fn(phi):
            return effective_hamiltonian(p, FieldConfig(B, phi)).c_total
    return maximize_scan(contrast_fn, lo, hi, n, tol)
