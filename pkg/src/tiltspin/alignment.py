"""Field magnitude and angle from the two ODMR lines of a spin-1 ground state.

The secular equation of the traceless electron Hamiltonian
``D (Sz^2 - 2/3) + E (Sx^2 - Sy^2) + beta (sin T cos p Sx + sin T sin p Sy + cos T Sz)``
is solved in closed form. The m_s = 0 level is taken as the lowest
root, which holds below the level anticrossing (beta cos T < D).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import GeometryError, PhysicsDomainError
from .spin_core import GAMMA_E_MHZ_PER_G


def _cubic_coefficients(D, E, beta, Theta, varphi):
    p = -(D**2 / 3.0 + E**2 + beta**2)
    delta = D * math.cos(2 * Theta) + 2 * E * math.cos(2 * varphi) * math.sin(Theta) ** 2
    q = -0.5 * beta**2 * delta - (D / 6.0) * (4 * E**2 + beta**2) + 2 * D**3 / 27.0
    return p, q


def level_cubic_roots(D: float, E: float, beta: float, Theta: float, varphi: float = 0.0) -> np.ndarray:
    """Three real roots (MHz) of the depressed secular cubic, ascending."""
    p, q = _cubic_coefficients(D, E, beta, Theta, varphi)
    scale = max(D, abs(E), abs(beta), 1.0)
    disc = 4 * p**3 + 27 * q**2
    if disc > 1e-9 * scale**6:
        raise PhysicsDomainError(f"secular cubic has complex roots (discriminant {disc:.3g})")
    if p == 0.0:
        return np.zeros(3)
    m = 2.0 * math.sqrt(-p / 3.0)
    arg = 3.0 * q / (p * m)
    arg = min(1.0, max(-1.0, arg))
    phi = math.acos(arg) / 3.0
    roots = m * np.cos(phi - 2.0 * np.pi * np.arange(3) / 3.0)
    return np.sort(roots)


def transitions_from_field(D: float, E: float, beta: float, Theta: float, varphi: float = 0.0) -> tuple:
    """The two ODMR frequencies measured from the lowest (m_s = 0) root, ascending."""
    x = level_cubic_roots(D, E, beta, Theta, varphi)
    nu = sorted((x[1] - x[0], x[2] - x[0]))
    return float(nu[0]), float(nu[1])


@dataclass(frozen=True)
class AlignmentInput:
    nu1: float
    nu2: float
    D: float
    E: float = 0.0

    def __post_init__(self):
        if not (self.nu1 > 0 and self.nu2 > 0 and self.D > 0):
            raise PhysicsDomainError("nu1, nu2 and D must be positive")
        if self.nu1 > self.nu2:
            a, b = self.nu2, self.nu1
            object.__setattr__(self, "nu1", a)
            object.__setattr__(self, "nu2", b)


@dataclass(frozen=True)
class AlignmentResult:
    beta: float
    b_gauss: float
    theta: float
    delta: float
    delta_printed: float

    def as_record(self) -> dict:
        return {"b_gauss": self.b_gauss, "theta_deg": math.degrees(self.theta), "beta_mhz": self.beta,
                "delta_mhz": self.delta, "delta_printed_mhz": self.delta_printed}


def printed_delta(nu1: float, nu2: float, D: float, E: float) -> float:
    """The published rational expression for Delta, kept for comparison only.

    It fails the forward/inverse roundtrip once E != 0; see
    :func:`invert_odmr` for the consistent form.
    """
    s2 = nu1**2 + nu2**2
    num = 7 * D**3 + 2 * (nu1 + nu2) * (2 * s2 - 5 * nu1 * nu2 - 9 * E**2) - 3 * D * (s2 - nu1 * nu2 + 9 * E**2)
    den = 9 * (s2 - nu1 * nu2 - D**2 - 3 * E**2)
    if abs(den) < 1e-9 * D**2:
        return float("nan")
    return num / den


def beta_squared(nu1: float, nu2: float, D: float, E: float) -> float:
    return (nu1**2 + nu2**2 - nu1 * nu2 - D**2) / 3.0 - E**2


def invert_odmr(inp: AlignmentInput, gamma_e: float = GAMMA_E_MHZ_PER_G, freq_tol: float = 0.0) -> AlignmentResult:
    """Recover (beta, theta) from two ODMR lines.

    beta follows exactly from the sum of pairwise root products. Delta
    (= D cos 2T + 2E cos 2p sin^2 T) follows exactly from the product of
    the roots once the m_s = 0 root is placed at -(nu1 + nu2)/3. The
    angle uses Delta ~ D cos 2T, which ignores the E term because the
    azimuth is not observable from two lines.

    ``freq_tol`` (MHz) is the precision of the input lines. A negative
    beta^2 no larger than its first-order error from that precision is
    read as zero field instead of being rejected.
    """
    nu1, nu2, D, E = inp.nu1, inp.nu2, inp.D, inp.E
    b2 = beta_squared(nu1, nu2, D, E)
    tol = 1e-12 * D**2 + freq_tol * (abs(2 * nu1 - nu2) + abs(2 * nu2 - nu1)) / 3.0
    if b2 < -tol:
        raise PhysicsDomainError(f"no real field reproduces these lines (beta^2 = {b2:.4g} MHz^2)")
    b2 = max(b2, 0.0)
    beta = math.sqrt(b2)
    dp = printed_delta(nu1, nu2, D, E)
    if b2 <= tol:
        # zero field: the angle is undefined, report the axial value
        return AlignmentResult(0.0, 0.0, 0.0, D, dp)
    x0 = -(nu1 + nu2) / 3.0
    x1, x2 = x0 + nu1, x0 + nu2
    delta = 2.0 * (x0 * x1 * x2 - (D / 6.0) * (4 * E**2 + b2) + 2 * D**3 / 27.0) / b2
    ratio = delta / D
    if abs(ratio) > 1.0 + 1e-9:
        raise GeometryError(f"|Delta/D| = {abs(ratio):.6f} exceeds 1; angle undefined")
    theta = 0.5 * math.acos(min(1.0, max(-1.0, ratio)))
    return AlignmentResult(beta, beta / gamma_e, theta, delta, dp)
