"""Exact spin Hamiltonian of an S=1 defect coupled to an I=1/2 nucleus.

Units are fixed throughout the package: frequencies in MHz (h = 1),
fields in gauss, times in microseconds. Factors of 2*pi only appear
inside propagators.

Product basis ordering (electron first, nucleus second)::

    0: |+1,up>   1: |+1,down>   2: |0,up>   3: |0,down>   4: |-1,up>   5: |-1,down>

Nuclear Zeeman sign: the nuclear term enters as ``+gamma_i * B.I`` so
that the projection of the full Hamiltonian onto the m_s = 0 doublet is
exactly ``gamma_i * B.I`` at first order, the same term that appears in
the closed-form effective Hamiltonian. ``gamma_i`` carries its own sign.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Any, Mapping

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ConfigError, LabelingError, LabelingWarning

GAMMA_E_MHZ_PER_G = 2.8025
GAMMA_13C_MHZ_PER_G = 1.0705e-3

BASIS_LABELS = ("+1,up", "+1,down", "0,up", "0,down", "-1,up", "-1,down")
MS_OF_INDEX = (1, 1, 0, 0, -1, -1)
NUC_OF_INDEX = ("up", "down", "up", "down", "up", "down")

_PARAM_KEYS = {
    "d_mhz": "D",
    "e_mhz": "E",
    "gamma_e_mhz_per_g": "gamma_e",
    "gamma_i_mhz_per_g": "gamma_i",
    "a_par_mhz": "A_par",
    "a_perp_mhz": "A_perp",
}
_FIELD_KEYS = ("b_gauss", "phi_deg", "azimuth_deg")


def _check_keys(data: Mapping[str, Any], allowed, required, what: str) -> None:
    unknown = set(data) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown {what} keys: {sorted(unknown)}")
    missing = set(required) - set(data)
    if missing:
        raise ConfigError(f"missing {what} keys: {sorted(missing)}")


def _as_float(data: Mapping[str, Any], key: str) -> float:
    value = data[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{key} must be a number, got {value!r}")
    return float(value)


@dataclass(frozen=True)
class SpinSystemParams:
    """Physical constants of one defect + nucleus pair (MHz, MHz/G)."""

    D: float = 1351.8
    E: float = 5.6
    gamma_e: float = GAMMA_E_MHZ_PER_G
    gamma_i: float = GAMMA_13C_MHZ_PER_G
    A_par: float = 6.7
    A_perp: float = 5.5

    def __post_init__(self):
        values = (self.D, self.E, self.gamma_e, self.gamma_i, self.A_par, self.A_perp)
        if not all(math.isfinite(v) for v in values):
            raise ConfigError("all spin parameters must be finite")
        if self.D <= 0:
            raise ConfigError(f"D must be positive, got {self.D}")
        if self.gamma_e <= 0:
            raise ConfigError(f"gamma_e must be positive, got {self.gamma_e}")

    def replace(self, **changes) -> "SpinSystemParams":
        return SpinSystemParams(**{**self.__dict__, **changes})

    def to_dict(self) -> dict:
        return {key: getattr(self, attr) for key, attr in _PARAM_KEYS.items()}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "SpinSystemParams":
        _check_keys(data, _PARAM_KEYS, ("d_mhz",), "params")
        kwargs = {attr: _as_float(data, key) for key, attr in _PARAM_KEYS.items() if key in data}
        return cls(**kwargs)


@dataclass(frozen=True)
class FieldConfig:
    """External field: magnitude ``B`` (G), polar tilt ``phi`` and ``azimuth`` (rad)."""

    B: float
    phi: float = 0.0
    azimuth: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.B, self.phi, self.azimuth)):
            raise ConfigError("field values must be finite")
        if self.B < 0:
            raise ConfigError(f"B must be non-negative, got {self.B}")
        if not 0.0 <= self.phi <= math.pi:
            raise ConfigError(f"phi must lie in [0, pi], got {self.phi}")

    @classmethod
    def from_degrees(cls, B: float, phi_deg: float = 0.0, azimuth_deg: float = 0.0) -> "FieldConfig":
        return cls(B, math.radians(phi_deg), math.radians(azimuth_deg))

    @classmethod
    def from_cartesian(cls, bx: float, by: float, bz: float) -> "FieldConfig":
        b = math.sqrt(bx * bx + by * by + bz * bz)
        phi = math.atan2(math.hypot(bx, by), bz)
        return cls(b, phi, math.atan2(by, bx))

    @property
    def Bz(self) -> float:
        return self.B * math.cos(self.phi)

    @property
    def Bperp(self) -> float:
        return self.B * math.sin(self.phi)

    @property
    def vector(self) -> np.ndarray:
        bp = self.Bperp
        return np.array([bp * math.cos(self.azimuth), bp * math.sin(self.azimuth), self.Bz])

    def replace(self, **changes) -> "FieldConfig":
        return FieldConfig(**{**self.__dict__, **changes})

    def to_dict(self) -> dict:
        return {
            "b_gauss": self.B,
            "phi_deg": math.degrees(self.phi),
            "azimuth_deg": math.degrees(self.azimuth),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "FieldConfig":
        _check_keys(data, _FIELD_KEYS, ("b_gauss",), "field")
        values = {k: _as_float(data, k) for k in _FIELD_KEYS if k in data}
        return cls.from_degrees(values["b_gauss"], values.get("phi_deg", 0.0), values.get("azimuth_deg", 0.0))


@dataclass(frozen=True)
class OperatorSet:
    Sx: np.ndarray
    Sy: np.ndarray
    Sz: np.ndarray
    Ix: np.ndarray
    Iy: np.ndarray
    Iz: np.ndarray


def spin1_operators() -> OperatorSet:
    """Spin-1 matrices in the (|+1>, |0>, |-1>) basis and spin-1/2 matrices (up, down)."""
    r = 1.0 / math.sqrt(2.0)
    sx = np.array([[0, r, 0], [r, 0, r], [0, r, 0]], dtype=complex)
    sy = np.array([[0, -1j * r, 0], [1j * r, 0, -1j * r], [0, 1j * r, 0]], dtype=complex)
    sz = np.diag([1.0, 0.0, -1.0]).astype(complex)
    ix = np.array([[0, 0.5], [0.5, 0]], dtype=complex)
    iy = np.array([[0, -0.5j], [0.5j, 0]], dtype=complex)
    iz = np.diag([0.5, -0.5]).astype(complex)
    return OperatorSet(sx, sy, sz, ix, iy, iz)


_OPS = spin1_operators()
_I2 = np.eye(2, dtype=complex)
_I3 = np.eye(3, dtype=complex)


def electron_op(op: np.ndarray) -> np.ndarray:
    """Lift a 3x3 electron operator to the 6x6 product space."""
    return np.kron(op, _I2)


def nuclear_op(op: np.ndarray) -> np.ndarray:
    """Lift a 2x2 nuclear operator to the 6x6 product space."""
    return np.kron(_I3, op)


def ms_projector(ms: int) -> np.ndarray:
    """Projector onto the electron sublevel ``ms`` (both nuclear states)."""
    proj = np.zeros((6, 6), dtype=complex)
    for i, m in enumerate(MS_OF_INDEX):
        if m == ms:
            proj[i, i] = 1.0
    return proj


def electron_hamiltonian(D: float, E: float, gamma_e: float, field: FieldConfig) -> np.ndarray:
    """3x3 electron-only Hamiltonian D Sz^2 + E(Sx^2 - Sy^2) + gamma_e B.S."""
    o = _OPS
    bx, by, bz = field.vector
    return (
        D * (o.Sz @ o.Sz)
        + E * (o.Sx @ o.Sx - o.Sy @ o.Sy)
        + gamma_e * (bx * o.Sx + by * o.Sy + bz * o.Sz)
    )


def build_full_hamiltonian(p: SpinSystemParams, f: FieldConfig, nuclear_detuning: float = 0.0) -> np.ndarray:
    """Full 6x6 Hamiltonian (MHz) in the documented product basis.

    ``nuclear_detuning`` adds an extra ``delta * Iz`` term; it is zero for
    the physical model and is used by ensemble simulations.
    """
    o = _OPS
    bx, by, bz = f.vector
    h = np.kron(electron_hamiltonian(p.D, p.E, p.gamma_e, f), _I2)
    h = h + p.A_par * np.kron(o.Sz, o.Iz)
    h = h + p.A_perp * (np.kron(o.Sx, o.Ix) + np.kron(o.Sy, o.Iy))
    h = h + p.gamma_i * nuclear_op(bx * o.Ix + by * o.Iy + bz * o.Iz)
    if nuclear_detuning:
        h = h + nuclear_detuning * nuclear_op(o.Iz)
    return h


@dataclass(frozen=True)
class EigenSystem:
    levels: np.ndarray
    states: np.ndarray  # columns are eigenvectors
    labels: tuple
    overlaps: np.ndarray  # squared overlap of each state with its label

    def index(self, label: str) -> int:
        return self.labels.index(label)

    def energy(self, label: str) -> float:
        return float(self.levels[self.index(label)])

    def ms_weights(self) -> dict:
        """Electron-manifold weight of every eigenstate, keyed by m_s."""
        w = np.abs(self.states) ** 2
        return {ms: np.array([sum(w[i, k] for i in range(len(MS_OF_INDEX)) if MS_OF_INDEX[i] == ms)
                              for k in range(w.shape[1])]) for ms in (1, 0, -1)}


def _align_degenerate(levels: np.ndarray, vecs: np.ndarray, scale: float) -> np.ndarray:
    # eigh returns an arbitrary basis inside degenerate clusters; rotate it
    # towards the product basis so labels are reproducible.
    vecs = vecs.copy()
    tol = 1e-9 * max(scale, 1.0)
    n = len(levels)
    start = 0
    while start < n:
        stop = start + 1
        while stop < n and levels[stop] - levels[stop - 1] < tol:
            stop += 1
        if stop - start > 1:
            block = vecs[:, start:stop]
            proj = block @ block.conj().T
            weights = np.real(np.diag(proj))
            picks = np.argsort(-weights, kind="stable")[: stop - start]
            cand = proj[:, np.sort(picks)]
            q, _ = np.linalg.qr(cand)
            vecs[:, start:stop] = q
        start = stop
    return vecs


def eigensystem(h: np.ndarray, basis_labels=BASIS_LABELS, warn: bool = True) -> EigenSystem:
    """Diagonalize a Hermitian matrix and label states by dominant basis character.

    Labels come from the squared-overlap argmax. When two states claim the
    same label the conflict is resolved by an optimal one-to-one assignment
    and a :class:`LabelingWarning` is emitted; the same warning fires when a
    label is held with overlap below 0.5.
    """
    h = np.asarray(h)
    levels, vecs = np.linalg.eigh(h)
    vecs = _align_degenerate(levels, vecs, float(np.max(np.abs(h))) if h.size else 1.0)
    weights = np.abs(vecs) ** 2  # weights[basis, state]
    argmax = np.argmax(weights, axis=0)
    if len(set(argmax.tolist())) == len(argmax):
        assign = argmax
    else:
        # small energy-ordered penalty so ties resolve towards lower energy
        cost = -weights.T + 1e-12 * np.arange(len(levels))[:, None]
        rows, cols = linear_sum_assignment(cost)
        assign = np.empty(len(levels), dtype=int)
        assign[rows] = cols
        if warn:
            warnings.warn("eigenstates share a dominant label; resolved by assignment", LabelingWarning,
                          stacklevel=2)
    overlaps = np.array([weights[assign[k], k] for k in range(len(levels))])
    if warn and np.any(overlaps < 0.5):
        warnings.warn(f"low-confidence labels (min overlap {overlaps.min():.3f})", LabelingWarning, stacklevel=2)
    labels = tuple(basis_labels[i] for i in assign)
    return EigenSystem(levels, vecs, labels, overlaps)


def full_eigensystem(p: SpinSystemParams, f: FieldConfig, warn: bool = True) -> EigenSystem:
    return eigensystem(build_full_hamiltonian(p, f), warn=warn)


def _manifold_states(es: EigenSystem, ms: int) -> np.ndarray:
    """Indices of the two eigenstates with the largest weight in manifold ``ms``."""
    w = es.ms_weights()[ms]
    idx = np.argsort(-w, kind="stable")[:2]
    if np.any(w[idx] <= 0.5):
        raise LabelingError(f"no two eigenstates have dominant m_s = {ms} character")
    return idx


def gs_doublet_splitting(p: SpinSystemParams, f: FieldConfig) -> float:
    """Exact splitting (MHz) of the m_s = 0 nuclear doublet from 6x6 diagonalization."""
    es = eigensystem(build_full_hamiltonian(p, f), warn=False)
    i, j = _manifold_states(es, 0)
    return float(abs(es.levels[i] - es.levels[j]))


def manifold_labels(es: EigenSystem) -> dict:
    """Map each basis label to an eigenstate index, one manifold at a time.

    Within each m_s manifold the two eigenstates with largest manifold
    weight are matched to the up/down product states by optimal
    assignment, which stays well defined even when the nuclear
    quantization axis is strongly tilted.
    """
    mapping = {}
    w = np.abs(es.states) ** 2
    idx0 = _manifold_states(es, 0)
    rest = np.array([k for k in range(len(es.levels)) if k not in idx0])
    for basis, idx in (([2, 3], idx0), ([0, 1, 4, 5], rest)):
        # the tiny level-ordered term settles exact ties (zero field, E mixing)
        cost = -w[np.ix_(basis, idx)] + 1e-12 * np.arange(len(basis))[:, None] * np.arange(len(idx))[None, :]
        rows, cols = linear_sum_assignment(cost)
        for r, c in zip(rows, cols):
            mapping[BASIS_LABELS[basis[r]]] = int(idx[c])
    return mapping


def electron_transitions(p: SpinSystemParams, f: FieldConfig) -> list:
    """The four nuclear-spin-conserving m_s = 0 <-> +-1 transition frequencies (MHz).

    Returns ``[(frequency, label), ...]`` sorted by frequency, where the
    label names the m_s = +-1 end of the transition.
    """
    es = eigensystem(build_full_hamiltonian(p, f), warn=False)
    m = manifold_labels(es)
    out = []
    for ms in ("+1", "-1"):
        for nuc in ("up", "down"):
            e_hi = es.levels[m[f"{ms},{nuc}"]]
            e_lo = es.levels[m[f"0,{nuc}"]]
            out.append((float(abs(e_hi - e_lo)), f"{ms},{nuc}"))
    return sorted(out)
