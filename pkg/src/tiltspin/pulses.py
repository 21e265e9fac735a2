"""Pulse-sequence simulation on the 6-dimensional electron-nuclear space.

States are 6x6 density matrices in the product basis of
:mod:`tiltspin.spin_core`. Free evolution uses the full lab-frame
Hamiltonian. Microwave pulses are evaluated in the rotating frame of each
tone, with the rotating-wave approximation applied between the m_s = 0
eigenstates and the addressed m_s = +-1 branch. Every MW source is
phase-continuous: its phase is referenced to the absolute sequence clock,
so coherences picked up between pulses are tracked correctly.

Decoherence is not part of the dynamics; :class:`DecayEnvelope` applies a
phenomenological envelope to the swept signal afterwards.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Sequence, Union

import numpy as np
from scipy import constants

from .errors import ConfigError, PhysicsDomainError
from .spin_core import (
    BASIS_LABELS,
    FieldConfig,
    MS_OF_INDEX,
    SpinSystemParams,
    build_full_hamiltonian,
    eigensystem,
    electron_op,
    gs_doublet_splitting,
    manifold_labels,
    ms_projector,
    spin1_operators,
)

SELECTIVE_LABELS = ("+1,up", "+1,down", "-1,up", "-1,down")
GLOBAL_LABELS = ("global_+1", "global_-1")

_LABEL_ALIASES = {
    "↑": "up", "↓": "down", "−": "-", "|": "", "⟩": "", ">": "", " ": "",
}


def normalize_transition(label: str) -> str:
    """Canonical transition label, accepting forms such as ``|-1,up>`` or ``|−1,↑⟩``."""
    s = str(label)
    for old, new in _LABEL_ALIASES.items():
        s = s.replace(old, new)
    if s in GLOBAL_LABELS:
        return s
    if s.startswith("1,"):
        s = "+" + s
    if s not in SELECTIVE_LABELS:
        raise ConfigError(f"unknown transition label {label!r}")
    return s


def _branch(label: str) -> int:
    return 1 if "+1" in label else -1


# -- sequence elements -------------------------------------------------------


@dataclass(frozen=True)
class Laser:
    duration: float = 1.0
    fidelity: float = 1.0

    def __post_init__(self):
        if self.duration < 0:
            raise ConfigError("laser duration must be non-negative")
        if not 0.0 <= self.fidelity <= 1.0:
            raise ConfigError("laser fidelity must lie in [0, 1]")


@dataclass(frozen=True)
class MwPulse:
    """Microwave pulse; ``transition`` may be one label or a tuple of labels on
    different branches (simultaneous tones)."""

    transition: Union[str, tuple]
    rabi: float
    duration: float
    phase: float = 0.0

    def __post_init__(self):
        labels = self.transition if isinstance(self.transition, tuple) else (self.transition,)
        labels = tuple(normalize_transition(t) for t in labels)
        branches = [_branch(t) for t in labels]
        if len(set(branches)) != len(branches):
            raise ConfigError("simultaneous tones must address different m_s branches")
        object.__setattr__(self, "transition", labels if len(labels) > 1 else labels[0])
        if self.duration < 0:
            raise ConfigError("pulse duration must be non-negative")
        if self.rabi < 0:
            raise ConfigError("rabi frequency must be non-negative")

    @property
    def tones(self) -> tuple:
        return self.transition if isinstance(self.transition, tuple) else (self.transition,)


@dataclass(frozen=True)
class Wait:
    duration: float

    def __post_init__(self):
        if self.duration < 0:
            raise ConfigError("wait duration must be non-negative")


@dataclass(frozen=True)
class Readout:
    pass


Element = Union[Laser, MwPulse, Wait, Readout]


@dataclass(frozen=True)
class Sweep:
    index: int
    param: str
    values: tuple


@dataclass
class PulseSequence:
    elements: list
    sweep: Optional[Sweep] = None
    name: str = ""

    def __post_init__(self):
        self.elements = list(self.elements)
        readouts = [i for i, e in enumerate(self.elements) if isinstance(e, Readout)]
        if readouts != [len(self.elements) - 1]:
            raise ConfigError("a sequence needs exactly one Readout, placed last")
        if self.sweep is not None:
            sw = self.sweep
            if not 0 <= sw.index < len(self.elements) - 1:
                raise ConfigError(f"sweep index {sw.index} does not address an element")
            target = self.elements[sw.index]
            names = {f.name for f in dataclasses.fields(target)}
            if sw.param not in names:
                raise ConfigError(f"{type(target).__name__} has no parameter {sw.param!r}")
            if len(sw.values) == 0:
                raise ConfigError("sweep grid is empty")
            self.sweep = Sweep(sw.index, sw.param, tuple(float(v) for v in sw.values))

    def describe(self) -> list:
        return [element_to_dict(e) for e in self.elements]


def element_to_dict(e: Element) -> dict:
    if isinstance(e, Laser):
        return {"type": "laser", "duration": e.duration, "fidelity": e.fidelity}
    if isinstance(e, MwPulse):
        tr = list(e.transition) if isinstance(e.transition, tuple) else e.transition
        return {"type": "mw", "transition": tr, "rabi_mhz": e.rabi, "duration": e.duration,
                "phase_deg": math.degrees(e.phase)}
    if isinstance(e, Wait):
        return {"type": "wait", "duration": e.duration}
    return {"type": "readout"}


def element_from_dict(d: dict) -> Element:
    d = dict(d)
    kind = d.pop("type", None)
    try:
        if kind == "laser":
            return Laser(**d)
        if kind == "wait":
            return Wait(**d)
        if kind == "readout":
            if d:
                raise ConfigError(f"readout takes no parameters, got {sorted(d)}")
            return Readout()
        if kind == "mw":
            tr = d.pop("transition")
            if isinstance(tr, list):
                tr = tuple(tr)
            rabi = d.pop("rabi_mhz")
            duration = d.pop("duration")
            phase = math.radians(d.pop("phase_deg", 0.0))
            if d:
                raise ConfigError(f"unknown mw keys {sorted(d)}")
            return MwPulse(tr, float(rabi), float(duration), phase)
    except (TypeError, KeyError) as exc:
        raise ConfigError(f"bad {kind} element: {exc}") from exc
    raise ConfigError(f"unknown element type {kind!r}")


def sequence_from_dict(data: dict) -> PulseSequence:
    unknown = set(data) - {"elements", "sweep", "name"}
    if unknown:
        raise ConfigError(f"unknown sequence keys {sorted(unknown)}")
    elements = [element_from_dict(e) for e in data["elements"]]
    sweep = None
    if data.get("sweep") is not None:
        sweep = sweep_from_dict(data["sweep"])
    return PulseSequence(elements, sweep, data.get("name", ""))


def sweep_from_dict(sw: dict) -> Sweep:
    if "values" in sw:
        values = tuple(sw["values"])
    else:
        try:
            values = tuple(np.linspace(sw["start"], sw["stop"], int(sw["num"])).tolist())
        except KeyError as exc:
            raise ConfigError(f"sweep needs values or start/stop/num: missing {exc}") from exc
    return Sweep(int(sw["index"]), str(sw["param"]), values)


def sequence_to_dict(seq: PulseSequence) -> dict:
    out = {"name": seq.name, "elements": seq.describe()}
    if seq.sweep is not None:
        out["sweep"] = {"index": seq.sweep.index, "param": seq.sweep.param, "values": list(seq.sweep.values)}
    return out


# -- decay envelope ----------------------------------------------------------


@dataclass(frozen=True)
class DecayEnvelope:
    """Phenomenological decay constants (us); ``math.inf`` disables a channel."""

    t1: float = math.inf
    t2: float = math.inf
    t2_star: float = math.inf
    exponent: float = 1.0

    def __post_init__(self):
        for name in ("t1", "t2", "t2_star", "exponent"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")

    def factor(self, t, which: str = "t2_star") -> np.ndarray:
        tc = getattr(self, which)
        t = np.asarray(t, dtype=float)
        if math.isinf(tc):
            return np.ones_like(t)
        return np.exp(-((np.abs(t) / tc) ** self.exponent))


@dataclass
class SignalTrace:
    x: np.ndarray
    y: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.x.shape != self.y.shape:
            raise ValueError("x and y must have equal length")


# -- propagation engine ------------------------------------------------------


class LabSystem:
    """Eigen-decomposed lab Hamiltonian plus the operators the simulator needs.

    Everything internal is expressed in the eigenbasis; states passed in
    and out of the public functions are in the product basis.
    """

    def __init__(self, p: SpinSystemParams, f: FieldConfig, nuclear_detuning: float = 0.0):
        self.p, self.f = p, f
        h = build_full_hamiltonian(p, f, nuclear_detuning)
        es = eigensystem(h, warn=False)
        self.levels = es.levels
        self.V = es.states
        self.index = manifold_labels(es)
        self.branch = np.zeros(6, dtype=int)
        for label, k in self.index.items():
            self.branch[k] = MS_OF_INDEX[BASIS_LABELS.index(label)]
        ops = spin1_operators()
        self.X = self.to_eigen(electron_op(math.sqrt(2.0) * ops.Sx))
        self.P0_exact = self.to_eigen(ms_projector(0))
        # optical readout lasts far longer than 1/(electron transition frequency),
        # so P0 elements between different m_s branches average to zero
        same = self.branch[:, None] == self.branch[None, :]
        self.P0 = np.where(same, self.P0_exact, 0.0)
        self._pulse_cache = {}

    def to_eigen(self, op: np.ndarray) -> np.ndarray:
        return self.V.conj().T @ op @ self.V

    def to_bare(self, op: np.ndarray) -> np.ndarray:
        return self.V @ op @ self.V.conj().T

    def line_frequency(self, label: str) -> float:
        label = normalize_transition(label)
        if label in GLOBAL_LABELS:
            ms = label.split("_")[1]
            return 0.5 * (self.line_frequency(f"{ms},up") + self.line_frequency(f"{ms},down"))
        nuc = label.split(",")[1]
        return float(self.levels[self.index[label]] - self.levels[self.index[f"0,{nuc}"]])

    def frame_rates(self, pulse: MwPulse) -> np.ndarray:
        rates = np.zeros(6)
        for tone in pulse.tones:
            b = _branch(tone)
            rates[self.branch == b] = self.line_frequency(tone)
        return rates

    def pulse_unitary(self, pulse: MwPulse) -> np.ndarray:
        """Eigenbasis propagator of ``pulse`` for a pulse starting at t = 0."""
        key = (pulse.tones, pulse.rabi, pulse.duration, pulse.phase)
        cached = self._pulse_cache.get(key)
        if cached is not None:
            return cached
        rates = self.frame_rates(pulse)
        h = np.diag(self.levels - rates).astype(complex)
        zero = self.branch == 0
        for tone in pulse.tones:
            sel = self.branch == _branch(tone)
            couple = np.zeros((6, 6), dtype=complex)
            couple[np.ix_(sel, zero)] = np.exp(-1j * pulse.phase) * self.X[np.ix_(sel, zero)]
            couple[np.ix_(zero, sel)] = np.exp(1j * pulse.phase) * self.X[np.ix_(zero, sel)]
            h += 0.5 * pulse.rabi * couple
        w, v = np.linalg.eigh(h)
        u_rot = (v * np.exp(-2j * np.pi * w * pulse.duration)) @ v.conj().T
        u = np.exp(-2j * np.pi * rates * pulse.duration)[:, None] * u_rot
        self._pulse_cache[key] = u
        return u


@lru_cache(maxsize=512)
def lab_system(p: SpinSystemParams, f: FieldConfig, nuclear_detuning: float = 0.0) -> LabSystem:
    return LabSystem(p, f, nuclear_detuning)


def _laser_eigen(sys: LabSystem, rho: np.ndarray, fidelity: float) -> np.ndarray:
    bare = np.einsum("ij,njk,lk->nil", sys.V, rho, sys.V.conj())
    blocks = bare.reshape(-1, 3, 2, 3, 2)
    nuc = np.einsum("naiak->nik", blocks)
    e = np.zeros((3, 3))
    e[1, 1] = fidelity
    e[0, 0] = e[2, 2] = 0.5 * (1.0 - fidelity)
    out = np.einsum("ab,nij->naibj", e, nuc).reshape(-1, 6, 6)
    return np.einsum("ji,njk,kl->nil", sys.V.conj(), out, sys.V)


def _apply(sys: LabSystem, elem: Element, rho: np.ndarray, clock: np.ndarray, values=None, param=None):
    """Apply one element to a batch of eigenbasis states; returns (rho, clock)."""
    n = rho.shape[0]
    if isinstance(elem, Wait):
        tau = np.asarray(values, dtype=float) if param == "duration" else np.full(n, elem.duration)
        ph = np.exp(-2j * np.pi * np.outer(tau, sys.levels))
        rho = ph[:, :, None] * rho * ph.conj()[:, None, :]
        return rho, clock + tau
    if isinstance(elem, Laser):
        if param == "fidelity":
            rho = np.concatenate([_laser_eigen(sys, rho[i:i + 1], v) for i, v in enumerate(values)])
        else:
            rho = _laser_eigen(sys, rho, elem.fidelity)
        dur = np.asarray(values) if param == "duration" else np.full(n, elem.duration)
        return rho, clock + dur
    if isinstance(elem, MwPulse):
        if param is None:
            pulses = [elem]
            u0 = sys.pulse_unitary(elem)[None]
        else:
            pulses = [dataclasses.replace(elem, **{param: float(v)}) for v in values]
            u0 = np.stack([sys.pulse_unitary(pp) for pp in pulses])
        rates = sys.frame_rates(elem)
        r = np.exp(2j * np.pi * np.outer(clock, rates))
        u = r.conj()[:, :, None] * u0 * r[:, None, :]
        rho = u @ rho @ np.conj(np.swapaxes(u, 1, 2))
        dur = np.array([pp.duration for pp in pulses]) if len(pulses) > 1 else np.full(n, elem.duration)
        return rho, clock + dur
    raise ConfigError(f"cannot apply element {elem!r}")


def _run_batch(sys: LabSystem, seq: PulseSequence, rho0: np.ndarray, secular: bool = True) -> np.ndarray:
    values = seq.sweep.values if seq.sweep is not None else (0.0,)
    n = len(values)
    rho = np.repeat(sys.to_eigen(rho0)[None], n, axis=0)
    clock = np.zeros(n)
    for i, elem in enumerate(seq.elements[:-1]):
        swept = seq.sweep is not None and seq.sweep.index == i
        rho, clock = _apply(sys, elem, rho, clock, values if swept else None, seq.sweep.param if swept else None)
    return np.real(np.einsum("nij,ji->n", rho, sys.P0 if secular else sys.P0_exact))


def maximally_mixed() -> np.ndarray:
    return np.eye(6, dtype=complex) / 6.0


def run_sequence(seq: PulseSequence, p: SpinSystemParams, f: FieldConfig,
                 envelope: Optional[DecayEnvelope] = None, decay: str = "t2_star",
                 nuclear_detuning: float = 0.0, rho0: Optional[np.ndarray] = None,
                 secular_readout: bool = True) -> SignalTrace:
    """Execute ``seq`` for every sweep value; the readout is the m_s = 0 population.

    With ``secular_readout`` (default) the m_s = 0 projector keeps only its
    elements inside each m_s branch of the eigenbasis, which is what a
    readout long compared with the electron transition period measures.
    ``False`` evaluates Tr(rho P0) literally, including terms oscillating
    at the electron transition frequencies.

    With an ``envelope`` the deviation of the signal from its sweep mean
    is multiplied by ``exp(-(x/T)^exponent)`` with T chosen by ``decay``.
    """
    sys = lab_system(p, f, float(nuclear_detuning))
    rho0 = maximally_mixed() if rho0 is None else np.asarray(rho0, dtype=complex)
    y = _run_batch(sys, seq, rho0, secular_readout)
    x = np.asarray(seq.sweep.values if seq.sweep is not None else (0.0,), dtype=float)
    if envelope is not None:
        base = y.mean()
        y = base + (y - base) * envelope.factor(x, decay)
    meta = {"sequence": sequence_to_dict(seq), "params": p.to_dict(), "field": f.to_dict(),
            "nuclear_detuning_mhz": nuclear_detuning}
    return SignalTrace(x, y, meta)


# -- single-state element maps ----------------------------------------------


def apply_laser(state: np.ndarray, fidelity: float = 1.0) -> np.ndarray:
    """Reset the electron to m_s = 0 keeping the nuclear marginal: |0><0| x Tr_e(rho)."""
    blocks = np.asarray(state, dtype=complex).reshape(3, 2, 3, 2)
    nuc = np.einsum("aiak->ik", blocks)
    e = np.zeros((3, 3))
    e[1, 1] = fidelity
    e[0, 0] = e[2, 2] = 0.5 * (1.0 - fidelity)
    return np.einsum("ab,ik->aibk", e, nuc).reshape(6, 6)


def apply_wait(state: np.ndarray, duration: float, p: SpinSystemParams, f: FieldConfig) -> np.ndarray:
    """Free evolution rho -> U rho U^dagger with U = exp(-2 pi i H t)."""
    sys = lab_system(p, f)
    u = sys.V @ np.diag(np.exp(-2j * np.pi * sys.levels * duration)) @ sys.V.conj().T
    return u @ state @ u.conj().T


def mw_unitary(pulse: MwPulse, p: SpinSystemParams, f: FieldConfig, start_time: float = 0.0) -> np.ndarray:
    """Product-basis propagator of a pulse that starts at ``start_time`` on the sequence clock."""
    sys = lab_system(p, f)
    r = np.exp(2j * np.pi * start_time * sys.frame_rates(pulse))
    u = r.conj()[:, None] * sys.pulse_unitary(pulse) * r[None, :]
    return sys.to_bare(u)


def apply_mw(state: np.ndarray, pulse: MwPulse, p: SpinSystemParams, f: FieldConfig,
             start_time: float = 0.0) -> np.ndarray:
    u = mw_unitary(pulse, p, f, start_time)
    return u @ state @ u.conj().T


def readout(state: np.ndarray) -> float:
    return float(np.real(np.trace(state @ ms_projector(0))))


def pure_state(label: str) -> np.ndarray:
    v = np.zeros(6, dtype=complex)
    v[BASIS_LABELS.index(label)] = 1.0
    return np.outer(v, v.conj())


# -- protocol builders -------------------------------------------------------


def pi_duration(rabi: float, n_tones: int = 1) -> float:
    """Duration of a pi pulse; simultaneous tones drive a bright state sqrt(n) faster."""
    return 1.0 / (2.0 * rabi * math.sqrt(n_tones))


def default_polarization_delay(p: SpinSystemParams, f: FieldConfig) -> float:
    """Half of the m_s = 0 nuclear precession period (us), from the exact splitting."""
    split = gs_doublet_splitting(p, f)
    if split <= 0:
        raise PhysicsDomainError("nuclear doublet is degenerate; no precession period")
    return 0.5 / split


def polarization_step(p, f, rabi: float = 1.0, line: str = "-1,down", delay: Optional[float] = None,
                      laser: float = 1.0) -> list:
    """Park one nuclear state in m_s = -1, let the other precess half a period, reset.

    Repeated steps pump the nucleus towards the state that is *not*
    parked, i.e. towards nuclear-down for the default ``line``.
    """
    delay = default_polarization_delay(p, f) if delay is None else delay
    return [MwPulse(line, rabi, pi_duration(rabi)), Wait(delay), Laser(laser)]


def precession_sequence(p, f, tau_grid: Sequence[float], rabi: float = 1.0, line: str = "-1,up",
                        n_polarization: int = 0, pol_line: str = "-1,down",
                        pol_delay: Optional[float] = None) -> PulseSequence:
    """Laser, [polarization steps], pi on ``line``, Wait tau (swept), pi on ``line``, Readout."""
    elems = [Laser()]
    for _ in range(n_polarization):
        elems += polarization_step(p, f, rabi, pol_line, pol_delay)
    pi = MwPulse(line, rabi, pi_duration(rabi))
    elems += [pi, Wait(0.0), pi, Readout()]
    name = "nuclear_precession" + (f"_polarized{n_polarization}" if n_polarization else "")
    return PulseSequence(elems, Sweep(len(elems) - 3, "duration", tuple(tau_grid)), name)


def ramsey_sequence(p, f, tau_grid, rabi: float = 1.0, n_polarization: int = 1,
                    pol_delay: Optional[float] = None) -> PulseSequence:
    """Polarized precession with simultaneous pi pulses on |+1,up> and |-1,up>."""
    elems = [Laser()]
    for _ in range(n_polarization):
        elems += polarization_step(p, f, rabi, "-1,down", pol_delay)
    tones = ("+1,up", "-1,up")
    pi = MwPulse(tones, rabi, pi_duration(rabi, 2))
    elems += [pi, Wait(0.0), pi, Readout()]
    return PulseSequence(elems, Sweep(len(elems) - 3, "duration", tuple(tau_grid)), "nuclear_ramsey")


def simulate_nuclear_ramsey(p: SpinSystemParams, f: FieldConfig, tau_grid, rabi: float = 1.0,
                            n_polarization: int = 1, envelope: Optional[DecayEnvelope] = None,
                            nuclear_detuning: float = 0.0) -> SignalTrace:
    """Nuclear Ramsey fringe at the m_s = 0 precession frequency."""
    seq = ramsey_sequence(p, f, tau_grid, rabi, n_polarization)
    return run_sequence(seq, p, f, envelope, "t2_star", nuclear_detuning)


def echo_sequence(p, f, tau_grid, rabi: float = 1.0, fast_rabi: float = 50.0, n_polarization: int = 1,
                  pol_delay: Optional[float] = None) -> PulseSequence:
    """Ramsey sequence with a nuclear phase flip inserted at the midpoint of tau.

    The flip is two fast, non-selective pi pulses on the m_s = -1 branch
    separated by 1/(2 A_par); while parked in m_s = -1 the nucleus picks
    up a relative phase of about pi from the hyperfine splitting. The
    swept parameter is the duration of each free-evolution half, so the
    total free evolution is 2*x + flip time.
    """
    if p.A_par == 0:
        raise PhysicsDomainError("echo phase flip needs a non-zero A_par")
    elems = [Laser()]
    for _ in range(n_polarization):
        elems += polarization_step(p, f, rabi, "-1,down", pol_delay)
    tones = ("+1,up", "-1,up")
    pi = MwPulse(tones, rabi, pi_duration(rabi, 2))
    fast = MwPulse("global_-1", fast_rabi, pi_duration(fast_rabi))
    gap = 1.0 / (2.0 * abs(p.A_par))
    half = len(elems) + 1
    elems += [pi, Wait(0.0), fast, Wait(gap), fast, Wait(0.0), pi, Readout()]
    seq = PulseSequence(elems, Sweep(half, "duration", tuple(tau_grid)), "nuclear_echo")
    return seq


def _run_with_mirror(seq: PulseSequence, p, f, detuning: float) -> np.ndarray:
    # both half-waits follow the swept value
    sys = lab_system(p, f, float(detuning))
    values = np.asarray(seq.sweep.values)
    n = len(values)
    rho = np.repeat(sys.to_eigen(maximally_mixed())[None], n, axis=0)
    clock = np.zeros(n)
    waits = [i for i, e in enumerate(seq.elements) if isinstance(e, Wait) and e.duration == 0.0]
    for i, elem in enumerate(seq.elements[:-1]):
        if i in waits:
            rho, clock = _apply(sys, elem, rho, clock, values, "duration")
        else:
            rho, clock = _apply(sys, elem, rho, clock)
    return np.real(np.einsum("nij,ji->n", rho, sys.P0))


def gaussian_ensemble(sigma: float, n: int = 201) -> tuple:
    """Deterministic quadrature nodes and weights for a zero-mean Gaussian spread."""
    if sigma <= 0:
        return np.zeros(1), np.ones(1)
    nodes = np.linspace(-4.0 * sigma, 4.0 * sigma, n)
    w = np.exp(-0.5 * (nodes / sigma) ** 2)
    return nodes, w / w.sum()


def simulate_nuclear_echo(p: SpinSystemParams, f: FieldConfig, tau_grid, rabi: float = 1.0,
                          fast_rabi: float = 50.0, n_polarization: int = 1,
                          envelope: Optional[DecayEnvelope] = None, detuning_sigma: float = 0.0,
                          n_detunings: int = 201) -> SignalTrace:
    """Nuclear echo signal versus half-evolution time, optionally ensemble-averaged
    over a quasi-static Gaussian nuclear detuning (MHz)."""
    seq = echo_sequence(p, f, tau_grid, rabi, fast_rabi, n_polarization)
    nodes, weights = gaussian_ensemble(detuning_sigma, n_detunings)
    y = sum(w * _run_with_mirror(seq, p, f, d) for d, w in zip(nodes, weights))
    x = np.asarray(tau_grid, dtype=float)
    if envelope is not None:
        base = y.mean()
        y = base + (y - base) * envelope.factor(2.0 * x, "t2")
    meta = {"sequence": sequence_to_dict(seq), "detuning_sigma_mhz": detuning_sigma}
    return SignalTrace(x, y, meta)


def simulate_ensemble(seq: PulseSequence, p, f, detuning_sigma: float, n_detunings: int = 201) -> SignalTrace:
    """Average ``run_sequence`` over a Gaussian nuclear detuning ensemble."""
    nodes, weights = gaussian_ensemble(detuning_sigma, n_detunings)
    y = sum(w * run_sequence(seq, p, f, nuclear_detuning=d).y for d, w in zip(nodes, weights))
    return SignalTrace(np.asarray(seq.sweep.values), y, {"detuning_sigma_mhz": detuning_sigma})


def coupling_sequence(p, f, tau_grid, strong_rabi: float = 25.0, weak_rabi: float = 0.5,
                      line: str = "-1,down", read_line: str = "-1,up") -> PulseSequence:
    """Hyperfine-resolved electron Ramsey used to read out the coupling strength.

    Laser, strong pi/2 (both nuclear lines excited), Wait tau, strong pi/2,
    weak selective pi, Readout. Strong pulses run at the ``line``
    frequency, so the nuclear-up coherence beats at the hyperfine
    line splitting.
    """
    half = MwPulse(line, strong_rabi, 0.5 * pi_duration(strong_rabi))
    weak = MwPulse(read_line, weak_rabi, pi_duration(weak_rabi))
    elems = [Laser(), half, Wait(0.0), half, weak, Readout()]
    return PulseSequence(elems, Sweep(2, "duration", tuple(tau_grid)), "coupling_strength")


def simulate_coupling_measurement(p: SpinSystemParams, f: FieldConfig, tau_grid, **kwargs) -> SignalTrace:
    return run_sequence(coupling_sequence(p, f, tau_grid, **kwargs), p, f)


# -- polarization bookkeeping --------------------------------------------------


def polarization_model(n_steps, c_sat: float = 0.194, n_sat: float = 1.0):
    """Saturating contrast C(N) = C_sat N / (N + N_sat)."""
    n = np.asarray(n_steps, dtype=float)
    if np.any(n < 0):
        raise PhysicsDomainError("number of polarization steps must be non-negative")
    out = c_sat * n / (n + n_sat)
    return float(out) if out.ndim == 0 else out


def nuclear_spin_temperature(ratio: float, f0_mhz: float) -> float:
    """Effective spin temperature (K) from p_up/p_down = exp(-h f0 / (k_B T))."""
    if not ratio > 0 or not f0_mhz > 0:
        raise PhysicsDomainError("ratio and f0 must be positive")
    if ratio == 1.0:
        raise PhysicsDomainError("equal populations correspond to infinite temperature")
    return -constants.h * f0_mhz * 1e6 / (constants.k * math.log(ratio))


# -- files ------------------------------------------------------------------


def load_sequence(path) -> PulseSequence:
    import json

    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if isinstance(data, list):
        data = {"elements": data}
    return sequence_from_dict(data)


def save_sequence(seq: PulseSequence, path) -> None:
    import json

    with open(path, "w") as fh:
        json.dump(sequence_to_dict(seq), fh, indent=2)
        fh.write("\n")


def save_trace(trace: SignalTrace, path) -> str:
    """Write ``x,y`` CSV plus a ``<path>.json`` metadata sidecar; returns the sidecar path."""
    import csv
    import json

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y"])
        for x, y in zip(trace.x, trace.y):
            w.writerow([repr(float(x)), repr(float(y))])
    sidecar = str(path) + ".json"
    with open(sidecar, "w") as fh:
        json.dump(trace.meta, fh, indent=2, default=float)
        fh.write("\n")
    return sidecar


def load_trace(path) -> SignalTrace:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return SignalTrace(data[:, 0], data[:, 1])
