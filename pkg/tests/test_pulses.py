import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tiltspin import pulses
from tiltspin.effective import nuclear_frequency
from tiltspin.errors import ConfigError, PhysicsDomainError
from tiltspin.fitting import extract_frequency
from tiltspin.pulses import Laser, MwPulse, PulseSequence, Readout, Sweep, Wait
from tiltspin.spin_core import BASIS_LABELS, FieldConfig, SpinSystemParams, gs_doublet_splitting

P = SpinSystemParams()
SPEC_GRID = [(B, phi) for B in (100.0, 240.0, 400.0) for phi in (1.0, 2.0, 4.0)]
# points where the closed-form frequency itself is more than 1 % from exact diagonalization
CLOSED_FORM_OFF = {(240.0, 4.0), (400.0, 1.0), (400.0, 2.0), (400.0, 4.0)}


def pop(rho, label):
    i = BASIS_LABELS.index(label)
    return float(np.real(rho[i, i]))


def lockin(x, y, f):
    m = np.column_stack([np.ones_like(x), np.cos(2 * np.pi * f * x), np.sin(2 * np.pi * f * x)])
    c, *_ = np.linalg.lstsq(m, y, rcond=None)
    return math.hypot(c[1], c[2])


def precession_trace(B, phi, n_pol=0, rabi=1.0, periods=40, n=1601):
    f = FieldConfig.from_degrees(B, phi)
    fx = gs_doublet_splitting(P, f)
    tau = np.linspace(0.0, periods / fx, n)
    seq = pulses.precession_sequence(P, f, tau, rabi=rabi, n_polarization=n_pol)
    return pulses.run_sequence(seq, P, f), fx


# -- elements and sequences ----------------------------------------------------

def test_label_normalization():
    assert pulses.normalize_transition("|−1,↑⟩") == "-1,up"
    assert pulses.normalize_transition("|1,down>") == "+1,down"
    assert pulses.normalize_transition("global_-1") == "global_-1"
    with pytest.raises(ConfigError):
        pulses.normalize_transition("0,up")


def test_element_validation():
    with pytest.raises(ConfigError):
        Wait(-1.0)
    with pytest.raises(ConfigError):
        MwPulse("-1,up", 1.0, -0.1)
    with pytest.raises(ConfigError):
        MwPulse(("-1,up", "-1,down"), 1.0, 0.1)  # two tones on one branch
    with pytest.raises(ConfigError):
        Laser(fidelity=1.5)


def test_sequence_validation():
    with pytest.raises(ConfigError):
        PulseSequence([Laser()])
    with pytest.raises(ConfigError):
        PulseSequence([Readout(), Laser(), Readout()])
    with pytest.raises(ConfigError):
        PulseSequence([Laser(), Readout()], Sweep(0, "rabi", (1.0,)))
    with pytest.raises(ConfigError):
        PulseSequence([Laser(), Readout()], Sweep(5, "duration", (1.0,)))
    with pytest.raises(ConfigError):
        PulseSequence([Laser(), Wait(0.0), Readout()], Sweep(1, "duration", ()))


def test_laser_readout_is_one():
    seq = PulseSequence([Laser(), Readout()])
    literal = pulses.run_sequence(seq, P, FieldConfig(240.0), secular_readout=False)
    assert literal.y == pytest.approx([1.0], abs=1e-12)
    # the time-averaged readout drops the (A_perp/D)^2 cross-branch terms of bare |0>
    secular = pulses.run_sequence(seq, P, FieldConfig(240.0))
    assert secular.y == pytest.approx([1.0], abs=1e-4)


def test_sequence_json_roundtrip(tmp_path):
    seq = pulses.precession_sequence(P, FieldConfig.from_degrees(240.0, 2.0), [0.0, 1.0, 2.0], n_polarization=1)
    path = tmp_path / "seq.json"
    pulses.save_sequence(seq, path)
    back = pulses.load_sequence(path)
    assert back.elements == seq.elements
    assert back.sweep == seq.sweep


def test_bundled_sequence_loads():
    from tiltspin.cli import data_path

    seq = pulses.load_sequence(data_path("nuclear_precession_sequence.json"))
    assert isinstance(seq.elements[-1], Readout)
    assert seq.sweep.param == "duration" and len(seq.sweep.values) == 1201


def test_sequence_accepts_bare_list(tmp_path):
    path = tmp_path / "list.json"
    path.write_text(json.dumps([{"type": "laser"}, {"type": "readout"}]))
    seq = pulses.load_sequence(path)
    assert len(seq.elements) == 2


def test_trace_csv_and_sidecar(tmp_path):
    trace = pulses.SignalTrace(np.arange(3.0), np.array([0.1, 0.2, 0.3]), {"k": 1})
    sidecar = pulses.save_trace(trace, tmp_path / "t.csv")
    back = pulses.load_trace(tmp_path / "t.csv")
    assert np.array_equal(back.x, trace.x) and np.array_equal(back.y, trace.y)
    assert json.loads(open(sidecar).read()) == {"k": 1}


# -- single-element maps ----------------------------------------------------------

def test_laser_resets_electron_keeps_nucleus():
    out = pulses.apply_laser(pulses.pure_state("-1,up"))
    assert np.allclose(out, pulses.pure_state("0,up"))
    mixed = pulses.apply_laser(pulses.maximally_mixed())
    expected = np.zeros((6, 6))
    expected[2, 2] = expected[3, 3] = 0.5
    assert np.allclose(mixed, expected)


def test_laser_fidelity():
    out = pulses.apply_laser(pulses.pure_state("-1,up"), fidelity=0.9)
    assert pop(out, "0,up") == pytest.approx(0.9)
    assert pop(out, "+1,up") == pop(out, "-1,up") == pytest.approx(0.05)


def test_selective_pi_pulse(field_240_2):
    f = FieldConfig(240.0)
    pi = MwPulse("-1,up", 0.5, pulses.pi_duration(0.5))
    out = pulses.apply_mw(pulses.pure_state("0,up"), pi, P, f)
    assert pop(out, "-1,up") > 0.99
    assert pop(out, "-1,down") < 0.01
    stay = pulses.apply_mw(pulses.pure_state("0,down"), pi, P, f)
    bound = 0.5**2 / (0.5**2 + P.A_par**2)
    assert 1 - pop(stay, "0,down") < bound


def test_strong_pulse_is_non_selective():
    f = FieldConfig(240.0)
    pi = MwPulse("global_-1", 25.0, pulses.pi_duration(25.0))
    for nuc in ("up", "down"):
        out = pulses.apply_mw(pulses.pure_state(f"0,{nuc}"), pi, P, f)
        assert pop(out, f"-1,{nuc}") > 0.95


def test_wait_zero_and_eigenstates(field_240_2):
    rho = pulses.pure_state("0,up")
    assert np.allclose(pulses.apply_wait(rho, 0.0, P, field_240_2), rho)
    sys = pulses.lab_system(P, field_240_2)
    v = sys.V[:, 3]
    eig = np.outer(v, v.conj())
    assert np.allclose(pulses.apply_wait(eig, 7.3, P, field_240_2), eig, atol=1e-12)


def test_conditional_phase_in_minus_one_branch():
    # nucleus in m_s = -1 precesses at the hyperfine-shifted frequency
    f = FieldConfig(240.0)
    plus = np.zeros(6, dtype=complex)
    plus[4] = plus[5] = 1 / math.sqrt(2)
    rho = np.outer(plus, plus.conj())
    t = np.linspace(0.0, 3.0, 1501)
    x = [2 * np.real(pulses.apply_wait(rho, tt, P, f)[4, 5]) for tt in t]
    got = extract_frequency(t, np.array(x))
    expected = abs(P.A_par / 2 * 2 - P.gamma_i * 240.0)  # A_par minus the bare Zeeman term
    assert got == pytest.approx(expected, rel=0.01)


def _random_state(seed):
    rng = np.random.default_rng(seed)
    z = rng.normal(size=(6, 6)) + 1j * rng.normal(size=(6, 6))
    rho = z @ z.conj().T
    return rho / np.trace(rho)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), rabi=st.floats(0.1, 30.0), dur=st.floats(0.0, 2.0),
       phase=st.floats(0.0, 6.3), t0=st.floats(0.0, 10.0),
       label=st.sampled_from(["+1,up", "+1,down", "-1,up", "-1,down", "global_+1", "global_-1"]))
def test_pulse_maps_are_unitary_channels(seed, rabi, dur, phase, t0, label):
    f = FieldConfig.from_degrees(240.0, 2.0)
    rho = _random_state(seed)
    out = pulses.apply_mw(rho, MwPulse(label, rabi, dur, phase), P, f, start_time=t0)
    assert abs(np.trace(out) - 1) < 1e-10
    assert abs(np.trace(out @ out) - np.trace(rho @ rho)) < 1e-10
    assert np.linalg.eigvalsh(out).min() > -1e-9
    lo = pulses.apply_laser(rho)
    assert abs(np.trace(lo) - 1) < 1e-12
    assert np.linalg.eigvalsh(lo).min() > -1e-12


def test_batched_engine_matches_element_maps(field_240_2):
    # run_sequence works in the eigenbasis with a global clock; replay by hand
    f = field_240_2
    pi = MwPulse("-1,up", 1.0, 0.5)
    tau = 3.7
    seq = PulseSequence([Laser(), pi, Wait(tau), pi, Readout()])
    rho = pulses.apply_laser(pulses.maximally_mixed())
    rho = pulses.apply_mw(rho, pi, P, f, start_time=1.0)
    rho = pulses.apply_wait(rho, tau, P, f)
    rho = pulses.apply_mw(rho, pi, P, f, start_time=1.5 + tau)
    literal = pulses.run_sequence(seq, P, f, secular_readout=False).y[0]
    assert literal == pytest.approx(pulses.readout(rho), abs=1e-10)


# -- protocols ---------------------------------------------------------------------

@pytest.mark.parametrize("B, phi", SPEC_GRID)
def test_precession_frequency_matches_exact_oracle(B, phi):
    trace, fx = precession_trace(B, phi)
    assert np.all(trace.y > -1e-9) and np.all(trace.y < 1 + 1e-9)
    assert extract_frequency(trace.x, trace.y) == pytest.approx(fx, rel=1e-3)


@pytest.mark.parametrize("B, phi", [
    pytest.param(B, phi, marks=pytest.mark.xfail((B, phi) in CLOSED_FORM_OFF, strict=True,
                                                 reason="closed form is 1.6-11 % off here"))
    for B, phi in SPEC_GRID
])
def test_precession_frequency_within_one_percent_of_closed_form(B, phi):
    trace, _ = precession_trace(B, phi)
    fe = nuclear_frequency(P, FieldConfig.from_degrees(B, phi))
    assert abs(extract_frequency(trace.x, trace.y) - fe) / fe < 1e-2


@pytest.mark.parametrize("B, phi", SPEC_GRID)
def test_polarization_increases_amplitude(B, phi):
    # rabi between f_nucl and A_par keeps both pi pulses selective and the swap clean
    unpol, fx = precession_trace(B, phi, 0, rabi=3.0)
    pol, _ = precession_trace(B, phi, 1, rabi=3.0)
    assert lockin(pol.x, pol.y, fx) > lockin(unpol.x, unpol.y, fx)


def test_larmor_linearity_at_low_field():
    bs = np.linspace(20.0, 150.0, 6)
    fs = []
    for B in bs:
        trace, _ = precession_trace(B, 2.0, periods=30, n=1201)
        fs.append(extract_frequency(trace.x, trace.y))
    fs = np.array(fs)
    coef = np.polyfit(bs, fs, 1)
    resid = fs - np.polyval(coef, bs)
    r2 = 1 - np.sum(resid**2) / np.sum((fs - fs.mean()) ** 2)
    assert r2 > 0.999
    assert abs(coef[1]) < 0.01  # near the origin


def test_secular_readout_removes_electron_coherence():
    f = FieldConfig.from_degrees(400.0, 4.0)
    fx = gs_doublet_splitting(P, f)
    tau = np.linspace(0.0, 40 / fx, 1601)
    seq = pulses.precession_sequence(P, f, tau)
    sec = pulses.run_sequence(seq, P, f).y
    lit = pulses.run_sequence(seq, P, f, secular_readout=False).y
    assert extract_frequency(tau, sec) == pytest.approx(fx, rel=1e-3)
    assert np.max(np.abs(sec - lit)) > 1e-3  # the literal projector sees fast terms


def test_ramsey_fringe_and_envelope(field_240_2):
    fx = gs_doublet_splitting(P, field_240_2)
    tau = np.linspace(0.0, 300.0, 6001)
    bare = pulses.simulate_nuclear_ramsey(P, field_240_2, tau)
    assert extract_frequency(tau, bare.y) == pytest.approx(fx, rel=1e-3)
    env = pulses.DecayEnvelope(t2_star=102.2)
    damped = pulses.simulate_nuclear_ramsey(P, field_240_2, tau, envelope=env)
    k = np.searchsorted(tau, 102.2)
    base = bare.y.mean()
    assert (damped.y[k] - base) / (bare.y[k] - base) == pytest.approx(math.exp(-1), rel=1e-3)


def _fringe_phase(tau, y, f):
    m = np.column_stack([np.ones_like(tau), np.cos(2 * np.pi * f * tau), np.sin(2 * np.pi * f * tau)])
    c, *_ = np.linalg.lstsq(m, y, rcond=None)
    return math.atan2(c[2], c[1])


def test_ramsey_phase_offset_comes_from_pulse_length(field_240_2):
    # with instantaneous pulses tau = 0 is a fringe extremum; finite pulses add
    # precession during the drive, so the offset scales with 1/rabi while the
    # tones stay selective (rabi well below A_par)
    fx = gs_doublet_splitting(P, field_240_2)
    tau = np.linspace(0.0, 100.0, 4001)
    ph = [_fringe_phase(tau, pulses.simulate_nuclear_ramsey(P, field_240_2, tau, rabi=r).y, fx)
          for r in (0.5, 1.0, 2.0)]
    assert ph[0] / ph[1] == pytest.approx(2.0, rel=0.1)
    assert ph[1] / ph[2] == pytest.approx(2.0, rel=0.1)
    assert abs(ph[2]) < math.radians(40.0)


def test_echo_outlasts_ramsey_under_detuning_spread(field_240_2):
    fx = gs_doublet_splitting(P, field_240_2)
    tau = np.linspace(0.0, 60.0, 241)
    sigma = 0.005
    echo = pulses.simulate_nuclear_echo(P, field_240_2, tau, detuning_sigma=sigma, n_detunings=51)
    ram = pulses.simulate_ensemble(pulses.ramsey_sequence(P, field_240_2, 2 * tau), P, field_240_2, sigma, 51)
    late = tau > 40.0
    assert np.ptp(echo.y[late]) > 1.5 * np.ptp(ram.y[late])


def test_echo_envelope_uses_t2(field_240_2):
    tau = np.linspace(0.0, 100.0, 201)
    bare = pulses.simulate_nuclear_echo(P, field_240_2, tau)
    env = pulses.simulate_nuclear_echo(P, field_240_2, tau, envelope=pulses.DecayEnvelope(t2=151.0))
    base = bare.y.mean()
    expected = base + (bare.y - base) * np.exp(-2 * tau / 151.0)
    assert np.allclose(env.y, expected, atol=1e-12)


def test_echo_requires_hyperfine(field_240_2):
    with pytest.raises(PhysicsDomainError):
        pulses.echo_sequence(P.replace(A_par=0.0), field_240_2, [0.0])


@pytest.mark.parametrize("a_par", [6.7, 3.35])
def test_coupling_measurement_frequency(a_par):
    p = P.replace(A_par=a_par)
    tau = np.linspace(0.0, 3.0, 1501)
    trace = pulses.simulate_coupling_measurement(p, FieldConfig(240.0), tau)
    assert extract_frequency(tau, trace.y) == pytest.approx(a_par, rel=0.01)


def test_coupling_measurement_flat_without_hyperfine():
    p = P.replace(A_par=0.0, A_perp=0.0)
    tau = np.linspace(0.0, 3.0, 301)
    trace = pulses.simulate_coupling_measurement(p, FieldConfig(240.0), tau)
    assert np.ptp(trace.y) < 1e-9


def test_polarization_model():
    assert pulses.polarization_model(0) == 0.0
    assert pulses.polarization_model(1e12) == pytest.approx(0.194)
    assert pulses.polarization_model(2.5, n_sat=2.5) == pytest.approx(0.097)
    with pytest.raises(PhysicsDomainError):
        pulses.polarization_model(-1)


def test_spin_temperature():
    t = pulses.nuclear_spin_temperature(0.0455 / 0.9545, 0.257)
    assert t == pytest.approx(4.1e-6, rel=0.02)
    with pytest.raises(PhysicsDomainError):
        pulses.nuclear_spin_temperature(1.0, 0.257)
    with pytest.raises(PhysicsDomainError):
        pulses.nuclear_spin_temperature(0.5, 0.0)


def test_envelope_validation():
    with pytest.raises(ConfigError):
        pulses.DecayEnvelope(t1=0.0)
    assert np.all(pulses.DecayEnvelope().factor(np.arange(5.0)) == 1.0)
