import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tiltspin import tomography as tm
from tiltspin.errors import GeometryError, PhysicsDomainError, TomographyWarning

BELL_CORR = {k: 0.0 for k in tm.PAIRS} | {"ZZ": 1.0, "XX": 1.0, "YY": -1.0}


def test_readout_quads_fix_halving_convention():
    q = tm.ReadoutQuad(0.982, 0.018, 0.058)
    assert q.sigma4 == pytest.approx(0.942)
    assert tm.expectation_from_readouts(q) == pytest.approx(0.924, abs=1e-12)
    assert tm.expectation_from_readouts(tm.ReadoutQuad(1.0, 0.0, 0.0)) == 1.0
    assert tm.expectation_from_readouts(tm.ReadoutQuad(0.433, 0.385, 0.471)) == pytest.approx(0.144, abs=1e-3)


def test_inconsistent_quad_warns():
    with pytest.warns(TomographyWarning):
        tm.expectation_from_readouts(tm.ReadoutQuad(0.9, 0.9, 0.9))


def test_record_validation():
    with pytest.raises(PhysicsDomainError):
        tm.TomographyRecord1Q(1.2, 0.0, 0.0)
    with pytest.warns(TomographyWarning):
        tm.TomographyRecord1Q(0.8, 0.8, 0.0)
    with pytest.raises(PhysicsDomainError):
        tm.TomographyRecord2Q({"ZZ": 1.0})


def test_reconstruct_1q_basics():
    assert np.allclose(tm.reconstruct_1q(tm.TomographyRecord1Q(0, 0, 1)), tm.target_state("zero"))
    rho = tm.reconstruct_1q(tm.TomographyRecord1Q(0.0394, -0.1555, 0.9353))
    assert rho[0, 0].real == pytest.approx(0.96765, abs=1e-12)
    rho = tm.reconstruct_1q(tm.TomographyRecord1Q(0.1475, 0.1050, 0.8574))
    assert rho[0, 0].real == pytest.approx(0.9287, abs=1e-12)


def test_reconstruct_2q_basics():
    zero = tm.reconstruct_2q(tm.TomographyRecord2Q({k: 0.0 for k in tm.PAIRS}))
    assert np.allclose(zero, np.eye(4) / 4)
    # ZZ = XX = 1, YY = -1 are the correlators of (|00> + |11>)/sqrt 2
    bell = tm.reconstruct_2q(tm.TomographyRecord2Q(BELL_CORR))
    assert np.allclose(bell, tm.target_state("bell_phi_plus"))
    assert tm.fidelity(bell, "bell_psi_plus") == pytest.approx(0.0, abs=1e-12)


def test_marginals_enter_when_given():
    rec = tm.TomographyRecord2Q({k: 0.0 for k in tm.PAIRS}, electron=(0.0, 0.0, 0.5))
    rho = tm.reconstruct_2q(rec)
    assert tm.pauli_expectations(rho)["ZI"] == pytest.approx(0.5)


def test_fidelity_conventions():
    for name in ("zero", "one", "bell_phi_plus", "bell_psi_plus"):
        t = tm.target_state(name)
        assert tm.fidelity(t, name, "overlap") == pytest.approx(1.0)
        assert tm.fidelity(t, name, "uhlmann") == pytest.approx(1.0, abs=1e-7)
    with pytest.raises(PhysicsDomainError):
        tm.fidelity(np.diag([1.1, -0.1]).astype(complex), "zero", "uhlmann")
    with pytest.raises(PhysicsDomainError):
        tm.fidelity(np.eye(2) / 2, "zero", "bogus")
    with pytest.raises(PhysicsDomainError):
        tm.fidelity(np.eye(2) / 2, "bell_phi_plus")


def test_table_fidelities():
    rho1 = tm.reconstruct_1q(tm.TomographyRecord1Q(0.0394, -0.1555, 0.9353))
    assert tm.fidelity(rho1, "zero") == pytest.approx(0.9677, abs=1e-4)
    corr = {"ZZ": 0.924, "XX": 0.851, "YY": -0.783, "XY": 0.144, "XZ": -0.037, "YX": 0.036,
            "YZ": 0.001, "ZX": -0.062, "ZY": 0.097}
    with pytest.warns(TomographyWarning):
        rho = tm.reconstruct_2q(tm.TomographyRecord2Q(corr))
    assert tm.fidelity(rho, "bell_phi_plus") == pytest.approx((1 + 0.924 + 0.851 + 0.783) / 4, abs=1e-12)


def test_project_psd():
    psd = tm.reconstruct_1q(tm.TomographyRecord1Q(0.1, 0.2, 0.3))
    assert np.allclose(tm.project_psd(psd), psd, atol=1e-12)
    assert np.allclose(tm.project_psd(np.diag([1.1, -0.1]).astype(complex)), np.diag([1.0, 0.0]))


def test_project_psd_on_two_qubit_record_moves_fidelity_little():
    corr = {"ZZ": 0.924, "XX": 0.851, "YY": -0.783, "XY": 0.144, "XZ": -0.037, "YX": 0.036,
            "YZ": 0.001, "ZX": -0.062, "ZY": 0.097}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        raw = tm.reconstruct_2q(tm.TomographyRecord2Q(corr))
    assert tm.eigenvalues(raw).min() < -0.02
    proj = tm.project_psd(raw)
    assert tm.eigenvalues(proj).min() >= -1e-12
    assert np.trace(proj).real == pytest.approx(1.0)
    f_raw, f_proj = tm.fidelity(raw, "bell_phi_plus"), tm.fidelity(proj, "bell_phi_plus")
    assert abs(f_raw - f_proj) < 0.02
    # golden value of the simplex projection
    assert f_proj == pytest.approx(0.8814, abs=1e-4)


def test_tilted_pulse_states():
    assert np.allclose(tm.tilted_pulse_state(math.pi / 2, "pi"), [0, -1j])
    assert np.allclose(tm.tilted_pulse_state(0.0, "pi"), [-1j, 0])
    psi = tm.tilted_pulse_state(math.radians(-42.03), "pi")
    assert abs(psi[1]) ** 2 == pytest.approx(0.448, abs=1e-3)
    with pytest.raises(PhysicsDomainError):
        tm.tilted_pulse_state(0.1, "two_pi")


def test_measurement_axes():
    ax = tm.measurement_axes(math.pi / 4)
    assert np.allclose(ax[1], [1, 0, 0])
    ax = tm.measurement_axes(math.radians(-42.0))
    assert np.linalg.matrix_rank(ax[:, [0, 2]]) == 2
    for i in range(3):
        for j in range(i + 1, 3):
            assert abs(abs(ax[i] @ ax[j]) - 1) > 1e-6
    with pytest.raises(GeometryError):
        tm.measurement_axes(0.0)
    # at pi/2 the first two axes are antiparallel as well
    with pytest.raises(GeometryError):
        tm.measurement_axes(math.pi / 2)


def test_reconstruct_xz():
    axes = tm.measurement_axes(math.radians(30.0))
    est = tm.reconstruct_xz(axes[:, [0, 2]] @ [0.6, 0.8], axes)
    assert (est.x, est.z) == pytest.approx((0.6, 0.8), abs=1e-12)
    assert est.residual < 1e-12
    est = tm.reconstruct_xz(axes[:, 2], axes)
    assert (est.x, est.z) == pytest.approx((0.0, 1.0), abs=1e-12)
    noisy = tm.reconstruct_xz(axes[:, [0, 2]] @ [0.6, 0.8] + [0.01, -0.02, 0.01], axes)
    assert noisy.residual > 0
    with pytest.raises(GeometryError):
        tm.reconstruct_xz([1.0, 1.0, 1.0], [[0, 0, 1], [0, 0, 1], [0, 0, -1]])


bloch = st.tuples(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1)).filter(
    lambda v: math.hypot(*v) <= 1.0)


@settings(max_examples=100, deadline=None)
@given(v=bloch)
def test_1q_roundtrip(v):
    rho = tm.reconstruct_1q(tm.TomographyRecord1Q(*v))
    assert abs(np.trace(rho) - 1) < 1e-12
    assert np.allclose(rho, rho.conj().T, atol=1e-12)
    e = tm.pauli_expectations(rho)
    assert (e["X"], e["Y"], e["Z"]) == pytest.approx(v, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(vals=st.lists(st.floats(-1, 1), min_size=9, max_size=9))
def test_2q_roundtrip(vals):
    corr = dict(zip(tm.PAIRS, vals))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rho = tm.reconstruct_2q(tm.TomographyRecord2Q(corr))
    e = tm.pauli_expectations(rho)
    for k, v in corr.items():
        assert e[k] == pytest.approx(v, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(a=bloch, b=bloch, t=st.floats(0, 1))
def test_overlap_is_linear_and_uhlmann_squares_to_overlap(a, b, t):
    ra = tm.reconstruct_1q(tm.TomographyRecord1Q(*a))
    rb = tm.reconstruct_1q(tm.TomographyRecord1Q(*b))
    mix = t * ra + (1 - t) * rb
    assert tm.fidelity(mix, "zero") == pytest.approx(t * tm.fidelity(ra, "zero") + (1 - t) * tm.fidelity(rb, "zero"),
                                                     abs=1e-12)
    assert tm.fidelity(ra, "one", "uhlmann") ** 2 == pytest.approx(tm.fidelity(ra, "one"), abs=1e-7)


@settings(max_examples=50, deadline=None)
@given(theta=st.floats(-10, 10))
def test_tilted_states_unit_norm(theta):
    for nominal in ("half_pi", "pi"):
        assert np.linalg.norm(tm.tilted_pulse_state(theta, nominal)) == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(w=st.lists(st.floats(-0.5, 1.5), min_size=4, max_size=4))
def test_project_psd_is_idempotent_and_nearest_in_spectrum(w):
    w = np.array(w)
    if abs(w.sum()) < 1e-3:
        w[0] += 1.0
    w = w / w.sum()
    rng = np.random.default_rng(0)
    q, _ = np.linalg.qr(rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4)))
    rho = (q * w) @ q.conj().T
    p1 = tm.project_psd(rho)
    assert tm.eigenvalues(p1).min() > -1e-12
    assert np.trace(p1).real == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(tm.project_psd(p1), p1, atol=1e-10)
