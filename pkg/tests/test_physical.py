import math

import numpy as np
import pytest
import scipy.linalg

from gkptrap.constants import HBAR
from gkptrap.errors import InvalidInput, InvalidParameters
from gkptrap.fock import OscState, displacement_block, fidelity, quadratures, rotation
from gkptrap.physical import (LatticeModel, LatticeRunConfig, PulseSchedule, PulseSegment,
                              Trajectory, ancilla_phase, depth_profile, displaced_rotation_unitary,
                              displacement_amplitude, force_hamiltonian, frame_rotate,
                              principal_frame, pulsed_displacement_unitary,
                              quench_hamiltonian, quench_segments, quench_squeeze_unitary,
                              reduced_z, run_lattice_preparation, sandwiched_composite,
                              sandwiched_displacement, simulate_quench, solve_pulse_duration,
                              spectator_population, tuneout_force)
from gkptrap.protocols import DeltaSchedule, corrective_prepare
from gkptrap.fock import squeeze
from gkptrap.traps import LatticeSpec, REFERENCE_LATTICE

SPEC = LatticeSpec.from_lab(**REFERENCE_LATTICE)


# -- closed forms ---------------------------------------------------------------------

def test_factored_forms_agree():
    dim, keep = 80, 40
    for t in (0.3, 1.0, 2.5):
        a = pulsed_displacement_unitary(1.1, 1.0, t, dim)
        b = displaced_rotation_unitary(1.1, 1.0, t, dim)
        np.testing.assert_allclose(a[:keep, :keep], b[:keep, :keep], atol=1e-10)
        c = sandwiched_composite(1.1, 1.0, t, dim)
        d = sandwiched_displacement(1.1, 1.0, t, dim)
        np.testing.assert_allclose(c[:keep, :keep], d[:keep, :keep], atol=1e-10)


def test_quarter_period_quench_is_squeeze_and_rotation():
    w, wp, dim = 1.0, 0.5, 60
    V = quench_squeeze_unitary(w, wp, math.pi / (2 * wp), dim)
    ref = squeeze(-math.log(w / wp), dim + 40) @ rotation(math.pi / 2, dim + 40)
    np.testing.assert_allclose(V[:30, :30], ref[:30, :30], atol=1e-10)


def test_quench_hamiltonian_limits():
    H = quench_hamiltonian(1.0, 1.0, 10)
    np.testing.assert_allclose(H, np.diag(np.arange(10.0)), atol=1e-14)
    with pytest.raises(InvalidParameters):
        quench_squeeze_unitary(1.0, -1.0, 1.0, 10)


def test_force_hamiltonian_exponential():
    dim = 60
    H = force_hamiltonian(0.7, 2.0, dim)
    U = scipy.linalg.expm(-1j * 0.4 * H)
    ref = pulsed_displacement_unitary(0.7, 2.0, 0.4, dim)
    np.testing.assert_allclose(U[:20, :20], ref[:20, :20], atol=1e-9)


def test_tuneout_force_zero_curvature_point():
    U1, w1 = 1e-28, 20e-6
    force, shift = tuneout_force(U1, w1)
    pot = lambda z: -U1 * np.exp(-2 * (z - w1 / 2) ** 2 / w1**2)  # noqa: E731
    h = 1e-9
    assert -(pot(h) - pot(-h)) / (2 * h) == pytest.approx(-force, rel=1e-6)
    curv = (pot(h) - 2 * pot(0) + pot(-h)) / h**2
    assert abs(curv) < 1e-6 * U1 / w1**2
    assert shift == pytest.approx(U1 * math.exp(-0.5))


def test_displacement_amplitude_units():
    m, w = SPEC.mass, 2 * math.pi * 6e3
    length = math.sqrt(HBAR / (m * w))
    f = m * w**2 * length  # force moving the trap centre by one oscillator length
    assert displacement_amplitude(f, m, w) == pytest.approx(1.0)
    with pytest.raises(InvalidParameters):
        displacement_amplitude(-1.0, m, w)


def test_pulse_duration_inverse_and_limits():
    t = solve_pulse_duration(1.2, 1.0, 3.0)
    assert 2 * math.sin(3.0 * t / 2) == pytest.approx(1.2)
    with pytest.raises(InvalidParameters):
        solve_pulse_duration(2.5, 1.0, 1.0)


def test_ancilla_phase_compensation():
    # each branch: idle, pulse under force and light shift, idle; after the logged
    # phase is removed only the conditional kick remains
    dim, keep = 70, 30
    w, ad, t = 1.0, 0.9, 0.8
    shift = 0.37 * HBAR
    n = np.diag(np.arange(dim, dtype=float))
    q = quadratures(dim)[0].real
    R = rotation(math.pi - w * t / 2, dim)
    for sgn in (+1, -1):
        H = w * n - sgn * ad * w * q - shift / HBAR * np.eye(dim)
        U = R @ scipy.linalg.expm(-1j * t * H) @ R
        U = U * np.exp(-1j * ancilla_phase(sgn * ad, w, t, shift))
        ref = displacement_block(-2j * sgn * ad * math.sin(w * t / 2), dim)
        np.testing.assert_allclose(U[:keep, :keep], ref[:keep, :keep], atol=1e-9)


def test_start_delay_rotates_kick_direction():
    dim, w, ad, t = 80, 1.0, 0.9, 0.8
    K = sandwiched_displacement(ad, w, t, dim)
    a = np.diag(np.sqrt(np.arange(1, dim)), 1)
    angles = []
    for tau in (0.0, 0.6):
        total = tau + 2 * math.pi / w
        # lab evolution, then undo the free rotation (interaction frame)
        psi = rotation(-w * total, dim) @ K @ rotation(w * tau, dim)[:, 0]
        angles.append(np.angle(np.vdot(psi, a @ psi)))
    assert abs((angles[1] - angles[0]) % (2 * math.pi)) == pytest.approx(0.6, abs=1e-9)


# -- schedule types --------------------------------------------------------------------

def test_segment_validation():
    with pytest.raises(InvalidParameters):
        PulseSegment("laser_blast", 1.0)
    with pytest.raises(InvalidParameters):
        PulseSegment("idle", -1.0)
    with pytest.raises(InvalidParameters):
        PulseSegment("depth_ramp", 1.0, {"start_factor": 1.0, "target_factor": 0.0})
    with pytest.raises(InvalidParameters):
        PulseSegment("depth_ramp", 1.0, {"target_factor": 0.5, "profile": "cosine"})


def test_quench_segments_quarter_period():
    segs = quench_segments(0.1, 20e-6, None, 2 * math.pi * 6e3)
    total = sum(s.duration for s in segs)
    # ramps count half each towards the effective low-depth time
    assert segs[1].duration + segs[0].duration == pytest.approx(
        math.pi / (2 * 2 * math.pi * 6e3 * math.sqrt(0.1)))
    assert PulseSchedule(segs, SPEC, (1, 1, 8)).duration == pytest.approx(total)
    with pytest.raises(InvalidParameters):
        quench_segments(0.1, 1.0, None, 2 * math.pi * 6e3)


def test_depth_profile():
    s = depth_profile(quench_segments(0.1, 1.0, 2.0))
    assert s(0.0) == 1.0 and s(0.5) == pytest.approx(0.55) and s(2.0) == 0.1 and s(4.0) == 1.0


def test_trajectory_csv_is_deterministic(tmp_path):
    tr = Trajectory()
    tr.append(0.0, 1.0, 1.0, 1.0, 0.0, "quench")
    tr.append(1e-6, 0.9, 1.1, 0.99, 1e-9, "quench")
    tr.write_csv(tmp_path / "a.csv")
    tr.write_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert (tmp_path / "a.csv").read_text().splitlines()[0] == "time_s,delta_x,delta_z,ground_pop,leakage,stage"


# -- lattice model ------------------------------------------------------------------------

def test_model_validation():
    with pytest.raises(InvalidParameters):
        LatticeModel(SPEC, (2, 2, 4))


def test_harmonic_ground_state_is_vacuum():
    m = LatticeModel(SPEC, (2, 2, 12), harmonic=True)
    psi = m.ground_state().data
    assert abs(psi[0]) == pytest.approx(1.0, abs=1e-10)


def test_lattice_z_spacing_near_corrected_frequency():
    m = LatticeModel(SPEC, (3, 3, 20))
    assert m.z_spacing() == pytest.approx(m.omega_z, rel=2e-3)


def test_spectator_population_of_ground_state():
    m = LatticeModel(SPEC, (4, 4, 12))
    g = m.ground_state()
    assert spectator_population(g.data, m.dims, m.spectator_ground(1.0)) > 0.999


def test_principal_frame_of_rotated_squeezed_state():
    dim = 60
    psi = rotation(0.4, dim) @ squeeze(0.5, dim)[:, 0]
    theta, cov = principal_frame(np.outer(psi, psi.conj()))
    back = frame_rotate(np.outer(psi, psi.conj()), -theta)
    q = quadratures(dim)[0]
    assert np.trace(q @ q @ back).real == pytest.approx(min(cov), rel=1e-6)
    assert min(cov) == pytest.approx(0.5 * math.exp(-1.0), rel=1e-6)


def _instant_quench_infidelity(dims, harmonic):
    m = LatticeModel(SPEC, dims, harmonic=harmonic)
    wp = m.omega_z * math.sqrt(0.1)
    T = math.pi / (2 * wp)
    tr = simulate_quench(m, [PulseSegment("depth_hold", T, {"factor": 0.1})])
    rz = reduced_z(tr.final_state.data, dims)
    g = reduced_z(m.ground_state().data, dims)
    V = quench_squeeze_unitary(m.omega_z, wp, T, dims[2])
    ref = V @ g @ V.conj().T
    return 1 - fidelity(OscState(rz / np.trace(rz), norm_tol=1e-6),
                        OscState(ref / np.trace(ref), norm_tol=1e-6))


def test_instant_quench_harmonic_matches_closed_form():
    assert _instant_quench_infidelity((1, 1, 60), True) <= 1e-5


def test_instant_quench_lattice_matches_closed_form():
    # anharmonicity and mode coupling are small in the lattice
    assert _instant_quench_infidelity((4, 4, 60), False) <= 1e-4


def test_run_config_validation():
    with pytest.raises(InvalidParameters):
        LatticeRunConfig(mixed_dims=(9, 3, 36))
    with pytest.raises(InvalidParameters):
        LatticeRunConfig(mixed_dims=(3, 3, 30))
    with pytest.raises(InvalidParameters):
        LatticeRunConfig(displacement_mode="magic")
    with pytest.raises(InvalidParameters):
        LatticeRunConfig(deltas=(1.0,), epsilons=(0.0, 0.0))
    assert LatticeRunConfig().to_dict()["squeeze_dims"] == (8, 8, 36)


def test_closed_mode_reproduces_gate_level_protocol():
    cfg = LatticeRunConfig(squeeze_dims=(1, 1, 80), mixed_dims=(1, 1, 80), harmonic=True,
                           displacement_mode="closed", ramp=0.0)
    tr = run_lattice_preparation(cfg)
    info = tr.info
    final = frame_rotate(tr.final_state.data,
                         info["frame_omega"] * (info["t_end"] - info["frame_t0"]) - info["frame_theta0"])
    m = LatticeModel(cfg.trap, (1, 1, 80), harmonic=True)
    wp = m.omega_z * math.sqrt(0.1)
    psi0 = quench_squeeze_unitary(m.omega_z, wp, math.pi / (2 * wp), 80)[:, 0]
    rho0 = frame_rotate(np.outer(psi0, psi0.conj()), -info["frame_theta0"])
    ref = corrective_prepare(None, DeltaSchedule(cfg.deltas), 80, initial=OscState(rho0, norm_tol=1e-6))
    assert 1 - fidelity(OscState(final, norm_tol=1e-6), ref.state) <= 1e-3
    assert [r["delta_x"] for r in tr.records[1:]] == pytest.approx(
        [dx for dx, _ in ref.squeezing_trace[1:]], abs=1e-3)


def test_initial_state_shape_checked():
    m = LatticeModel(SPEC, (1, 1, 12), harmonic=True)
    with pytest.raises(InvalidInput):
        simulate_quench(m, quench_segments(0.1, 0.0, 1e-6), initial=OscState(np.eye(13)[0]))
