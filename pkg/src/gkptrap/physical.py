"""Pulse-level simulation of GKP preparation in an optical lattice.

The GKP mode is the weakly confined z axis of a square 2D lattice; x and y are
spectators. Two stages are simulated:

1. a depth quench (ramp down, hold, ramp up) that squeezes the z motion,
   propagated as a pure state of the three motional modes;
2. corrective rounds driven by state-dependent tune-out beams, propagated as
   a density matrix of ancilla x motion with reduced spectator cutoffs.

Motional Hamiltonians are in rad/s and are written in the Fock bases of the
z oscillator with the spectator zero-point coupling absorbed (frequency
``omega_z sqrt(1 - 2 eps_zx)``) and of the bare x, y oscillators. Trap and
beam potentials enter as exact functions of the position operators, so every
anharmonic order is kept.

Effective squeezings are reported in an interaction frame rotating at the
measured z level spacing, offset so that the squeezed quadrature lies along q
when the quench ends.
"""
from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg

from .constants import HBAR, SQRT_PI
from .errors import InvalidInput, InvalidParameters
from .evolution import EvolutionConfig, ProductSum, evolve
from .fock import (OscState, displacement_block, quadratures, rotation, squeeze,
                   squeezed_vacuum)
from .gkp import effective_squeezing
from .protocols import HADAMARD, rx
from .traps import LatticeSpec, REFERENCE_LATTICE, corrected_omega_z, lattice_params, lattice_profiles


# -- closed-form unitaries --------------------------------------------------------

def quench_squeeze_unitary(omega, omega_prime, T, dim, pad=40):
    """``S(-r) S(r e^{-2i w' T}) exp(-i w' T n)`` with ``r = ln(w / w') / 2``.

    Evolution for time ``T`` after the trap frequency jumps from ``omega`` to
    ``omega_prime`` (up to a global phase). At ``T = pi / (2 w')`` this is
    ``S(-ln(w / w')) R(pi/2)``. Built on ``dim + pad`` levels and cropped.
    """
    if not (omega > 0 and omega_prime > 0):
        raise InvalidParameters("frequencies must be positive")
    r = 0.5 * math.log(omega / omega_prime)
    big = dim + pad
    V = squeeze(-r, big) @ squeeze(r * np.exp(-2j * omega_prime * T), big) @ rotation(omega_prime * T, big)
    return V[:dim, :dim]


def quench_hamiltonian(omega, omega_prime, dim):
    """``w n + (w'^2 - w^2) / (2 w) q^2``: the oscillator after a depth jump."""
    q = quadratures(dim + 2)[0]
    q2 = (q @ q)[:dim, :dim]
    return omega * np.diag(np.arange(dim, dtype=float)) + (omega_prime**2 - omega**2) / (2 * omega) * q2


def tuneout_force(peak_U1, waist_w1):
    """Force (N) and energy shift (J) of a Gaussian beam offset by ``w1 / 2``.

    At that offset the beam profile has zero curvature, so the atom feels a
    pure linear force ``2 e^{-1/2} U1 / w1`` and an energy shift ``e^{-1/2} U1``.
    """
    if not (peak_U1 > 0 and waist_w1 > 0):
        raise InvalidParameters("peak_U1 and waist_w1 must be positive")
    g = math.exp(-0.5)
    return 2 * g * peak_U1 / waist_w1, g * peak_U1


def displacement_amplitude(force, mass, omega):
    """Shift of the trap centre in quadrature units, ``f / sqrt(hbar m w^3)``."""
    if force < 0 or not (mass > 0 and omega > 0):
        raise InvalidParameters("force must be non-negative, mass and omega positive")
    return force / math.sqrt(HBAR * mass * omega**3)


def force_hamiltonian(alpha_d, omega, dim):
    """``w n - alpha_d w q``: harmonic trap plus a constant force."""
    q = quadratures(dim)[0]
    return omega * np.diag(np.arange(dim, dtype=float)) - alpha_d * omega * q


def pulse_phase(alpha_d, omega, t):
    """``theta(t) = alpha_d^2 (w t - sin w t) / 2``."""
    return 0.5 * alpha_d**2 * (omega * t - math.sin(omega * t))


def pulsed_displacement_unitary(alpha_d, omega, t, dim):
    """Evolution under :func:`force_hamiltonian` for time ``t``.

    ``D(alpha_d (1 - e^{-i w t})) R(w t) e^{i theta(t)}`` with exact
    displacement matrix elements.
    """
    D = displacement_block(alpha_d * (1 - np.exp(-1j * omega * t)), dim)
    return D @ rotation(omega * t, dim) * np.exp(1j * pulse_phase(alpha_d, omega, t))


def displaced_rotation_unitary(alpha_d, omega, t, dim):
    """Factored form ``D(alpha_d) R(w t) D(-alpha_d) e^{i alpha_d^2 w t / 2}``."""
    return (displacement_block(alpha_d, dim) @ rotation(omega * t, dim)
            @ displacement_block(-alpha_d, dim) * np.exp(0.5j * alpha_d**2 * omega * t))


def sandwiched_displacement(alpha_d, omega, t, dim):
    """Idle, force pulse of length ``t``, idle; one full period in total.

    Equals ``D(-2i alpha_d sin(w t / 2)) e^{i theta(t)}``: a pure momentum
    kick whose direction does not depend on ``t``.
    """
    return displacement_block(-2j * alpha_d * math.sin(omega * t / 2), dim) * np.exp(
        1j * pulse_phase(alpha_d, omega, t))


def sandwiched_composite(alpha_d, omega, t, dim):
    """The three factors of :func:`sandwiched_displacement` multiplied explicitly."""
    R = rotation(math.pi - omega * t / 2, dim)
    return R @ pulsed_displacement_unitary(alpha_d, omega, t, dim) @ R


def solve_pulse_duration(target_distance, alpha_d, omega):
    """Shortest ``t`` with ``2 alpha_d sin(w t / 2) = target_distance``."""
    if not (alpha_d > 0 and omega > 0) or target_distance < 0:
        raise InvalidParameters("alpha_d and omega must be positive, distance non-negative")
    if target_distance > 2 * alpha_d * (1 + 1e-12):
        raise InvalidParameters(f"distance {target_distance:.4g} exceeds the reachable 2 alpha_d = "
                                f"{2 * alpha_d:.4g}")
    return 2 * math.asin(min(1.0, target_distance / (2 * alpha_d))) / omega


# -- schedule types -----------------------------------------------------------------

SEGMENT_KINDS = ("depth_ramp", "depth_hold", "tuneout_pulse", "idle", "ancilla_rotation",
                 "ancilla_reset", "phase_correction")


@dataclass(frozen=True)
class PulseSegment:
    """One step of a pulse schedule.

    ``params`` by kind: ``depth_ramp`` {start_factor, target_factor, profile};
    ``depth_hold`` {factor}; ``tuneout_pulse`` {peak_U1, waist_w1, offset,
    target_state, sign, distance, direction}; ``ancilla_rotation``
    {gate, angle, rabi}; ``phase_correction`` {phases}.
    """

    kind: str
    duration: float
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in SEGMENT_KINDS:
            raise InvalidParameters(f"unknown segment kind {self.kind!r}")
        if not (self.duration >= 0 and math.isfinite(self.duration)):
            raise InvalidParameters("segment duration must be finite and >= 0")
        p = self.params
        if self.kind == "depth_ramp":
            for key in ("start_factor", "target_factor"):
                if not 0 < p.get(key, 1.0) <= 1:
                    raise InvalidParameters(f"{key} must lie in (0, 1]")
            if p.get("profile", "linear") != "linear":
                raise InvalidParameters("only linear ramps are implemented")
        if self.kind == "tuneout_pulse" and not p.get("offset", 1.0) > 0:
            raise InvalidParameters("beam offset must be positive")


@dataclass
class PulseSchedule:
    """Ordered segments plus the trap and the per-mode cutoffs."""

    segments: list
    trap: LatticeSpec
    dims: tuple
    phase_log: list = field(default_factory=list)

    @property
    def duration(self):
        return sum(s.duration for s in self.segments)


@dataclass
class Trajectory:
    """Time series of a simulated run (times in seconds)."""

    times: list = field(default_factory=list)
    delta_x: list = field(default_factory=list)
    delta_z: list = field(default_factory=list)
    spectator_ground_pop: list = field(default_factory=list)
    leakage: list = field(default_factory=list)
    final_state: OscState = None
    schedule: PulseSchedule = None
    stage: list = field(default_factory=list)
    records: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    info: dict = field(default_factory=dict)

    def append(self, t, dx, dz, pop, leak, stage):
        self.times.append(float(t))
        self.delta_x.append(float(dx))
        self.delta_z.append(float(dz))
        self.spectator_ground_pop.append(float(pop))
        self.leakage.append(float(leak))
        self.stage.append(stage)

    def extend(self, other):
        for name in ("times", "delta_x", "delta_z", "spectator_ground_pop", "leakage", "stage"):
            getattr(self, name).extend(getattr(other, name))
        self.warnings.extend(other.warnings)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time_s", "delta_x", "delta_z", "ground_pop", "leakage", "stage"])
            for row in zip(self.times, self.delta_x, self.delta_z, self.spectator_ground_pop,
                           self.leakage, self.stage):
                w.writerow([repr(v) if isinstance(v, float) else v for v in row])


# -- lattice model ----------------------------------------------------------------

def function_of_q(f, dim, pad=80):
    """Matrix of ``f(q)`` on the lowest ``dim`` levels, via the spectrum of ``q`` on ``dim + pad``."""
    q = quadratures(dim + pad)[0].real
    lam, V = np.linalg.eigh(q)
    return ((V * f(lam)) @ V.T)[:dim, :dim]


def p_squared(dim):
    p = quadratures(dim + 2)[1]
    return (p @ p).real[:dim, :dim]


class LatticeModel:
    """Motional Hamiltonian of one lattice site, modes ordered ``(x, y, z)``.

    ``H(s) = sum_j w_j p_j^2 / 2 + s V`` with ``V = (U0 / hbar)(1 - f_x f_y f_z)``
    for the exact lattice or ``sum_j w_j q_j^2 / 2`` when ``harmonic``. A
    tune-out beam adds ``-(U1 / hbar) exp(-2 (z - z_b)^2 / w1^2)`` on z.
    """

    def __init__(self, spec, dims, harmonic=False, pad=80):
        dims = tuple(int(d) for d in dims)
        if len(dims) != 3 or min(dims) < 1 or dims[2] < 8:
            raise InvalidParameters("dims must be (n_x, n_y, n_z) with n_z >= 8")
        self.spec, self.dims, self.harmonic = spec, dims, harmonic
        self.params = lattice_params(spec)
        p = self.params
        self.omega_x = p.omega_x
        self.omega_z = p.omega_z if harmonic else corrected_omega_z(p, 2)
        self.length_x = math.sqrt(HBAR / (spec.mass * p.omega_x))
        self.length_z = math.sqrt(HBAR / (spec.mass * self.omega_z))
        nx, ny, nz = dims
        self.kinetic = [self.omega_x / 2 * p_squared(nx), self.omega_x / 2 * p_squared(ny),
                        self.omega_z / 2 * p_squared(nz)]
        self.depth = spec.depth_U0 / HBAR
        self._q2 = [self.omega_x / 2 * function_of_q(np.square, d, pad) for d in (nx, ny)] + [
            self.omega_z / 2 * function_of_q(np.square, nz, pad)]
        if not harmonic:
            fx, fy, fz = lattice_profiles(spec)
            lx, lz = self.length_x, self.length_z
            self._f = [function_of_q(lambda u: fx(lx * u), nx, pad),
                       function_of_q(lambda u: fy(lx * u), ny, pad),
                       function_of_q(lambda u: fz(lz * u), nz, pad)]
        self._eye = np.eye(int(np.prod(dims)))
        self._pad = pad

    # operator building blocks
    def _terms(self, s):
        terms = [(1.0, (self.kinetic[0], None, None)), (1.0, (None, self.kinetic[1], None)),
                 (1.0, (None, None, self.kinetic[2]))]
        if self.harmonic:
            terms += [(s, (self._q2[0], None, None)), (s, (None, self._q2[1], None)),
                      (s, (None, None, self._q2[2]))]
        else:
            terms += [(s * self.depth, (None, None, None)), (-s * self.depth, tuple(self._f))]
        return terms

    def beam_factor(self, peak_U1, waist_w1, center):
        """``exp(-2 (z - center)^2 / w1^2)`` on the z mode."""
        lz = self.length_z
        return function_of_q(lambda u: np.exp(-2 * (lz * u - center) ** 2 / waist_w1**2),
                             self.dims[2], self._pad)

    def hamiltonian(self, s=1.0, beam=None):
        """``H(s)`` as a :class:`ProductSum`; ``beam = (peak_U1, waist_w1, center)``."""
        terms = self._terms(s)
        if beam is not None:
            U1, w1, zc = beam
            terms.append((-U1 / HBAR, (None, None, self.beam_factor(U1, w1, zc))))
        return ProductSum(self.dims, terms)

    def ground_state(self):
        """Ground state of ``H(1)``."""
        H = self.hamiltonian(1.0)
        n = H.dim
        if n <= 4096:
            Hd = H.to_dense().real
            _, v = scipy.linalg.eigh(Hd, subset_by_index=[0, 0])
            psi = v[:, 0]
        else:
            from scipy.sparse.linalg import LinearOperator, eigsh
            op = LinearOperator((n, n), matvec=lambda x: (H @ x).real, dtype=float)
            _, v = eigsh(op, k=1, which="SA", tol=1e-12)
            psi = v[:, 0]
        psi = psi / np.linalg.norm(psi)
        # fix the arbitrary sign so runs are reproducible
        psi = psi * np.sign(psi[np.argmax(np.abs(psi))])
        return OscState(psi.astype(complex), self.dims)

    def spectator_ground(self, s=1.0):
        """Ground state of a spectator oscillator at depth factor ``s`` (harmonic estimate)."""
        nx = self.dims[0]
        if nx == 1:
            return np.ones(1)
        v = squeezed_vacuum(0.25 * math.log(s), nx)
        return v / np.linalg.norm(v)

    def z_spacing(self, levels=1):
        """Mean z level spacing over the lowest ``levels`` excitations, rad/s.

        Taken from the eigenstates of ``H(1)`` that overlap most with
        ``|0, 0, n>``.
        """
        H = self.hamiltonian(1.0).to_dense()
        w, v = np.linalg.eigh(H)
        nx, ny, nz = self.dims
        energies = []
        for n in range(levels + 1):
            idx = np.ravel_multi_index((0, 0, n), self.dims)
            energies.append(w[np.argmax(np.abs(v[idx]) ** 2)])
        return (energies[-1] - energies[0]) / levels


# -- observables ------------------------------------------------------------------

def reduced_z(data, dims, has_ancilla=False):
    """Reduced density matrix of the z mode."""
    shape = ((2,) if has_ancilla else ()) + tuple(dims)
    nz = dims[-1]
    if data.ndim == 1:
        P = data.reshape(-1, nz)
        return P.T @ P.conj()
    n = int(np.prod(shape))
    R = data.reshape(n // nz, nz, n // nz, nz)
    return np.einsum("azaw->zw", R)


def z_leakage(rho_z, guard_band=5):
    """Population in the top ``guard_band`` levels of the z mode."""
    return float(np.real(np.diagonal(rho_z))[-guard_band:].sum())


def spectator_population(data, dims, ref, has_ancilla=False):
    """``<0_x 0_y | Tr_z rho | 0_x 0_y>`` for the spectator reference vector ``ref``."""
    nx, ny, nz = dims
    g = np.kron(ref, ref).conj()
    if data.ndim == 1:
        amp = g @ data.reshape(nx * ny, nz)
        return float(np.vdot(amp, amp).real)
    na = 2 if has_ancilla else 1
    R = data.reshape(na, nx * ny, nz, na, nx * ny, nz)
    return float(np.einsum("x,axzayz,y->", g, R, g.conj()).real)


def frame_rotate(rho_z, phi):
    """``e^{i phi n} rho e^{-i phi n}``, Hermitised and renormalised."""
    ph = np.exp(1j * phi * np.arange(rho_z.shape[0]))
    r = ph[:, None] * rho_z * ph.conj()[None, :]
    r = 0.5 * (r + r.conj().T)
    return r / np.trace(r).real


def frame_squeezing(rho_z, phi):
    """Effective squeezing of :func:`frame_rotate` ``(rho_z, phi)``."""
    return effective_squeezing(OscState(frame_rotate(rho_z, phi), norm_tol=1e-6))


def principal_frame(rho_z):
    """Rotation angle ``theta0`` that maps the compressed quadrature onto q.

    ``R(theta0) rho R(theta0)^dag`` has its narrowest variance along q.
    """
    nz = rho_z.shape[0]
    q, p = quadratures(nz)

    def ev(o):
        return np.trace(o @ rho_z)

    mq, mp = ev(q).real, ev(p).real
    Cqq = ev(q @ q).real - mq**2
    Cpp = ev(p @ p).real - mp**2
    Cqp = (ev(q @ p + p @ q) / 2).real - mq * mp
    w, v = np.linalg.eigh(np.array([[Cqq, Cqp], [Cqp, Cpp]]))
    return math.atan2(v[1, 0], v[0, 0]), w


# -- quench ---------------------------------------------------------------------

def linear_ramp(t, t_start, duration, a, b):
    if duration <= 0:
        return b
    x = min(max((t - t_start) / duration, 0.0), 1.0)
    return a + (b - a) * x


def depth_profile(segments):
    """Piecewise depth factor ``s(t)`` for a list of depth segments."""
    knots = []
    t = 0.0
    for seg in segments:
        if seg.kind == "depth_ramp":
            knots.append((t, seg.duration, seg.params.get("start_factor", 1.0), seg.params["target_factor"]))
        elif seg.kind == "depth_hold":
            f = seg.params["factor"]
            knots.append((t, seg.duration, f, f))
        else:
            raise InvalidParameters(f"{seg.kind} is not a depth segment")
        t += seg.duration

    def s(time):
        for t0, d, a, b in knots:
            if time < t0 + d:
                return linear_ramp(time, t0, d, a, b)
        return knots[-1][3]

    return s


def quench_segments(depth_factor=0.1, ramp=20e-6, hold=None, omega_z=None):
    """Ramp down, hold and ramp up; the hold defaults to a quarter period at the low depth minus the ramp."""
    if not 0 < depth_factor <= 1:
        raise InvalidParameters("depth_factor must lie in (0, 1]")
    if hold is None:
        if omega_z is None:
            raise InvalidParameters("need omega_z to choose the hold time")
        hold = math.pi / (2 * omega_z * math.sqrt(depth_factor)) - ramp
        if hold < 0:
            raise InvalidParameters("ramp is longer than the quarter period")
    return [PulseSegment("depth_ramp", ramp, {"start_factor": 1.0, "target_factor": depth_factor}),
            PulseSegment("depth_hold", hold, {"factor": depth_factor}),
            PulseSegment("depth_ramp", ramp, {"start_factor": depth_factor, "target_factor": 1.0})]


def simulate_quench(model, segments, cfg=None, initial=None, frame=None, hold_samples=20,
                    keep_reduced=False):
    """Propagate a pure state through a depth quench.

    Parameters
    ----------
    model : LatticeModel
    segments : list of PulseSegment
        ``depth_ramp`` and ``depth_hold`` segments.
    cfg : EvolutionConfig, optional
    initial : OscState, optional
        Defaults to the ground state of the full trap.
    frame : (omega_f, t0, theta0), optional
        Interaction frame used for the recorded squeezings; defaults to the lab
        frame.
    keep_reduced : bool
        Store the reduced z density matrix of every record in
        ``info["rho_z"]`` so squeezings can be re-evaluated in another frame.

    Returns
    -------
    Trajectory
        Recorded after every accepted step. ``spectator_ground_pop`` is the
        population of the instantaneous harmonic spectator ground state.
    """
    cfg = cfg or EvolutionConfig(step_tol=1e-9, leak_modes=(2,))
    state = initial if initial is not None else model.ground_state()
    if state.mode_shape != model.dims:
        raise InvalidInput("initial state does not match the model dims")
    prof = depth_profile(segments)
    traj = Trajectory()
    kept = traj.info.setdefault("rho_z", []) if keep_reduced else None
    refs = {}

    def ref(s):
        key = round(s, 12)
        if key not in refs:
            refs[key] = model.spectator_ground(s)
        return refs[key]

    def record(t, x):
        rz = reduced_z(x, model.dims)
        if kept is not None:
            kept.append(rz)
        phi = 0.0 if frame is None else frame[0] * (t - frame[1]) - frame[2]
        dx, dz = frame_squeezing(rz, phi)
        traj.append(t, dx, dz, spectator_population(x, model.dims, ref(prof(t))),
                    z_leakage(rz, cfg.guard_band), "quench")

    record(0.0, state.data)
    t = 0.0
    for seg in segments:
        if seg.duration == 0:
            continue
        if seg.kind == "depth_hold":
            H = model.hamiltonian(seg.params["factor"])
            sub = dataclasses.replace(cfg, max_step=seg.duration / hold_samples)
            state = evolve(state, H, seg.duration, sub, t0=t, callback=record)
        else:
            state = evolve(state, lambda tt: model.hamiltonian(prof(tt)), seg.duration, cfg,
                           t0=t, callback=record)
        t += seg.duration
    traj.final_state = state
    traj.warnings.extend(state.warnings)
    return traj


# -- mixed stage -------------------------------------------------------------------

class _Spectral:
    """Cached eigendecomposition of a dense Hermitian generator."""

    def __init__(self, H):
        H = 0.5 * (H + H.conj().T)
        self.w, self.v = np.linalg.eigh(H)

    def unitary(self, t):
        return (self.v * np.exp(-1j * self.w * t)) @ self.v.conj().T


class MixedStage:
    """Density matrix of ancilla x motion, ancilla first.

    Branch ``b`` of the ancilla feels beam ``b`` during a tune-out pulse. In
    ``"beam"`` mode the pulse is exact evolution with the beam potential added
    to the trap; in ``"closed"`` mode it is ``U(t/2) D(beta) U(t/2)`` with the
    ideal kick ``beta`` of a linear force.
    """

    def __init__(self, model, state, beam, mode="beam"):
        if mode not in ("beam", "closed"):
            raise InvalidParameters("mode must be 'beam' or 'closed'")
        self.model, self.mode = model, mode
        self.dims = model.dims
        n = int(np.prod(self.dims))
        rho = state.density() if isinstance(state, OscState) else np.asarray(state)
        if rho.shape == (n, n):
            anc = np.zeros((2, 2))
            anc[0, 0] = 1
            rho = np.kron(anc, rho)
        if rho.shape != (2 * n, 2 * n):
            raise InvalidInput("state does not match ancilla x model dims")
        self.rho = rho.astype(complex)
        self.n = n
        U1, w1 = beam
        self.U1, self.w1 = U1, w1
        self.trap = _Spectral(model.hamiltonian(1.0).to_dense())
        force, self.shift = tuneout_force(U1, w1)
        self.alpha_d = displacement_amplitude(force, model.spec.mass, model.omega_z)
        if mode == "beam":
            self.branch = [_Spectral(model.hamiltonian(1.0, (U1, w1, sgn * w1 / 2)).to_dense())
                           for sgn in (+1, -1)]

    def _apply_branch(self, U0, U1):
        n = self.n
        R = self.rho.reshape(2, n, 2, n)
        Us = (U0, U1)
        out = np.empty_like(R)
        for a in range(2):
            for b in range(2):
                out[a, :, b, :] = Us[a] @ R[a, :, b, :] @ Us[b].conj().T
        self.rho = out.reshape(2 * n, 2 * n)

    def idle(self, t):
        U = self.trap.unitary(t)
        self._apply_branch(U, U)

    def pulse(self, t):
        if self.mode == "beam":
            self._apply_branch(self.branch[0].unitary(t), self.branch[1].unitary(t))
            return
        half = self.trap.unitary(t / 2)
        beta = 2j * self.alpha_d * math.sin(self.model.omega_z * t / 2)
        nx, ny, nz = self.dims
        eye = np.eye(nx * ny)
        D0 = np.kron(eye, displacement_block(beta, nz))
        D1 = np.kron(eye, displacement_block(-beta, nz))
        self._apply_branch(half @ D0 @ half, half @ D1 @ half)

    def ancilla(self, U):
        full = np.kron(U, np.eye(self.n))
        self.rho = full @ self.rho @ full.conj().T

    def reset(self):
        n = self.n
        R = self.rho.reshape(2, n, 2, n)
        motion = R[0, :, 0, :] + R[1, :, 1, :]
        self.rho = np.zeros_like(self.rho)
        self.rho[:n, :n] = motion

    def hermitize(self):
        self.rho = 0.5 * (self.rho + self.rho.conj().T)

    def motional(self):
        n = self.n
        R = self.rho.reshape(2, n, 2, n)
        return R[0, :, 0, :] + R[1, :, 1, :]


def ancilla_phase(alpha_d, omega, t, shift):
    """Phase picked up by an ancilla branch during a tune-out pulse.

    ``theta(t) + shift t / hbar``: the displaced-oscillator phase plus the
    light shift of the beam at the atom.
    """
    return pulse_phase(alpha_d, omega, t) + shift * t / HBAR


@dataclass
class LatticeRunConfig:
    """Settings of :func:`run_lattice_preparation` (SI units)."""

    trap: LatticeSpec = None
    squeeze_dims: tuple = (8, 8, 36)
    mixed_dims: tuple = (3, 3, 36)
    depth_factor: float = 0.1
    ramp: float = 20e-6
    hold: float = None
    deltas: tuple = (1.0, 0.5, 0.303)
    epsilons: tuple = None
    displacement_mode: str = "beam"
    harmonic: bool = False
    peak_U1: float = HBAR * 2 * math.pi * 2e6
    waist_w1: float = 20e-6
    rabi: float = 2 * math.pi * 100e3
    step_tol: float = 1e-9
    initial: OscState = None

    def __post_init__(self):
        if self.trap is None:
            self.trap = LatticeSpec.from_lab(**REFERENCE_LATTICE)
        self.squeeze_dims = tuple(int(d) for d in self.squeeze_dims)
        self.mixed_dims = tuple(int(d) for d in self.mixed_dims)
        if len(self.squeeze_dims) != 3 or len(self.mixed_dims) != 3:
            raise InvalidParameters("dims must have three entries (x, y, z)")
        if any(m > s for m, s in zip(self.mixed_dims, self.squeeze_dims)):
            raise InvalidParameters("mixed_dims cannot exceed squeeze_dims")
        if self.mixed_dims[2] != self.squeeze_dims[2]:
            raise InvalidParameters("the z cutoff must be equal in both stages")
        self.deltas = tuple(float(d) for d in self.deltas)
        self.epsilons = (tuple(float(e) for e in self.epsilons) if self.epsilons is not None
                         else (0.0,) * len(self.deltas))
        if len(self.epsilons) != len(self.deltas):
            raise InvalidParameters("deltas and epsilons must have equal length")
        if self.displacement_mode not in ("beam", "closed"):
            raise InvalidParameters("displacement_mode must be 'beam' or 'closed'")
        for name in ("peak_U1", "waist_w1", "rabi", "step_tol"):
            if not getattr(self, name) > 0:
                raise InvalidParameters(f"{name} must be positive")

    def to_dict(self):
        d = asdict(self)
        d["trap"] = asdict(self.trap)
        d.pop("initial")
        return d


def _round_segments(k, delta, eps, frame, t_now, alpha_d, omega, cfg):
    """Segments of one corrective round, with waits placing each kick's centre at the right phase."""
    omega_f, t0, theta0 = frame
    rot_time = (math.pi / 2) / cfg.rabi
    segs = [PulseSegment("ancilla_rotation", 2 * rot_time, {"gate": "H", "angle": math.pi, "rabi": cfg.rabi})]
    kicks = []
    if eps:
        kicks.append(("eps", 1j * eps * SQRT_PI / 4))
    kicks.append(("half", SQRT_PI))
    kicks.append(("delta", 1j * delta * SQRT_PI / 4))
    t = t_now + segs[0].duration
    for name, beta in kicks:
        if name == "half":
            segs.append(PulseSegment("ancilla_rotation", rot_time,
                                     {"gate": "RX", "angle": math.pi / 2, "rabi": cfg.rabi}))
            t += rot_time
        dur = solve_pulse_duration(abs(beta), alpha_d, omega)
        # kick direction is i e^{i phi(t_c)}; choose the centre time t_c >= t + dur/2
        want = math.atan2(beta.imag, beta.real) - math.pi / 2
        phi_start = omega_f * (t + dur / 2 - t0) - theta0
        wait = ((want - phi_start) % (2 * math.pi)) / omega_f
        if wait > 0:
            segs.append(PulseSegment("idle", wait))
        segs.append(PulseSegment("tuneout_pulse", dur, {
            "peak_U1": cfg.peak_U1, "waist_w1": cfg.waist_w1, "offset": cfg.waist_w1 / 2,
            "target_state": 0, "sign": +1, "distance": abs(beta), "direction": float(np.angle(beta)),
            "round": k, "kick": name}))
        t += wait + dur
        if name == "half":
            segs.append(PulseSegment("ancilla_rotation", rot_time,
                                     {"gate": "RX", "angle": -math.pi / 2, "rabi": cfg.rabi}))
            t += rot_time
    segs.append(PulseSegment("ancilla_reset", 0.0, {"round": k}))
    return segs, t


def run_lattice_preparation(config=None):
    """Quench squeezing followed by corrective rounds in the lattice.

    Returns a :class:`Trajectory` covering both stages. ``records`` holds one
    entry per round boundary with the frame squeezings, spectator population,
    trace, Hermiticity error and leakage; ``info`` holds the frame, pulse
    parameters and the recorded ancilla phase corrections.
    """
    cfg = config or LatticeRunConfig()
    spec = cfg.trap
    # squeeze stage
    big = LatticeModel(spec, cfg.squeeze_dims, harmonic=cfg.harmonic)
    segments = quench_segments(cfg.depth_factor, cfg.ramp, cfg.hold, big.omega_z)
    small = LatticeModel(spec, cfg.mixed_dims, harmonic=cfg.harmonic)
    omega_f = small.z_spacing() if not cfg.harmonic else small.omega_z
    t_q = sum(s.duration for s in segments)
    evo = EvolutionConfig(step_tol=cfg.step_tol, leak_modes=(2,))
    initial = cfg.initial
    quench = simulate_quench(big, segments, evo, initial=initial, keep_reduced=True)
    psi = quench.final_state.data
    theta0, cov = principal_frame(reduced_z(psi, big.dims))
    frame = (omega_f, t_q, theta0)
    traj = Trajectory(warnings=list(quench.warnings))
    for i, (t, rz) in enumerate(zip(quench.times, quench.info["rho_z"])):
        dx, dz = frame_squeezing(rz, omega_f * (t - t_q) - theta0)
        traj.append(t, dx, dz, quench.spectator_ground_pop[i], quench.leakage[i], "quench")
    dx0, dz0 = traj.delta_x[-1], traj.delta_z[-1]
    # crop spectators
    nx, ny, nz = cfg.mixed_dims
    cropped = psi.reshape(cfg.squeeze_dims)[:nx, :ny, :nz].reshape(-1)
    kept = float(np.vdot(cropped, cropped).real)
    if kept < 0.99:
        traj.warnings.append(f"cropping spectators kept only {kept:.4f} of the norm")
    start = OscState(cropped / math.sqrt(kept), cfg.mixed_dims)
    stage = MixedStage(small, start, (cfg.peak_U1, cfg.waist_w1), cfg.displacement_mode)
    alpha_d = stage.alpha_d
    records = [_mixed_record(0, None, stage, frame, t_q, dx0, dz0)]
    t = t_q
    phase_log = []
    ground = small.spectator_ground(1.0)

    def sample(label):
        rz = reduced_z(stage.rho, small.dims, has_ancilla=True)
        dx, dz = frame_squeezing(rz, omega_f * (t - t_q) - theta0)
        traj.append(t, dx, dz, spectator_population(stage.rho, small.dims, ground, True),
                    z_leakage(rz), label)

    schedule_segments = []
    for k, (delta, eps) in enumerate(zip(cfg.deltas, cfg.epsilons), start=1):
        segs, _ = _round_segments(k, delta, eps, frame, t, alpha_d, omega_f, cfg)
        schedule_segments.extend(segs)
        for seg in segs:
            if seg.kind == "ancilla_rotation":
                gate = seg.params["gate"]
                U = HADAMARD if gate == "H" else rx(seg.params["angle"])
                # the ancilla does not couple to motion here, so the gate commutes with the idle
                stage.ancilla(U)
                stage.idle(seg.duration)
            elif seg.kind == "idle":
                stage.idle(seg.duration)
            elif seg.kind == "tuneout_pulse":
                stage.pulse(seg.duration)
                phases = [ancilla_phase(sgn * alpha_d, omega_f, seg.duration, stage.shift)
                          for sgn in (+1, -1)]
                # exact-evolution branches carry these phases; closed-form kicks do not
                if stage.mode == "beam":
                    stage.ancilla(np.diag(np.exp(-1j * np.array(phases))))
                phase_log.append({"time": t, "round": k, "kick": seg.params["kick"],
                                  "duration": seg.duration, "phases": phases})
            elif seg.kind == "ancilla_reset":
                stage.reset()
            t += seg.duration
            stage.hermitize()
            sample(f"round{k}")
        rz = reduced_z(stage.rho, small.dims, has_ancilla=True)
        dx, dz = frame_squeezing(rz, omega_f * (t - t_q) - theta0)
        records.append(_mixed_record(k, delta, stage, frame, t, dx, dz))
    motion = stage.motional()
    traj.final_state = OscState(0.5 * (motion + motion.conj().T), cfg.mixed_dims, norm_tol=1e-6)
    traj.records = records
    traj.schedule = PulseSchedule(segments + schedule_segments, spec, cfg.mixed_dims, phase_log)
    traj.info.update({
        "frame_omega": omega_f, "frame_t0": t_q, "frame_theta0": theta0,
        "quench_covariance_eigenvalues": [float(v) for v in cov],
        "alpha_d": alpha_d, "omega_z": small.omega_z, "spectator_norm_kept": kept,
        "t_end": t,
        "min_quench_ground_pop": float(min(quench.spectator_ground_pop)),
    })
    return traj


def _mixed_record(k, delta, stage, frame, t, dx, dz):
    rho = stage.rho
    ground = stage.model.spectator_ground(1.0)
    return {"round": k, "delta": delta, "time": t, "delta_x": float(dx), "delta_z": float(dz),
            "ground_pop": spectator_population(rho, stage.dims, ground, True),
            "trace": float(np.trace(rho).real),
            "hermiticity": float(np.max(np.abs(rho - rho.conj().T))),
            "leakage": z_leakage(reduced_z(rho, stage.dims, True))}
