"""Gate-level GKP preparation and error-correction channels.

Two preparation schemes are modelled with ideal gates:

* postselection: repeated ``(D(-sqrt(pi)) + D(sqrt(pi)))/2`` Kraus steps,
  keeping only the successful ancilla outcome;
* corrective displacements: an ancilla-controlled stabilizer half-displacement
  followed by a small conditional correction ``D(+-i delta sqrt(pi)/4)`` and
  an ancilla reset, which makes each round a deterministic two-Kraus channel.

Correction distances are expressed in units where ``C^{delta/2} = D(i delta sqrt(pi)/4)``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .constants import SQRT_PI
from .errors import DegeneratePostselection, InvalidInput, InvalidParameters
from .fock import GUARD_BAND, OscState, displacement, displacement_block, leakage, squeezed_vacuum
from .gkp import effective_squeezing

log = logging.getLogger(__name__)

# ancilla gates
HADAMARD = np.array([[1, 1], [1, -1]]) / np.sqrt(2)


def rx(theta):
    """Ancilla rotation ``exp(-i theta sigma_x / 2)``."""
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    return np.array([[c, -1j * s], [-1j * s, c]])


@dataclass(frozen=True)
class DeltaSchedule:
    """Per-round correction distances ``deltas`` and pre-rotation strengths ``epsilons``."""

    deltas: tuple
    epsilons: tuple = None
    diagnostics: tuple = field(default=(), compare=False)

    def __post_init__(self):
        deltas = tuple(float(d) for d in self.deltas)
        eps = tuple(float(e) for e in self.epsilons) if self.epsilons is not None else (0.0,) * len(deltas)
        if len(eps) != len(deltas):
            raise InvalidParameters("deltas and epsilons must have equal length")
        if not all(math.isfinite(v) for v in deltas + eps):
            raise InvalidParameters("schedule entries must be finite")
        if not all(0 < d <= 2 for d in deltas):
            raise InvalidParameters("each delta must lie in (0, 2]")
        object.__setattr__(self, "deltas", deltas)
        object.__setattr__(self, "epsilons", eps)

    def __len__(self):
        return len(self.deltas)

    def to_dict(self):
        return {"deltas": list(self.deltas), "epsilons": list(self.epsilons),
                "diagnostics": list(self.diagnostics)}


@dataclass
class ChannelResult:
    """Outcome of a protocol run."""

    state: OscState
    success_prob: float = 1.0
    squeezing_trace: list = field(default_factory=list)
    records: list = field(default_factory=list)


def squeezed_input(delta_z, dim):
    """Position-squeezed vacuum with effective squeezing ``Delta_Z = delta_z``."""
    if not 0 < delta_z < 1:
        raise InvalidParameters("delta_init must lie in (0, 1)")
    psi = squeezed_vacuum(-math.log(delta_z), dim)
    return OscState.normalized(psi)


def _apply(kraus, rho):
    return sum(K @ rho @ K.conj().T for K in kraus)


# -- postselection scheme -------------------------------------------------------

def postselect_prepare(delta_init, rounds, dim):
    """Repeated stabilizer-superposition steps with postselection on the ancilla.

    Each round applies ``K0 = (D(-sqrt(pi)) + D(sqrt(pi)))/2`` and renormalises;
    ``success_prob`` is the product of the per-round branch probabilities.
    """
    if rounds < 0:
        raise InvalidParameters("rounds must be non-negative")
    state = squeezed_input(delta_init, dim)
    K0 = (displacement(-SQRT_PI, dim) + displacement(SQRT_PI, dim)) / 2
    psi = state.data.copy()
    prob = 1.0
    trace = [effective_squeezing(state)]
    for k in range(rounds):
        psi = K0 @ psi
        p = float(np.vdot(psi, psi).real)
        if p < 1e-14:
            raise DegeneratePostselection(f"round {k + 1} branch norm {p:.3g} vanished")
        prob *= p
        psi = psi / math.sqrt(p)
        trace.append(effective_squeezing(OscState(psi)))
    return ChannelResult(OscState(psi), prob, trace)


# -- corrective-displacement scheme ---------------------------------------------

def round_kraus(delta, eps=0.0, half=SQRT_PI, dim=150, rot=1.0, disp=displacement):
    """Kraus pair of one corrective round, built gate by gate.

    Sequence on the ancilla (starting in ``|0>``): Hadamard, conditional
    pre-rotation ``D(+-i eps sqrt(pi)/4)``, ``R_X(pi/2)``, conditional
    ``D(+-half)``, ``R_X(-pi/2)``, conditional correction
    ``D(+-i delta sqrt(pi)/4)``. The reset that follows turns the two ancilla
    components into the two Kraus operators. ``rot`` multiplies every
    displacement amplitude (``rot=1j`` gives the p-quadrature round).

    Returns
    -------
    list of ndarray
        ``[K0, K1]`` for ancilla outcome 0 and 1.
    """
    eye = np.eye(dim)

    def cond(M, amp):
        return [disp(rot * amp, dim) @ M[0], disp(-rot * amp, dim) @ M[1]]

    def gate(M, U):
        return [U[0, 0] * M[0] + U[0, 1] * M[1], U[1, 0] * M[0] + U[1, 1] * M[1]]

    M = [HADAMARD[0, 0] * eye, HADAMARD[1, 0] * eye]
    if eps:
        M = cond(M, 1j * eps * SQRT_PI / 4)
    M = gate(M, rx(math.pi / 2))
    M = cond(M, half)
    M = gate(M, rx(-math.pi / 2))
    M = cond(M, 1j * delta * SQRT_PI / 4)
    return M


def _density(state):
    if len(state.mode_shape) != 1:
        raise InvalidInput("protocol channels act on a single oscillator mode")
    return state.density()


def corrective_prepare(delta_init, schedule, dim, rounds=None, initial=None):
    """Deterministic preparation by corrective displacement rounds.

    Parameters
    ----------
    delta_init : float
        ``Delta_Z`` of the squeezed starting state (ignored if ``initial`` given).
    schedule : DeltaSchedule
    dim : int
    rounds : int, optional
        Number of rounds to run (default: all of ``schedule``).
    initial : OscState, optional
        Alternative starting state.
    """
    rounds = len(schedule) if rounds is None else rounds
    if rounds > len(schedule):
        raise InvalidParameters(f"schedule has {len(schedule)} rounds, {rounds} requested")
    state = initial if initial is not None else squeezed_input(delta_init, dim)
    rho = _density(state)
    trace = [effective_squeezing(state)]
    records = [_record(0, None, None, state)]
    for k in range(rounds):
        K = round_kraus(schedule.deltas[k], schedule.epsilons[k], dim=dim)
        rho = _apply(K, rho)
        rho = 0.5 * (rho + rho.conj().T)
        st = OscState(rho)
        trace.append(effective_squeezing(st))
        records.append(_record(k + 1, schedule.deltas[k], schedule.epsilons[k], st))
    return ChannelResult(OscState(rho), 1.0, trace, records)


def _record(k, delta, eps, st):
    dx, dz = effective_squeezing(st)
    return {"round": k, "delta": delta, "epsilon": eps, "delta_x": dx, "delta_z": dz,
            "trace": float(np.trace(st.density()).real), "leakage": leakage(st, GUARD_BAND)}


# -- closed-form channels --------------------------------------------------------

def _phase(xi):
    return np.exp(1j * math.pi * xi)


def closed_form_channel(round_index, delta, dim, pad=60, prior=(1.0, 0.5)):
    """Closed-form Kraus operators of the first three corrective rounds.

    Operators are products of ``S^x = D(2 x sqrt(pi))`` and
    ``C^x = D(i x sqrt(pi)/2)`` with the phases ``(-1)^x = exp(i pi x)``.
    Round 2 assumes round 1 used ``delta = prior[0]`` (1), round 3 assumes
    ``prior = (1, 1/2)``. Earlier rounds contribute their decoupled mixtures of
    ``C`` shifts, so the returned channel maps the initial state directly to the
    state after ``round_index`` rounds (2, 4 or 8 Kraus operators).

    Exact displacement elements on ``dim + pad`` levels are multiplied and the
    result is cropped to ``dim``.
    """
    big = dim + pad

    def S(x):
        return displacement_block(2 * x * SQRT_PI, big)

    def C(x):
        return displacement_block(1j * x * SQRT_PI / 2, big)

    d = float(delta)
    if round_index == 1:
        ops = [(_phase(d / 4) * S(0.5) + 1j * _phase(-d / 4) * S(-0.5)) / 2 @ C(d / 2),
               (_phase(-d / 4) * S(0.5) - 1j * _phase(d / 4) * S(-0.5)) / 2 @ C(-d / 2)]
        earlier = [np.eye(big)]
    elif round_index == 2:
        ops = [(_phase(d / 2) * S(1) + (1 + 1j) * np.eye(big) + 1j * _phase(-d / 2) * S(-1)) / 4 @ C(d / 2),
               (_phase(-d / 2) * S(1) + (1 - 1j) * np.eye(big) - 1j * _phase(d / 2) * S(-1)) / 4 @ C(-d / 2)]
        d1 = prior[0]
        earlier = [_phase(d1 / 4) * C(d1 / 2), _phase(-d1 / 4) * C(-d1 / 2)]
    elif round_index == 3:
        r2 = math.sqrt(2)
        ops = [(_phase(0.75 * d) * S(1.5) + (1j + r2) * _phase(0.25 * d) * S(0.5)
                + (1 + 1j * r2) * _phase(-0.25 * d) * S(-0.5) + 1j * _phase(-0.75 * d) * S(-1.5)) / 8 @ C(d / 2),
               (_phase(-0.75 * d) * S(1.5) + (-1j + r2) * _phase(-0.25 * d) * S(0.5)
                + (1 - 1j * r2) * _phase(0.25 * d) * S(-0.5) - 1j * _phase(0.75 * d) * S(-1.5)) / 8 @ C(-d / 2)]
        d1, d2 = prior
        c1 = [_phase(d1 / 4) * C(d1 / 2), _phase(-d1 / 4) * C(-d1 / 2)]
        c2 = [_phase(d2 / 4) * C(d2 / 2), _phase(-d2 / 4) * C(-d2 / 2)]
        earlier = [b @ a for a in c1 for b in c2]
    else:
        raise InvalidParameters("closed forms exist for rounds 1, 2 and 3 only")
    return [(K @ E)[:dim, :dim] for K in ops for E in earlier]


def circuit_channel(deltas, dim, pad=60):
    """Kraus operators of consecutive circuit-built rounds (exact elements, cropped)."""
    big = dim + pad
    kraus = [np.eye(big)]
    for d in deltas:
        step = round_kraus(d, dim=big, disp=displacement_block)
        kraus = [K @ P for P in kraus for K in step]
    return [K[:dim, :dim] for K in kraus]


def choi_distance(kraus_a, kraus_b, input_dim=None):
    """Trace-norm distance between normalised Choi matrices of two channels.

    Only the first ``input_dim`` input levels are used (the truncated
    operators are faithful there). The Choi matrices themselves are never
    formed: ``J_a - J_b = V diag(s) V^dag`` with ``V`` the stacked vectorised
    Kraus operators. With ``V = QR`` its nonzero spectrum is that of the small
    Hermitian matrix ``R diag(s) R^dag``.
    """
    dim = kraus_a[0].shape[1]
    n = dim if input_dim is None else int(input_dim)
    vecs = [K[:, :n].reshape(-1) for K in kraus_a] + [K[:, :n].reshape(-1) for K in kraus_b]
    V = np.stack(vecs, axis=1)
    s = np.array([1.0] * len(kraus_a) + [-1.0] * len(kraus_b))
    R = np.linalg.qr(V, mode="r")
    ev = np.linalg.eigvalsh((R * s) @ R.conj().T)
    return float(np.sum(np.abs(ev)) / n)


# -- delta optimisation ----------------------------------------------------------

def _local_minima(fs):
    return sum(1 for i in range(1, len(fs) - 1) if fs[i] < fs[i - 1] and fs[i] <= fs[i + 1])


def optimize_deltas(delta_init, rounds, dim, xtol=1e-3, coarse=16, grid=200):
    """Greedy round-by-round minimisation of ``Delta_X`` over ``delta_k`` in (0, 2].

    Each round scans ``coarse`` points to bracket the minimum, then refines it
    by golden-section search to absolute tolerance ``xtol``. If the scan shows
    more than one local minimum, or the best point sits on the boundary, the
    bracket is abandoned and a ``grid``-point scan picks the value; a
    diagnostic is recorded in the returned schedule.
    """
    if not 1 <= rounds <= 5:
        raise InvalidParameters("rounds must be between 1 and 5")
    rho = squeezed_input(delta_init, dim).density()
    deltas, notes = [], []
    for k in range(rounds):
        def objective(d, rho=rho):
            if not 0 < d <= 2:
                return math.inf
            out = _apply(round_kraus(d, dim=dim), rho)
            return effective_squeezing(OscState(0.5 * (out + out.conj().T)))[0]

        # log-spaced so the small late-round optima are bracketed too
        xs = np.geomspace(0.02, 2, coarse)
        fs = np.array([objective(x) for x in xs])
        i = int(np.argmin(fs))
        if _local_minima(fs) > 1 or i in (0, coarse - 1):
            gx = np.linspace(2 / grid, 2, grid)
            gf = np.array([objective(x) for x in gx])
            best = float(gx[int(np.argmin(gf))])
            msg = f"round {k + 1}: objective not unimodal on (0, 2]; grid scan picked {best:.4f}"
            log.warning(msg)
            notes.append(msg)
        else:
            a, b, c = xs[i - 1], xs[i], xs[i + 1]
            # scipy's golden tolerance is relative to |x|; convert the absolute target
            res = minimize_scalar(objective, bracket=(a, b, c), method="golden",
                                  options={"xtol": xtol / (2 * c)})
            best = float(res.x)
        deltas.append(best)
        rho = _apply(round_kraus(best, dim=dim), rho)
        rho = 0.5 * (rho + rho.conj().T)
    return DeltaSchedule(tuple(deltas), (0.0,) * rounds, tuple(notes))


# -- error correction ------------------------------------------------------------

def qec_distances(delta_envelope):
    """``(eps, delta, half)`` for one error-correction round of a finite code.

    Correction and pre-rotation shifts are ``sinh(Delta^2)`` in units of
    ``sqrt(pi)/2``, which is ``2 sinh(Delta^2)`` in the ``delta`` units used
    here; the stabilizer half-distance grows to ``sqrt(pi) cosh(Delta^2)``.
    """
    d2 = delta_envelope**2
    return 2 * math.sinh(d2), 2 * math.sinh(d2), SQRT_PI * math.cosh(d2)


def qec_round(state, delta_envelope, dim=None, quadrature="both"):
    """One error-correction round tuned to the envelope ``delta_envelope``.

    ``quadrature`` selects the q round (``"x"``, S_X machinery), the p round
    (``"z"``, all amplitudes rotated by ``i``) or both in sequence.
    """
    rho = _density(state)
    dim = rho.shape[0] if dim is None else dim
    if rho.shape[0] != dim:
        raise InvalidInput("dim does not match the state")
    eps, delta, half = qec_distances(delta_envelope)
    rots = {"x": [1.0], "z": [1j], "both": [1.0, 1j]}
    if quadrature not in rots:
        raise InvalidInput("quadrature must be 'x', 'z' or 'both'")
    for rot in rots[quadrature]:
        rho = _apply(round_kraus(delta, eps, half, dim, rot=rot), rho)
        rho = 0.5 * (rho + rho.conj().T)
    return OscState(rho)
