"""Schrodinger / von Neumann time evolution on truncated Fock spaces.

Hamiltonians are given as angular frequencies, i.e. ``H/hbar`` in rad/s, so
that states evolve with ``exp(-i H t)``. Three representations are accepted:

* a dense Hermitian ``ndarray``;
* a :class:`ProductSum`, a sum of Kronecker products applied mode by mode
  without ever forming the composite matrix;
* a callable ``t -> ndarray | ProductSum`` for time-dependent problems.

Vectors are propagated with a Chebyshev expansion of ``exp(-i H tau)``, which
only needs ``H @ v`` and a bound on the spectrum. Time-dependent problems use
the fourth-order commutator-free Magnus scheme with step doubling.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import reduce

import numpy as np
from scipy.special import jv

from .errors import InvalidInput, TruncationWarning
from .fock import GUARD_BAND, OscState, leakage_of

# fourth-order commutator-free Magnus coefficients and Gauss nodes
_A1 = (3 - 2 * math.sqrt(3)) / 12
_A2 = (3 + 2 * math.sqrt(3)) / 12
_C1 = 0.5 - math.sqrt(3) / 6
_C2 = 0.5 + math.sqrt(3) / 6


@dataclass(frozen=True)
class EvolutionConfig:
    """Integrator settings.

    step_tol : local error target per accepted step (2-norm of the step-doubling
        difference for vectors).
    max_step : upper bound on a single step, seconds.
    guard_band : number of top Fock levels monitored for leakage.
    leak_warn : leakage threshold that triggers a :class:`TruncationWarning`.
    leak_modes : mode indices to monitor (default: all oscillator modes).
    """

    step_tol: float = 1e-9
    max_step: float = math.inf
    guard_band: int = GUARD_BAND
    leak_warn: float = 1e-6
    initial_step: float | None = None
    leak_modes: tuple | None = None

    def __post_init__(self):
        if not self.step_tol > 0:
            raise InvalidInput("step_tol must be positive")
        if not self.max_step > 0:
            raise InvalidInput("max_step must be positive")
        if self.guard_band < 1:
            raise InvalidInput("guard_band must be >= 1")
        if not 0 < self.leak_warn < 1:
            raise InvalidInput("leak_warn must lie in (0, 1)")


class ProductSum:
    """Hermitian operator ``sum_j c_j (F_j1 x F_j2 x ...)`` on a product space.

    Each term is ``(coef, factors)`` where ``factors`` holds one Hermitian matrix
    per mode, or ``None`` for the identity. Factor arrays are shared, not
    copied, so terms that reuse the same arrays can be merged when operators are
    combined.
    """

    def __init__(self, mode_shape, terms):
        self.mode_shape = tuple(int(d) for d in mode_shape)
        self.terms = []
        for coef, factors in terms:
            factors = tuple(factors)
            if len(factors) != len(self.mode_shape):
                raise InvalidInput("each term needs one factor per mode")
            for f, d in zip(factors, self.mode_shape):
                if f is not None and np.shape(f) != (d, d):
                    raise InvalidInput(f"factor shape {np.shape(f)} does not fit mode dim {d}")
            self.terms.append((float(coef), factors))
        self._merge()

    def _merge(self):
        merged = {}
        for coef, factors in self.terms:
            key = tuple(id(f) for f in factors)
            if key in merged:
                merged[key] = (merged[key][0] + coef, factors)
            else:
                merged[key] = (coef, factors)
        self.terms = [t for t in merged.values() if t[0] != 0.0]

    @property
    def dim(self):
        return int(np.prod(self.mode_shape))

    @property
    def shape(self):
        return (self.dim, self.dim)

    def scaled(self, s):
        return ProductSum(self.mode_shape, [(s * c, f) for c, f in self.terms])

    def __add__(self, other):
        if not isinstance(other, ProductSum) or other.mode_shape != self.mode_shape:
            return NotImplemented
        return ProductSum(self.mode_shape, self.terms + other.terms)

    def __matmul__(self, v):
        v = np.asarray(v)
        lead = v.shape[1:]
        X = v.reshape(self.mode_shape + lead)
        out = np.zeros_like(X, dtype=np.result_type(X, complex))
        for coef, factors in self.terms:
            Y = X
            for ax, f in enumerate(factors):
                if f is not None:
                    Y = np.moveaxis(np.tensordot(f, Y, axes=([1], [ax])), 0, ax)
            out += coef * Y
        return out.reshape(v.shape)

    def to_dense(self):
        n = self.dim
        H = np.zeros((n, n), dtype=complex)
        for coef, factors in self.terms:
            mats = [np.eye(d) if f is None else f for f, d in zip(factors, self.mode_shape)]
            H += coef * reduce(np.kron, mats)
        return H

    def spectral_bounds(self):
        """Weyl bounds on the spectrum from per-factor eigenvalue ranges."""
        lo = hi = 0.0
        cache = {}
        for coef, factors in self.terms:
            corners = np.array([1.0])
            for f in factors:
                if f is None:
                    continue
                key = id(f)
                if key not in cache:
                    ev = np.linalg.eigvalsh(f)
                    cache[key] = (ev[0], ev[-1])
                corners = np.concatenate([corners * cache[key][0], corners * cache[key][1]])
            vals = coef * corners
            lo += vals.min()
            hi += vals.max()
        return lo, hi


def _gershgorin(H):
    d = np.real(np.diag(H))
    r = np.sum(np.abs(H), axis=1) - np.abs(np.diag(H))
    return float(np.min(d - r)), float(np.max(d + r))


def spectral_bounds(H):
    if isinstance(H, ProductSum):
        return H.spectral_bounds()
    return _gershgorin(H)


def check_hermitian(H, tol=1e-10):
    if isinstance(H, ProductSum):
        for _, factors in H.terms:
            for f in factors:
                if f is not None and np.max(np.abs(f - f.conj().T), initial=0) > tol * max(1, np.max(np.abs(f))):
                    raise InvalidInput("Hamiltonian factor is not Hermitian")
        return
    H = np.asarray(H)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise InvalidInput(f"Hamiltonian must be square, got {H.shape}")
    if not np.all(np.isfinite(H)):
        raise InvalidInput("Hamiltonian has non-finite entries")
    scale = max(1.0, float(np.max(np.abs(H))))
    if np.max(np.abs(H - H.conj().T)) > tol * scale:
        raise InvalidInput("Hamiltonian is not Hermitian")


def chebyshev_expmv(H, v, tau, bounds=None, tol=1e-15):
    """Apply ``exp(-i H tau)`` to ``v`` (vector or stack of columns).

    Uses the Chebyshev expansion with Bessel-function coefficients on the
    interval ``bounds`` that must contain the spectrum of ``H``.
    """
    lo, hi = spectral_bounds(H) if bounds is None else bounds
    c = 0.5 * (hi + lo)
    r = max(0.5 * (hi - lo), 1e-300)
    z = abs(tau) * r
    # keep each expansion moderate so the Bessel tail is well resolved
    nsub = max(1, int(math.ceil(z / 500.0)))
    h = tau / nsub
    z = abs(h) * r
    kmax = int(z + 12 * max(z, 1.0) ** (1 / 3) + 40)
    ks = np.arange(kmax + 1)
    sign = -1j if h >= 0 else 1j
    coef = 2 * jv(ks, z) * sign**ks
    coef[0] /= 2
    big = np.nonzero(np.abs(coef) > tol)[0]
    kmax = max(int(big[-1]) if big.size else 1, 1)
    out = np.asarray(v, dtype=complex)
    phase = np.exp(-1j * h * c)
    for _ in range(nsub):
        t0 = out
        t1 = (H @ t0 - c * t0) / r
        acc = coef[0] * t0 + coef[1] * t1
        for k in range(2, kmax + 1):
            t2 = 2 * (H @ t1 - c * t1) / r - t0
            acc += coef[k] * t2
            t0, t1 = t1, t2
        out = phase * acc
    return out


def _combine(H1, H2, w1, w2):
    if isinstance(H1, ProductSum):
        return H1.scaled(w1) + H2.scaled(w2)
    return w1 * np.asarray(H1) + w2 * np.asarray(H2)


def _dense_unitary(H, tau):
    Hd = H.to_dense() if isinstance(H, ProductSum) else np.asarray(H)
    w, v = np.linalg.eigh((Hd + Hd.conj().T) / 2)
    return (v * np.exp(-1j * tau * w)) @ v.conj().T


class _Stepper:
    def __init__(self, kind):
        self.kind = kind

    def exp_apply(self, H, x, tau):
        if self.kind == "pure":
            return chebyshev_expmv(H, x, tau)
        U = _dense_unitary(H, tau)
        return U @ x @ U.conj().T

    def cf4(self, Hfun, x, t, dt):
        H1 = Hfun(t + _C1 * dt)
        H2 = Hfun(t + _C2 * dt)
        x = self.exp_apply(_combine(H1, H2, _A2, _A1), x, dt)
        return self.exp_apply(_combine(H1, H2, _A1, _A2), x, dt)


def evolve(state, H, duration, cfg=None, *, t0=0.0, callback=None):
    """Evolve ``state`` for ``duration`` seconds under ``H`` (rad/s).

    Parameters
    ----------
    state : OscState
    H : ndarray, ProductSum or callable
        Constant Hamiltonian or ``H(t)``; ``t`` runs from ``t0`` to ``t0 + duration``.
    duration : float
        Evolution time in seconds, ``>= 0``.
    cfg : EvolutionConfig, optional
    callback : callable, optional
        Called as ``callback(t, data)`` after every accepted step.

    Returns
    -------
    OscState
        Evolved state. Leakage above ``cfg.leak_warn`` is reported through a
        :class:`TruncationWarning` and recorded in ``state.warnings``.
    """
    cfg = cfg or EvolutionConfig()
    if duration < 0:
        raise InvalidInput("duration must be non-negative")
    timedep = callable(H) and not isinstance(H, (np.ndarray, ProductSum))
    probe = H(t0) if timedep else H
    check_hermitian(probe)
    if probe.shape[0] != state.dim:
        raise InvalidInput(f"Hamiltonian dim {probe.shape[0]} does not match state dim {state.dim}")
    stepper = _Stepper(state.kind)
    x = state.data.astype(complex)
    notes = []
    warned = False

    def monitor(t, x):
        nonlocal warned
        leak = leakage_of(x, state.mode_shape, state.has_ancilla, cfg.guard_band, cfg.leak_modes)
        if leak > cfg.leak_warn and not warned:
            warned = True
            msg = f"leakage {leak:.2e} exceeded {cfg.leak_warn:.1e} at t={t:.6g} s"
            notes.append(msg)
            warnings.warn(msg, TruncationWarning, stacklevel=3)
        if callback is not None:
            callback(t, x)

    t, t_end = t0, t0 + duration
    if not timedep:
        nchunk = 1 if math.isinf(cfg.max_step) else max(1, int(math.ceil(duration / cfg.max_step)))
        h = duration / nchunk
        if state.kind == "mixed" and duration > 0:
            U = _dense_unitary(H, h)
        for _ in range(nchunk if duration > 0 else 0):
            if state.kind == "pure":
                x = chebyshev_expmv(H, x, h)
            else:
                x = U @ x @ U.conj().T
            t += h
            monitor(t, x)
    else:
        dt = cfg.initial_step or min(cfg.max_step, duration / 16 if duration > 0 else 1.0)
        tol = cfg.step_tol
        while t_end - t > 1e-15 * max(1.0, abs(t_end)):
            h = min(dt, t_end - t, cfg.max_step)
            big = stepper.cf4(H, x, t, h)
            half = stepper.cf4(H, stepper.cf4(H, x, t, h / 2), t + h / 2, h / 2)
            err = float(np.linalg.norm(big - half))
            if err > tol:
                dt = h * max(0.2, 0.9 * (tol / err) ** 0.2)
                continue
            x = half
            t += h
            monitor(t, x)
            dt = h * min(2.0, 0.9 * (tol / max(err, 1e-300)) ** 0.2)
    if state.kind == "mixed":
        x = 0.5 * (x + x.conj().T)
    return OscState(x, state.mode_shape, state.has_ancilla, state.norm_tol,
                    state.warnings + tuple(notes))
