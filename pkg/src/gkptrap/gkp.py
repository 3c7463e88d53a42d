"""Square (and rectangular) GKP code: stabilizers, finite code states, effective squeezing."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .constants import SQRT_PI
from .errors import InvalidInput, InvalidParameters
from .fock import OscState, displacement, displacement_block, squeezed_vacuum

LOGICALS = ("0", "1", "+", "-")


def braiding_phase(alpha, beta):
    """Phase-space area ``A(alpha, beta) = Re a Im b - Im a Re b``.

    ``D(alpha) D(beta) = exp(-i A) D(beta) D(alpha)``.
    """
    alpha, beta = complex(alpha), complex(beta)
    return alpha.real * beta.imag - alpha.imag * beta.real


@dataclass(frozen=True)
class GkpCode:
    """Displacement amplitudes of a rectangular GKP lattice (square by default)."""

    stab_x_amp: complex = 2 * SQRT_PI
    stab_z_amp: complex = 2j * SQRT_PI
    logical_x_amp: complex = SQRT_PI
    logical_z_amp: complex = 1j * SQRT_PI

    def __post_init__(self):
        ratio = braiding_phase(self.stab_x_amp, self.stab_z_amp) / (2 * math.pi)
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) == 0:
            raise InvalidParameters("stabilizers must commute (area a nonzero multiple of 2 pi)")
        lr = braiding_phase(self.logical_x_amp, self.logical_z_amp) / math.pi
        if abs(lr - round(lr)) > 1e-9 or round(lr) % 2 == 0:
            raise InvalidParameters("logical operators must anticommute (area an odd multiple of pi)")

    @classmethod
    def rectangular(cls, aspect):
        """Lattice stretched by ``aspect`` along q and compressed along p."""
        s = math.sqrt(aspect)
        return cls(2 * SQRT_PI * s, 2j * SQRT_PI / s, SQRT_PI * s, 1j * SQRT_PI / s)


SQUARE = GkpCode()


def stabilizers(code=SQUARE, dim=100):
    """``(S_X, S_Z)`` as truncated displacement operators."""
    return displacement(code.stab_x_amp, dim), displacement(code.stab_z_amp, dim)


def logicals(code=SQUARE, dim=100):
    """``(X_L, Z_L)`` as truncated displacement operators."""
    return displacement(code.logical_x_amp, dim), displacement(code.logical_z_amp, dim)


def to_db(delta):
    """Squeezing in dB, ``10 log10(1/delta^2)``."""
    return 10 * math.log10(1 / delta**2)


def default_cutoff(delta, tol=1e-8):
    """Smallest ``K`` with first omitted comb weight ``exp(-2 pi delta^2 (K+1)^2) < tol``."""
    K = 0
    while math.exp(-2 * math.pi * delta**2 * (K + 1) ** 2) >= tol:
        K += 1
    return K


def _comb(logical):
    if logical not in LOGICALS:
        raise InvalidInput(f"logical must be one of {LOGICALS}, got {logical!r}")
    offset = 0.0 if logical in ("0", "+") else 1.0
    axis = "q" if logical in ("0", "1") else "p"
    return axis, offset


def hermite_functions(x, nmax):
    """Oscillator eigenfunctions ``psi_n(x)`` for ``n < nmax``, shape ``(nmax, len(x))``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.zeros((nmax, x.size))
    out[0] = np.pi**-0.25 * np.exp(-x**2 / 2)
    if nmax > 1:
        out[1] = np.sqrt(2) * x * out[0]
    for n in range(2, nmax):
        out[n] = np.sqrt(2 / n) * x * out[n - 1] - np.sqrt((n - 1) / n) * out[n - 2]
    return out


def finite_gkp_exact(logical, delta, dim, code=SQUARE):
    """Envelope-damped code state ``exp(-delta^2 n)|ideal>`` (normalised).

    The ideal comb of position eigenstates enters through its exact Fock
    amplitudes ``<n|q=s> = psi_n(s)``, summed over every comb tooth that
    overlaps the retained levels. No position-eigenstate surrogate is needed,
    so the only approximation left is the Fock cutoff itself.
    """
    if not delta > 0:
        raise InvalidParameters("delta must be positive")
    axis, offset = _comb(logical)
    spacing = abs(code.stab_x_amp if axis == "q" else code.stab_z_amp)
    # teeth beyond the classical turning point of level dim-1 contribute nothing
    reach = math.sqrt(2 * dim + 1) + 12
    K = int(math.ceil(reach / spacing)) + 1
    s = (np.arange(-K, K + 1) + offset / 2) * spacing
    amp = hermite_functions(s, dim).sum(axis=1).astype(complex)
    if axis == "p":
        # <n|p=s> = (-i)^n psi_n(s)
        amp *= (-1j) ** np.arange(dim)
    amp *= np.exp(-delta**2 * np.arange(dim))
    return OscState.normalized(amp)


def finite_gkp_superposition(logical, delta, K=None, dim=150, code=SQUARE, pad=80):
    """Superposition of displaced squeezed vacua with Gaussian weights.

    ``sum_k exp(-delta^2 s_k^2 / 2) D(s_k) S(-ln delta)|0>`` for comb positions
    ``s_k``; the p-comb logicals use ``D(i s_k)`` and the p-squeezed vacuum.
    Built with exact displacement elements on ``dim + pad`` levels and then
    cropped to ``dim``.
    """
    if not 0 < delta <= 1:
        raise InvalidParameters("delta must lie in (0, 1]")
    if K is None:
        K = default_cutoff(delta)
    if K < 0:
        raise InvalidParameters("K must be non-negative")
    if K > 0 and math.exp(-2 * math.pi * delta**2 * (K + 1) ** 2) >= 1e-8:
        raise InvalidParameters(f"comb cutoff K={K} leaves a tail weight above 1e-8")
    axis, offset = _comb(logical)
    big = dim + pad
    r = -math.log(delta)
    if axis == "q":
        base = squeezed_vacuum(r, big)
        unit = complex(code.stab_x_amp) / 2
    else:
        base = squeezed_vacuum(-r, big)
        unit = complex(code.stab_z_amp) / 2
    psi = np.zeros(big, dtype=complex)
    for k in range(-K, K + 1):
        shift = (2 * k + offset) * unit
        w = math.exp(-delta**2 * abs(shift) ** 2 / 2)
        psi += w * (displacement_block(shift, big) @ base)
    return OscState.normalized(psi[:dim])


def squeezing_floor(dtype=np.float64):
    """Smallest resolvable ``|Tr(S rho)|``; 1e-12 in double precision."""
    return 1e-12 * float(np.finfo(dtype).eps / np.finfo(np.float64).eps)


def _stab_trace(state, amp, dtype):
    B = displacement_block(amp, state.dim, dtype=dtype)
    x = state.data
    if state.kind == "pure":
        return np.vdot(x, B @ x)
    return np.einsum("ij,ji->", B, x)


def effective_squeezing(state, code=SQUARE, dtype=None):
    """Effective squeezing ``(delta_x, delta_z)`` from stabilizer expectations.

    ``delta = sqrt(ln(1/|Tr(S rho)|^2) / (2 pi))``. Expectations use the exact
    displacement matrix elements on the retained levels. Values with
    ``|Tr(S rho)|`` under :func:`squeezing_floor` cannot be resolved and are
    reported as ``inf``.

    Parameters
    ----------
    state : OscState
        Single-mode state.
    dtype : numpy floating type, optional
        Working precision; defaults to long double for long-double states.
    """
    if len(state.mode_shape) != 1:
        raise InvalidInput("effective_squeezing needs a single-mode state; trace out the rest first")
    if dtype is None:
        dtype = np.longdouble if state.data.dtype == np.clongdouble else np.float64
    floor = squeezing_floor(dtype)
    out = []
    for amp in (code.stab_x_amp, code.stab_z_amp):
        t = float(abs(_stab_trace(state, amp, dtype)))
        if t < floor:
            out.append(math.inf)
        else:
            t = min(t, 1.0)
            out.append(math.sqrt(max(0.0, math.log(1 / t**2)) / (2 * math.pi)))
    return tuple(out)
