"""Truncated Fock-space operators and states.

Operators are plain complex ``numpy`` arrays. Composite operators act on the
Kronecker product of the subsystems listed in a ``mode_shape`` tuple, with a
two-level ancilla (when present) listed first.

Conventions
-----------
* ``q = (a^dag + a)/sqrt(2)``, ``p = i (a^dag - a)/sqrt(2)`` so that ``[q, p] = i``.
* ``D(alpha) = exp[(alpha a^dag - alpha^* a)/sqrt(2)]`` shifts ``q`` by ``Re alpha``
  and ``p`` by ``Im alpha``.
* ``S(z) = exp[(z^* a^2 - z a^dag^2)/2]``; real ``r > 0`` squeezes ``q``.
* ``R(theta) = exp(-i theta n)``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache, reduce

import numpy as np
import scipy.linalg
from scipy.special import gammaln

from .errors import InvalidDimension, InvalidInput, TruncationWarning

GUARD_BAND = 5
LEAK_WARN = 1e-6
ATOL = 1e-12
RTOL = 1e-9


def _check_dim(dim):
    if int(dim) != dim or dim < 2:
        raise InvalidDimension(f"Fock cutoff must be an integer >= 2, got {dim!r}")
    return int(dim)


def _frozen(arr):
    arr.setflags(write=False)
    return arr


def ladder(dim):
    """Return the annihilation and creation matrices ``(a, a_dag)``."""
    dim = _check_dim(dim)
    a = np.diag(np.sqrt(np.arange(1, dim, dtype=float)), 1).astype(complex)
    return a, a.conj().T


def number(dim):
    """Number operator ``a_dag a`` (diagonal)."""
    dim = _check_dim(dim)
    return np.diag(np.arange(dim, dtype=float)).astype(complex)


def quadratures(dim):
    """Return ``(q, p)`` with ``[q, p] = i`` away from the cutoff."""
    a, ad = ladder(dim)
    return (ad + a) / np.sqrt(2), 1j * (ad - a) / np.sqrt(2)


def matrix_exp(A):
    """Matrix exponential of a dense operator.

    Thin wrapper over :func:`scipy.linalg.expm` (Pade scaling and squaring)
    that rejects non-finite input.
    """
    A = np.asarray(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InvalidInput(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise InvalidInput("matrix has non-finite entries")
    return scipy.linalg.expm(A)


def _vacuum_leak(column, guard_band):
    # population that D|0> (or S|0>) puts in the guard band or beyond the cutoff
    pop = np.abs(column) ** 2
    return float(max(0.0, 1.0 - pop[:-guard_band].sum()))


def _warn_leak(what, leak, leak_warn):
    if leak > leak_warn:
        warnings.warn(
            f"{what}: {leak:.2e} of the vacuum image sits in the guard band "
            f"or beyond the cutoff", TruncationWarning, stacklevel=3)


@lru_cache(maxsize=256)
def _displacement_cached(alpha, dim):
    a, ad = ladder(dim)
    gen = (alpha * ad - np.conj(alpha) * a) / np.sqrt(2)
    return _frozen(matrix_exp(gen))


def displacement(alpha, dim, *, guard_band=GUARD_BAND, leak_warn=LEAK_WARN):
    """Displacement operator ``D(alpha)`` as the exponential of the truncated generator.

    The result is exactly unitary on the truncated space. Near the cutoff its
    matrix elements deviate from the infinite-dimensional ones; a
    :class:`TruncationWarning` is emitted when ``D(alpha)|0>`` spills more than
    ``leak_warn`` into the top ``guard_band`` levels.
    """
    dim = _check_dim(dim)
    alpha = complex(alpha)
    D = _displacement_cached(alpha, dim)
    if guard_band and abs(alpha) > 0:
        _warn_leak(f"D({alpha:.3g}) at dim {dim}", _vacuum_leak(D[:, 0], guard_band), leak_warn)
    return D


def displacement_block(alpha, dim, dtype=np.float64):
    """Exact matrix elements ``<m|D(alpha)|n>`` for ``m, n < dim`` (cached, read-only).

    See :func:`_displacement_block` for the method.
    """
    return _displacement_block_cached(complex(alpha), _check_dim(dim), np.dtype(dtype).name)


@lru_cache(maxsize=512)
def _displacement_block_cached(alpha, dim, dtype_name):
    return _frozen(_displacement_block(alpha, dim, np.dtype(dtype_name).type))


def _displacement_block(alpha, dim, dtype=np.float64):
    """Exact matrix elements ``<m|D(alpha)|n>`` for ``m, n < dim``.

    Unlike :func:`displacement` this is the upper-left block of the
    infinite-dimensional operator, so expectation values of truncated states
    come out exact. Elements follow from normalised associated Laguerre
    polynomials, evaluated by their three-term recurrence (stable for
    ``dim`` in the hundreds). Pass ``dtype=np.longdouble`` for extended
    precision.

    Parameters
    ----------
    alpha : complex
        Displacement amplitude.
    dim : int
        Block size.
    dtype : numpy floating type
        Working precision, ``np.float64`` or ``np.longdouble``.
    """
    dim = _check_dim(dim)
    real = np.dtype(dtype).type
    cplx = np.clongdouble if real is np.longdouble else np.complex128
    beta = cplx(complex(alpha)) / np.sqrt(real(2))
    mag = real(abs(beta))
    x = mag * mag
    k = np.arange(dim)
    # g[n, k] = exp(-x/2) |beta|^k sqrt(n!/(n+k)!) L_n^k(x); the column scale
    # is folded into row 0 in log form so large |beta|^k cannot overflow
    g = np.zeros((dim, dim), dtype=real)
    if real is np.longdouble:
        lg = np.array([real(math.lgamma(j + 1)) for j in k], dtype=real)
    else:
        lg = gammaln(k + 1.0)
    if mag > 0:
        g[0] = np.exp(-x / 2 + k * np.log(mag) - lg / 2)
    else:
        g[0, 0] = 1
    g[1] = (1 + k - x) * g[0] / np.sqrt(real(1) * (k + 1))
    for n in range(1, dim - 1):
        g[n + 1] = ((2 * n + 1 + k - x) * g[n] - np.sqrt(real(n) * (n + k)) * g[n - 1]) \
            / np.sqrt(real(n + 1) * (n + k + 1))
    phase = beta / mag if mag > 0 else cplx(1)
    D = np.zeros((dim, dim), dtype=cplx)
    for j in range(dim):
        if mag == 0 and j > 0:
            break
        n = np.arange(dim - j)
        amp = g[n, j]
        D[n + j, n] = amp * phase**j
        if j:
            D[n, n + j] = amp * (-np.conj(phase)) ** j
    return D


@lru_cache(maxsize=128)
def _squeeze_cached(z, dim):
    a, ad = ladder(dim)
    return _frozen(matrix_exp(0.5 * (np.conj(z) * a @ a - z * ad @ ad)))


def squeeze(z, dim, *, guard_band=GUARD_BAND, leak_warn=LEAK_WARN):
    """Squeeze operator ``S(z) = exp[(z^* a^2 - z a_dag^2)/2]``."""
    dim = _check_dim(dim)
    z = complex(z)
    S = _squeeze_cached(z, dim)
    if guard_band and abs(z) > 0:
        _warn_leak(f"S({z:.3g}) at dim {dim}", _vacuum_leak(squeezed_vacuum(z, dim), guard_band),
                   leak_warn)
    return S


def squeezed_vacuum(z, dim, dtype=np.float64):
    """Closed-form Fock amplitudes of ``S(z)|0>`` truncated to ``dim`` levels.

    The amplitudes are not renormalised, so the missing tail shows up as a
    norm deficit. ``dtype=np.longdouble`` gives extended-precision amplitudes.
    """
    dim = _check_dim(dim)
    real = np.dtype(dtype).type
    cplx = np.clongdouble if real is np.longdouble else np.complex128
    z = complex(z)
    r = real(abs(z))
    ratio = -cplx(np.exp(1j * np.angle(z))) * np.tanh(r)
    psi = np.zeros(dim, dtype=cplx)
    psi[0] = 1 / np.sqrt(np.cosh(r))
    for n in range(2, dim, 2):
        psi[n] = psi[n - 2] * ratio * np.sqrt(real(n - 1) / real(n))
    return psi


def rotation(theta, dim):
    """Phase-space rotation ``R(theta) = exp(-i theta n)``."""
    dim = _check_dim(dim)
    return np.diag(np.exp(-1j * theta * np.arange(dim)))


def tensor(*items):
    """Kronecker product of operators, vectors or :class:`OscState` objects."""
    if not items:
        raise InvalidInput("tensor needs at least one factor")
    if all(isinstance(it, OscState) for it in items):
        shape = sum((it.mode_shape for it in items), ())
        anc = items[0].has_ancilla
        if all(it.kind == "pure" for it in items):
            return OscState(reduce(np.kron, [it.data for it in items]), shape, has_ancilla=anc)
        return OscState(reduce(np.kron, [it.density() for it in items]), shape, has_ancilla=anc)
    if any(isinstance(it, OscState) for it in items):
        raise InvalidInput("cannot mix states and operators in tensor()")
    return reduce(np.kron, [np.asarray(it) for it in items])


def embed(op, index, mode_shape):
    """Lift a single-mode operator to the composite space ``mode_shape``."""
    factors = [np.eye(d) for d in mode_shape]
    if np.shape(op) != (mode_shape[index],) * 2:
        raise InvalidInput(f"operator shape {np.shape(op)} does not fit mode {index} of {mode_shape}")
    factors[index] = op
    return reduce(np.kron, factors)


@dataclass(frozen=True, eq=False)
class OscState:
    """Pure or mixed state on a product of truncated modes.

    Attributes
    ----------
    data : ndarray
        State vector (``kind == "pure"``) or density matrix (``"mixed"``).
    mode_shape : tuple of int
        Subsystem dimensions; the ancilla, when present, comes first.
    has_ancilla : bool
        Whether the first factor is a two-level ancilla (ignored by
        :func:`leakage`).
    norm_tol : float
        Tolerance for the normalisation / Hermiticity / positivity checks.
    warnings : tuple of str
        Truncation and other diagnostics accumulated by the producing operation.
    """

    data: np.ndarray
    mode_shape: tuple = None
    has_ancilla: bool = False
    norm_tol: float = 1e-9
    warnings: tuple = field(default=())

    def __post_init__(self):
        data = np.array(self.data)
        if not np.issubdtype(data.dtype, np.complexfloating):
            data = data.astype(complex)
        if data.ndim not in (1, 2) or (data.ndim == 2 and data.shape[0] != data.shape[1]):
            raise InvalidInput(f"state data must be a vector or square matrix, got {data.shape}")
        shape = self.mode_shape
        if shape is None:
            shape = (data.shape[0],)
        shape = tuple(int(d) for d in shape)
        if int(np.prod(shape)) != data.shape[0]:
            raise InvalidInput(f"mode_shape {shape} does not match data size {data.shape[0]}")
        if self.has_ancilla and shape[0] != 2:
            raise InvalidInput("ancilla must be the first factor with dimension 2")
        tol = self.norm_tol
        if data.ndim == 1:
            nrm = float(np.vdot(data, data).real)
            if abs(nrm - 1) > tol:
                raise InvalidInput(f"pure state norm {nrm:.12g} deviates from 1 by more than {tol}")
        else:
            tr = complex(np.trace(data))
            if abs(tr - 1) > tol:
                raise InvalidInput(f"density matrix trace {tr:.12g} deviates from 1")
            if np.max(np.abs(data - data.conj().T)) > tol:
                raise InvalidInput("density matrix is not Hermitian")
            # eigen-check is O(n^3); skip it for very large matrices
            if data.shape[0] <= 1024:
                ev = np.linalg.eigvalsh((data + data.conj().T) / 2)
                if ev[0] < -tol:
                    raise InvalidInput(f"density matrix has negative eigenvalue {ev[0]:.3g}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "mode_shape", shape)
        object.__setattr__(self, "warnings", tuple(self.warnings))

    @property
    def kind(self):
        return "pure" if self.data.ndim == 1 else "mixed"

    @property
    def dim(self):
        return self.data.shape[0]

    def density(self):
        """Density matrix of the state (a copy for pure states)."""
        if self.kind == "pure":
            return np.outer(self.data, self.data.conj())
        return self.data

    def with_warnings(self, extra):
        return OscState(self.data, self.mode_shape, self.has_ancilla, self.norm_tol,
                        self.warnings + tuple(extra))

    @classmethod
    def normalized(cls, data, mode_shape=None, **kw):
        """Build a state after rescaling ``data`` to unit norm / trace."""
        data = np.asarray(data, dtype=np.result_type(data, complex))
        if data.ndim == 1:
            nrm = np.sqrt(np.vdot(data, data).real)
        else:
            nrm = np.trace(data).real
        if not nrm > 0:
            raise InvalidInput("cannot normalise a zero state")
        return cls(data / nrm, mode_shape, **kw)


def fock_state(n, dim):
    vec = np.zeros(_check_dim(dim), dtype=complex)
    if not 0 <= n < dim:
        raise InvalidInput(f"level {n} outside 0..{dim - 1}")
    vec[n] = 1
    return OscState(vec)


def vacuum(dim):
    return fock_state(0, dim)


def partial_trace(state, keep):
    """Reduced density matrix on the subsystems listed in ``keep``.

    Returns a mixed :class:`OscState`; the ancilla flag survives only if the
    ancilla (index 0) is kept.
    """
    shape = state.mode_shape
    keep = sorted(set(int(k) for k in keep))
    if not keep or keep[0] < 0 or keep[-1] >= len(shape):
        raise InvalidInput(f"keep={keep} invalid for mode_shape {shape}")
    drop = [i for i in range(len(shape)) if i not in keep]
    kdim = int(np.prod([shape[i] for i in keep]))
    if state.kind == "pure":
        psi = state.data.reshape(shape).transpose(keep + drop).reshape(kdim, -1)
        rho = psi @ psi.conj().T
    else:
        n = len(shape)
        rho = state.data.reshape(shape + shape)
        perm = keep + drop
        rho = rho.transpose(perm + [n + i for i in perm])
        ddim = int(np.prod([shape[i] for i in drop]))
        rho = rho.reshape(kdim, ddim, kdim, ddim)
        rho = np.einsum("ajbj->ab", rho)
    return OscState(rho, tuple(shape[i] for i in keep),
                    has_ancilla=state.has_ancilla and 0 in keep,
                    norm_tol=max(state.norm_tol, 1e-8), warnings=state.warnings)


def expectation(state, op):
    """``<psi|op|psi>`` or ``Tr(op rho)``."""
    op = np.asarray(op)
    if op.shape != (state.dim, state.dim):
        raise InvalidInput(f"operator shape {op.shape} does not match state dim {state.dim}")
    if state.kind == "pure":
        return complex(np.vdot(state.data, op @ state.data))
    return complex(np.einsum("ij,ji->", op, state.data))


def _psd_sqrt(rho):
    w, v = np.linalg.eigh((rho + rho.conj().T) / 2)
    return (v * np.sqrt(np.clip(w, 0, None))) @ v.conj().T


def fidelity(a, b):
    """Squared (Uhlmann) fidelity ``(Tr sqrt(sqrt(rho) sigma sqrt(rho)))^2`` in [0, 1]."""
    if a.dim != b.dim:
        raise InvalidInput(f"dimension mismatch {a.dim} vs {b.dim}")
    if a.kind == "pure" and b.kind == "pure":
        f = abs(np.vdot(a.data, b.data)) ** 2
    elif a.kind == "pure":
        f = np.vdot(a.data, b.data @ a.data).real
    elif b.kind == "pure":
        f = np.vdot(b.data, a.data @ b.data).real
    else:
        sa = _psd_sqrt(a.data)
        w = np.linalg.eigvalsh(sa @ b.data @ sa)
        f = np.sum(np.sqrt(np.clip(w, 0, None))) ** 2
    return float(min(1.0, max(0.0, f)))


def leakage(state, guard_band=GUARD_BAND):
    """Largest population found in the top ``guard_band`` levels of any oscillator mode."""
    return leakage_of(state.data, state.mode_shape, state.has_ancilla, guard_band)


def leakage_of(data, mode_shape, has_ancilla=False, guard_band=GUARD_BAND, modes=None):
    """Array-level version of :func:`leakage` (no state validation).

    ``modes`` restricts the check to the listed mode indices.
    """
    shape = tuple(mode_shape)
    if data.ndim == 1:
        pops = np.abs(data.reshape(shape)) ** 2
    else:
        pops = np.real(np.diagonal(data)).reshape(shape)
    worst = 0.0
    start = 1 if has_ancilla else 0
    for ax in range(start, len(shape)):
        if modes is not None and ax not in modes:
            continue
        d = shape[ax]
        if guard_band >= d:
            raise InvalidInput(f"guard_band {guard_band} must be below mode dimension {d}")
        other = tuple(i for i in range(len(shape)) if i != ax)
        marg = pops.sum(axis=other)
        worst = max(worst, float(marg[d - guard_band:].sum()))
    return worst


def interior_norm(op, keep):
    """Spectral norm of ``op`` restricted to the first ``keep`` levels on both sides."""
    return float(np.linalg.norm(np.asarray(op)[:keep, :keep], 2))


def crop(vec_or_rho, dims_from, dims_to):
    """Restrict a state on ``dims_from`` to the lower levels ``dims_to`` (no renormalisation)."""
    sl = tuple(slice(0, d) for d in dims_to)
    arr = np.asarray(vec_or_rho)
    if arr.ndim == 1:
        return arr.reshape(dims_from)[sl].reshape(-1)
    n = int(np.prod(dims_to))
    return arr.reshape(tuple(dims_from) * 2)[sl + sl].reshape(n, n)
