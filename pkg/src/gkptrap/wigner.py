"""Wigner functions on (q, p) grids and their CSV/JSON export."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from scipy.special import gammaln

from .fock import displacement_block

CONVENTION = {
    "normalisation": "integral over dq dp equals 1",
    "definition": "W(q,p) = (1/pi) Tr[rho D(q+ip) Pi D(q+ip)^dag], Pi the parity operator",
    "quadratures": "q = (a^dag + a)/sqrt(2), p = i(a^dag - a)/sqrt(2), [q,p] = i",
}


def wigner(state, q_grid, p_grid):
    """Wigner function ``W[i, j]`` at ``(q_grid[j], p_grid[i])``.

    Uses ``D(b) Pi D(b)^dag = D(2b) Pi``, so ``W = Tr[rho D(2b) Pi] / pi`` with
    the displacement matrix elements generated by the normalised Laguerre
    recurrence for all grid points at once. The recurrence stays stable for
    cutoffs in the hundreds, unlike the plain ladder recursion.

    Parameters
    ----------
    state : OscState
        Single-mode state, pure or mixed.
    q_grid, p_grid : array_like
        Sorted 1-D grids.
    """
    q = np.asarray(q_grid, dtype=float)
    p = np.asarray(p_grid, dtype=float)
    if q.ndim != 1 or p.ndim != 1:
        raise ValueError("grids must be one-dimensional")
    rho = state.density()
    Q, P = np.meshgrid(q, p)
    beta = (2 * (Q + 1j * P) / np.sqrt(2)).reshape(-1, 1)
    # blocks of grid points keep the working arrays cache-sized
    out = np.concatenate([_parity_trace(rho, beta[i:i + 1024]) for i in range(0, beta.shape[0], 1024)])
    return (out / np.pi).reshape(Q.shape)


def _parity_trace(rho, beta):
    dim = rho.shape[0]
    mag = np.abs(beta)
    x = mag**2
    phase = np.where(mag > 0, beta / np.where(mag > 0, mag, 1), 1)
    k = np.arange(dim)
    with np.errstate(divide="ignore", invalid="ignore"):
        logmag = np.where(mag > 0, np.log(np.where(mag > 0, mag, 1)), -np.inf)
        # n = 0 row of the scaled recurrence: exp(-x/2) |beta|^k / sqrt(k!)
        logg0 = -x / 2 + k * logmag - 0.5 * gammaln(k + 1.0)
    logg0[:, 0] = (-x / 2)[:, 0]
    g_prev = np.zeros_like(logg0)
    g_cur = np.exp(logg0)
    ang = np.angle(phase) * k
    cos_k, sin_k = np.cos(ang), np.sin(ang)
    W = np.zeros(beta.shape[0])
    for n in range(dim):
        m = dim - n
        row = rho[n, n:]
        coh = cos_k[:, :m] * row.real - sin_k[:, :m] * row.imag
        coh[:, 1:] *= 2
        W += (-1) ** n * np.einsum("ik,ik->i", g_cur[:, :m], coh)
        if n + 1 < dim:
            kk = k[: m - 1]
            g_next = ((2 * n + 1 + kk - x) * g_cur[:, : m - 1]
                      - np.sqrt(n * (n + kk)) * g_prev[:, : m - 1]) / np.sqrt((n + 1) * (n + kk + 1.0))
            g_prev, g_cur = g_cur[:, : m - 1], g_next
    return W


def wigner_parity(state, q_grid, p_grid, pad=60):
    """Brute-force displaced-parity evaluation (slow; used as a reference)."""
    rho = state.density()
    dim = rho.shape[0]
    big = dim + pad
    parity = (-1.0) ** np.arange(big)
    W = np.zeros((len(p_grid), len(q_grid)))
    for i, pv in enumerate(p_grid):
        for j, qv in enumerate(q_grid):
            D = displacement_block(complex(qv, pv), big)[:dim]
            W[i, j] = np.real(np.einsum("nm,mk,k,nk->", rho.T, D.conj(), parity, D)) / np.pi
    return W


def export_wigner(path, W, q_grid, p_grid, meta=None):
    """Write ``W`` as CSV plus a JSON sidecar.

    The CSV has two header rows, ``q`` followed by the q grid and ``p``
    followed by the p grid, and then one row per p value.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["q"] + [repr(float(v)) for v in q_grid])
        w.writerow(["p"] + [repr(float(v)) for v in p_grid])
        for row in np.asarray(W):
            w.writerow([""] + [repr(float(v)) for v in row])
    sidecar = {"convention": CONVENTION, "shape": list(np.shape(W))}
    sidecar.update(meta or {})
    side = path.with_suffix(".json")
    side.write_text(json.dumps(sidecar, indent=2, sort_keys=True))
    return path, side


def load_wigner(path):
    """Inverse of :func:`export_wigner`; returns ``(W, q_grid, p_grid)``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    q = np.array([float(v) for v in rows[0][1:]])
    p = np.array([float(v) for v in rows[1][1:]])
    W = np.array([[float(v) for v in r[1:]] for r in rows[2:]])
    return W, q, p
