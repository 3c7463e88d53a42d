"""Optical tweezer and 2D optical lattice trap models.

Potentials are exact analytic intensity profiles. Oscillator frequencies,
quartic anharmonicities ``eta`` and quadratic couplings ``eps`` follow from
the fourth-order Taylor expansion around the trap bottom, written in
dimensionless quadratures ``q_j = j sqrt(m omega_j / hbar)``::

    U/hbar = -U0/hbar + sum_j omega_j q_j^2 / 2 - sum_j eta_j omega_j q_j^4
             - eps_zx omega_z q_z^2 (q_x^2 + q_y^2) - eps_xy omega_x q_x^2 q_y^2

Closed forms exist for the tweezer and for the square (45 degree) lattice;
other lattice angles go through a numeric Taylor expansion of the potential.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .constants import HBAR, K_B, SR88_MASS_U, hz_to_rad, mk_to_joule, u_to_kg
from .errors import InvalidParameters, PhysicsWarning
from .evolution import ProductSum
from .fock import quadratures

DEFAULT_MASS = u_to_kg(SR88_MASS_U)


def _positive(**kw):
    for name, v in kw.items():
        if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
            raise InvalidParameters(f"{name} must be a positive finite number, got {v!r}")


@dataclass(frozen=True)
class TweezerSpec:
    """Focused Gaussian beam trap. SI units throughout (J, m, kg)."""

    depth_U0: float
    waist_w0: float
    wavelength: float
    mass: float = DEFAULT_MASS

    def __post_init__(self):
        _positive(depth_U0=self.depth_U0, waist_w0=self.waist_w0,
                  wavelength=self.wavelength, mass=self.mass)
        if not self.paraxial_ok:
            warnings.warn(f"Rayleigh range {self.rayleigh_range:.3g} m is below 2 w0; "
                          "the paraxial Gaussian beam is only a rough model here",
                          PhysicsWarning, stacklevel=3)

    @property
    def rayleigh_range(self):
        return math.pi * self.waist_w0**2 / self.wavelength

    @property
    def paraxial_ok(self):
        return self.rayleigh_range >= 2 * self.waist_w0

    @classmethod
    def from_lab(cls, depth_mK, waist_nm, wavelength_nm, mass_u=SR88_MASS_U):
        return cls(mk_to_joule(depth_mK), waist_nm * 1e-9, wavelength_nm * 1e-9, u_to_kg(mass_u))


@dataclass(frozen=True)
class LatticeSpec:
    """Folded 2D lattice with Gaussian confinement along z.

    ``theta`` is the folding angle; 45 degrees gives a square lattice.
    """

    depth_U0: float
    beam_waist_w0: float
    wavelength: float
    mass: float = DEFAULT_MASS
    theta: float = math.pi / 4

    def __post_init__(self):
        _positive(depth_U0=self.depth_U0, beam_waist_w0=self.beam_waist_w0,
                  wavelength=self.wavelength, mass=self.mass)
        if not 0 < self.theta < math.pi / 2:
            raise InvalidParameters("theta must lie in (0, pi/2)")

    @property
    def is_square(self):
        return abs(self.theta - math.pi / 4) < 1e-12

    @classmethod
    def from_lab(cls, depth_mK, waist_um, wavelength_nm, mass_u=SR88_MASS_U, theta_deg=45.0):
        return cls(mk_to_joule(depth_mK), waist_um * 1e-6, wavelength_nm * 1e-9,
                   u_to_kg(mass_u), math.radians(theta_deg))


@dataclass(frozen=True)
class OscillatorParams:
    """Harmonic frequencies (rad/s) plus quartic anharmonicities and couplings.

    ``eta_y`` and ``eps_zy`` default to ``eta_x`` and ``eps_zx`` (x/y symmetric traps).
    """

    omega_x: float
    omega_y: float
    omega_z: float
    eta_z: float
    eta_x: float
    eps_zx: float
    eps_xy: float
    depth_U0: float
    eta_y: float = None
    eps_zy: float = None

    def __post_init__(self):
        if self.eta_y is None:
            object.__setattr__(self, "eta_y", self.eta_x)
        if self.eps_zy is None:
            object.__setattr__(self, "eps_zy", self.eps_zx)
        _positive(omega_x=self.omega_x, omega_y=self.omega_y, omega_z=self.omega_z,
                  depth_U0=self.depth_U0)
        for name in ("eta_z", "eta_x", "eta_y", "eps_zx", "eps_zy", "eps_xy"):
            v = getattr(self, name)
            if not 0 <= v < 1:
                raise InvalidParameters(f"{name} must lie in [0, 1), got {v!r}")

    def capacity_prefactors(self):
        """``eta`` and ``eps`` divided by ``hbar omega / U0`` of the relevant mode."""
        ux = HBAR * self.omega_x / self.depth_U0
        uz = HBAR * self.omega_z / self.depth_U0
        return {"eta_z": self.eta_z / uz, "eta_x": self.eta_x / ux,
                "eps_zx": self.eps_zx / ux, "eps_xy": self.eps_xy / ux}

    def to_dict(self):
        return asdict(self)


# -- potentials ------------------------------------------------------------------

def tweezer_potential(spec, x, y, z):
    """Exact Gaussian-beam potential in joules (accepts complex coordinates)."""
    zr = spec.rayleigh_range
    s = 1 + (z / zr) ** 2
    return -spec.depth_U0 / s * np.exp(-2 * (x**2 + y**2) / (spec.waist_w0**2 * s))


def lattice_potential(spec, x, y, z):
    """Exact folded-lattice potential with the Gaussian z envelope, in joules."""
    k = 4 * math.pi / spec.wavelength
    c, s = math.cos(spec.theta), math.sin(spec.theta)
    inten = (2 + np.cos(k * (x * c + y * s)) + np.cos(k * (x * c - y * s))
             + 2 * np.cos(k * y * s) + 2 * np.cos(k * x * c)) / 8
    return -spec.depth_U0 * np.exp(-2 * z**2 / spec.beam_waist_w0**2) * inten


def lattice_profiles(spec):
    """Separable intensity factors ``(f_x, f_y, f_z)`` of the square lattice.

    At 45 degrees ``U = -U0 f_x(x) f_y(y) f_z(z)`` holds exactly with
    ``f_x = cos^2(k' x / 2)``, ``k' = 4 pi / (sqrt(2) lambda)``.
    """
    if not spec.is_square:
        raise InvalidParameters("the separable form needs theta = 45 degrees")
    kp = 4 * math.pi / (math.sqrt(2) * spec.wavelength)
    w0 = spec.beam_waist_w0

    def fxy(u):
        return np.cos(kp * u / 2) ** 2

    def fz(u):
        return np.exp(-2 * u**2 / w0**2)

    return fxy, fxy, fz


def _potential_fn(spec):
    if isinstance(spec, TweezerSpec):
        return lambda x, y, z: tweezer_potential(spec, x, y, z)
    if isinstance(spec, LatticeSpec):
        return lambda x, y, z: lattice_potential(spec, x, y, z)
    raise InvalidParameters(f"unknown trap spec {type(spec).__name__}")


def _length_scales(spec):
    if isinstance(spec, TweezerSpec):
        return spec.waist_w0, spec.waist_w0, spec.rayleigh_range
    return spec.wavelength / 4, spec.wavelength / 4, spec.beam_waist_w0


def taylor_coefficient(fn, powers, radii, n=32):
    """Taylor coefficient of ``prod x_j^{powers_j}`` of ``fn(x, y, z)`` at the origin.

    Evaluated as a discrete Cauchy integral on circles of the given radii in
    the complex plane, which converges geometrically for analytic ``fn`` and
    avoids the cancellation of real finite-difference stencils.
    """
    ang = 2 * np.pi * np.arange(n) / n
    axes, weights = [], []
    for p, r in zip(powers, radii):
        if p > 0:
            axes.append(r * np.exp(1j * ang))
            weights.append(np.exp(-1j * p * ang) / (n * r**p))
        else:
            axes.append(np.zeros(1))
            weights.append(np.ones(1))
    X, Y, Z = np.meshgrid(*axes, indexing="ij")
    vals = np.asarray(fn(X, Y, Z), dtype=complex)
    return float(np.einsum("ijk,i,j,k->", vals, *weights).real)


def numeric_params(spec):
    """Oscillator parameters from the Taylor expansion of the exact potential."""
    fn = _potential_fn(spec)
    L = _length_scales(spec)
    radii = [0.25 * v for v in L]
    m, U0 = spec.mass, spec.depth_U0

    def coef(px, py, pz):
        return taylor_coefficient(fn, (px, py, pz), radii)

    wx, wy, wz = (math.sqrt(2 * coef(*p) / m) for p in ((2, 0, 0), (0, 2, 0), (0, 0, 2)))

    def quartic(c, *omegas):
        return -c * HBAR / (m**2 * math.prod(omegas))

    return OscillatorParams(
        omega_x=wx, omega_y=wy, omega_z=wz,
        eta_z=quartic(coef(0, 0, 4), wz, wz, wz),
        eta_x=quartic(coef(4, 0, 0), wx, wx, wx),
        eta_y=quartic(coef(0, 4, 0), wy, wy, wy),
        eps_zx=quartic(coef(2, 0, 2), wz, wz, wx),
        eps_zy=quartic(coef(0, 2, 2), wz, wz, wy),
        eps_xy=quartic(coef(2, 2, 0), wx, wx, wy),
        depth_U0=U0)


# -- closed forms ----------------------------------------------------------------

def tweezer_params(spec):
    """Closed-form tweezer parameters."""
    if not isinstance(spec, TweezerSpec):
        raise InvalidParameters("tweezer_params needs a TweezerSpec")
    U0, m = spec.depth_U0, spec.mass
    zr = spec.rayleigh_range
    wz = math.sqrt(2 * U0 / (m * zr**2))
    # same quantity written with the waist and wavelength
    alt = math.sqrt(2) * spec.wavelength / (math.pi * spec.waist_w0**2) * math.sqrt(U0 / m)
    assert abs(wz - alt) <= 1e-12 * wz
    wx = math.sqrt(4 * U0 / (m * spec.waist_w0**2))
    u = HBAR / U0
    return OscillatorParams(omega_x=wx, omega_y=wx, omega_z=wz,
                            eta_z=u * wz / 4, eta_x=u * wx / 8,
                            eps_zx=u * wx / 2, eps_xy=u * wx / 4, depth_U0=U0)


def lattice_params(spec):
    """Closed-form parameters of the square lattice; numeric for other angles."""
    if not isinstance(spec, LatticeSpec):
        raise InvalidParameters("lattice_params needs a LatticeSpec")
    if not spec.is_square:
        return numeric_params(spec)
    U0, m = spec.depth_U0, spec.mass
    wz = math.sqrt(4 * U0 / (m * spec.beam_waist_w0**2))
    wx = math.sqrt(4 * math.pi**2 * U0 / (m * spec.wavelength**2))
    u = HBAR / U0
    return OscillatorParams(omega_x=wx, omega_y=wx, omega_z=wz,
                            eta_z=u * wz / 8, eta_x=u * wx / 12,
                            eps_zx=u * wx / 4, eps_xy=u * wx / 4, depth_U0=U0)


def trap_params(spec):
    return tweezer_params(spec) if isinstance(spec, TweezerSpec) else lattice_params(spec)


# -- Hamiltonian -----------------------------------------------------------------

def _powers_of_q(dim):
    q = quadratures(dim + 4)[0].real
    q2 = q @ q
    return q2[:dim, :dim].copy(), (q2 @ q2)[:dim, :dim].copy()


def corrected_omega_z(params, n_spectators=2):
    """``omega_z sqrt(1 - sum eps)`` after absorbing the zero-point couplings."""
    eps = params.eps_zx + (params.eps_zy if n_spectators == 2 else 0.0)
    return params.omega_z * math.sqrt(1 - eps)


def anharmonic_hamiltonian(params, dims, corrected=False):
    """Fourth-order trap Hamiltonian ``H/hbar`` (rad/s) as a :class:`ProductSum`.

    Parameters
    ----------
    params : OscillatorParams
    dims : tuple of int
        ``(n_x, n_z)`` or ``(n_x, n_y, n_z)``; the GKP mode z comes last.
    corrected : bool
        Use the Fock basis of the z oscillator with the spectator zero-point
        coupling absorbed, i.e. frequency :func:`corrected_omega_z` and
        quadrature ``q_z = (1 - eps)^(-1/4) Q``. The spectator couplings then
        act through ``q_s^2 - 1/2``.

    Notes
    -----
    Number operators are used without the zero-point ``1/2``, so the
    harmonic limit is ``sum_j omega_j n_j``.
    """
    dims = tuple(int(d) for d in dims)
    if len(dims) not in (2, 3) or min(dims) < 4:
        raise InvalidParameters("dims must be (n_x, n_z) or (n_x, n_y, n_z), each >= 4")
    nmodes = len(dims)
    spect = list(range(nmodes - 1))
    zi = nmodes - 1
    omegas = [params.omega_x, params.omega_y][: nmodes - 1] + [params.omega_z]
    etas = [params.eta_x, params.eta_y][: nmodes - 1]
    epss = [params.eps_zx, params.eps_zy][: nmodes - 1]
    ops = [_powers_of_q(d) for d in dims]
    nums = [np.diag(np.arange(d, dtype=float)) for d in dims]

    def factors(**at):
        f = [None] * nmodes
        for i, op in at.items():
            f[int(i[1:])] = op
        return f

    terms = []
    for i in spect:
        terms.append((omegas[i], factors(**{f"m{i}": nums[i]})))
        terms.append((-etas[i] * omegas[i], factors(**{f"m{i}": ops[i][1]})))
    q2z, q4z = ops[zi]
    if corrected:
        scale = 1 - sum(epss)
        wz = params.omega_z * math.sqrt(scale)
        terms.append((wz, factors(**{f"m{zi}": nums[zi]})))
        terms.append((-params.eta_z * params.omega_z / scale, factors(**{f"m{zi}": q4z})))
        for i in spect:
            shifted = ops[i][0] - 0.5 * np.eye(dims[i])
            terms.append((-epss[i] * params.omega_z / math.sqrt(scale),
                          factors(**{f"m{i}": shifted, f"m{zi}": q2z})))
    else:
        terms.append((params.omega_z, factors(**{f"m{zi}": nums[zi]})))
        terms.append((-params.eta_z * params.omega_z, factors(**{f"m{zi}": q4z})))
        for i in spect:
            terms.append((-epss[i] * params.omega_z, factors(**{f"m{i}": ops[i][0], f"m{zi}": q2z})))
    if nmodes == 3:
        terms.append((-params.eps_xy * params.omega_x, factors(m0=ops[0][0], m1=ops[1][0])))
    return ProductSum(dims, terms)


# -- AC Stark shift ---------------------------------------------------------------

def ac_stark_depth(rabi, detuning):
    """Light-shift trap depth ``hbar Omega^2 / (4 delta)`` in joules.

    Positive for red detuning (``delta = omega_e - omega_L > 0``). Warns when
    ``|delta| < 10 Omega``, where second-order perturbation theory is doubtful.
    """
    if detuning == 0:
        raise InvalidParameters("detuning must be nonzero")
    if rabi != 0 and abs(detuning) < 10 * abs(rabi):
        warnings.warn(f"|detuning|/rabi = {abs(detuning / rabi):.3g} < 10; far-detuned "
                      "approximation is marginal", PhysicsWarning, stacklevel=2)
    return HBAR * rabi**2 / (4 * detuning)


# -- report ------------------------------------------------------------------------

REFERENCE_TWEEZER = dict(depth_mK=1.5, waist_nm=500.0, wavelength_nm=1040.0)
REFERENCE_LATTICE = dict(depth_mK=1.5, waist_um=20.0, wavelength_nm=1040.0)


def params_report(spec, params=None):
    """JSON-ready summary with frequencies in Hz (``omega / 2 pi``)."""
    params = params or trap_params(spec)
    kind = "tweezer" if isinstance(spec, TweezerSpec) else "lattice"
    out = {
        "trap": kind,
        "inputs": {"depth_mK": spec.depth_U0 / K_B * 1e3, "wavelength_nm": spec.wavelength * 1e9,
                   "mass_kg": spec.mass},
        "omega_z_2pi_Hz": params.omega_z / hz_to_rad(1.0),
        "omega_xy_2pi_Hz": params.omega_x / hz_to_rad(1.0),
        "eta_z": params.eta_z,
        "eps": params.eps_zx,
        "eps_xy": params.eps_xy,
        "eta_x": params.eta_x,
    }
    if kind == "tweezer":
        out["inputs"]["waist_nm"] = spec.waist_w0 * 1e9
        out["rayleigh_range_nm"] = spec.rayleigh_range * 1e9
    else:
        out["inputs"]["waist_um"] = spec.beam_waist_w0 * 1e6
        out["inputs"]["theta_deg"] = math.degrees(spec.theta)
    return out


def format_report(reports):
    """Aligned text table, one column per report."""
    rows = [("omega_z / 2pi", "omega_z_2pi_Hz", "kHz", 1e-3),
            ("omega_x,y / 2pi", "omega_xy_2pi_Hz", "kHz", 1e-3),
            ("eta_z", "eta_z", "", 1.0),
            ("eps_zx", "eps", "", 1.0)]
    head = f"{'quantity':<22}" + "".join(f"{r['trap']:>14}" for r in reports)
    lines = [head, "-" * len(head)]
    for label, key, unit, scale in rows:
        cells = "".join(f"{r[key] * scale:>14.4g}" for r in reports)
        lines.append(f"{label + (' [' + unit + ']' if unit else ''):<22}" + cells)
    return "\n".join(lines)
