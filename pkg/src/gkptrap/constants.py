"""Physical constants (SI, CODATA 2018) and unit helpers."""

import math

HBAR = 1.054571817e-34  # J s
K_B = 1.380649e-23  # J / K
ATOMIC_MASS_UNIT = 1.66053906660e-27  # kg

# 88Sr mass used for the lattice simulation
SR88_MASS_U = 87.906
SQRT_PI = math.sqrt(math.pi)


def mk_to_joule(millikelvin):
    return millikelvin * 1e-3 * K_B


def u_to_kg(mass_u):
    return mass_u * ATOMIC_MASS_UNIT


def hz_to_rad(freq_hz):
    return 2.0 * math.pi * freq_hz
