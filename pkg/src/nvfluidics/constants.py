"""Physical constants (CODATA 2018 exact / recommended values, SI units)."""

from scipy import constants as _c

MU0_OVER_4PI = 1e-7  # T m / A
MU0 = 4e-7 * _c.pi
PLANCK_H = _c.h  # J s
BOHR_MAGNETON = _c.physical_constants["Bohr magneton"][0]  # J / T
BOLTZMANN_K = _c.k  # J / K
LANDE_G = 2.0

# Electron gyromagnetic ratio used for the NV ground state, Hz / T.
GAMMA_NV = LANDE_G * BOHR_MAGNETON / PLANCK_H
