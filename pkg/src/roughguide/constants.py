"""Physical constants (CODATA 2018) and 87Rb data.

Other modules read these as attributes of this module (``C.MU_B``) so that a
test can perturb a single value and see it propagate.
"""
import math

MU_B = 9.2740100783e-24  # J/T
K_B = 1.380649e-23  # J/K
H_PLANCK = 6.62607015e-34  # J s
HBAR = H_PLANCK / (2 * math.pi)
MU_0 = 1.25663706212e-6  # T m/A
AMU = 1.66053906660e-27  # kg
M_RB87 = 86.909180527 * AMU

# |F=2, m_F=2>: g_F m_F = 1, so the effective moment is one Bohr magneton
MU = MU_B

GAUSS = 1e-4  # T
