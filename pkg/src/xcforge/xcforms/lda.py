"""LDA reference energy densities (per unit volume, Hartree/Bohr^3)."""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

SLATER_PREFACTOR = 0.75 * (6.0 / math.pi) ** (1.0 / 3.0)

# Perdew-Wang 1992 G(rs) parameters: A, alpha1, beta1..beta4
_PW92_PARAMS = {
    "ec0": (0.031091, 0.21370, 7.5957, 3.5876, 1.6382, 0.49294),
    "ec1": (0.015545, 0.20548, 14.1189, 6.1977, 3.3662, 0.62517),
    "mac": (0.016887, 0.11125, 10.357, 3.6231, 0.88026, 0.49671),
}
_FPP0 = 1.709921
_FZ_NORM = 2.0 ** (4.0 / 3.0) - 2.0
_RSH_SERIES_CUT = 4.0


def lda_x_slater_pol(rho_sigma):
    """Spin-scaled Slater exchange of one spin channel, -(3/4)(6/pi)^(1/3) rho^(4/3)."""
    return -SLATER_PREFACTOR * np.asarray(rho_sigma, dtype=float) ** (4.0 / 3.0)


def pw92_g(rs, which: str):
    a, a1, b1, b2, b3, b4 = _PW92_PARAMS[which]
    rs = np.asarray(rs, dtype=float)
    srs = np.sqrt(rs)
    den = 2.0 * a * (b1 * srs + b2 * rs + b3 * rs * srs + b4 * rs * rs)
    return -2.0 * a * (1.0 + a1 * rs) * np.log1p(1.0 / den)


def pw92_eps(rs, zeta):
    """PW92 correlation energy per particle eps_c(rs, zeta)."""
    zeta = np.clip(np.asarray(zeta, dtype=float), -1.0, 1.0)
    fz = ((1.0 + zeta) ** (4.0 / 3.0) + (1.0 - zeta) ** (4.0 / 3.0) - 2.0) / _FZ_NORM
    z4 = zeta**4
    ec0 = pw92_g(rs, "ec0")
    ec1 = pw92_g(rs, "ec1")
    ac = -pw92_g(rs, "mac")
    return ec0 + ac * fz / _FPP0 * (1.0 - z4) + (ec1 - ec0) * fz * z4


def _rs(rho, floor):
    return (3.0 / (4.0 * math.pi * np.maximum(rho, floor))) ** (1.0 / 3.0)


def lda_c_pw(rho_a, rho_b, floor: float = 1e-12):
    """Total PW92 correlation energy density rho * eps_c."""
    ra = np.asarray(rho_a, dtype=float)
    rb = np.asarray(rho_b, dtype=float)
    tot = ra + rb
    zeta = np.where(tot > 0, (ra - rb) / np.maximum(tot, floor), 0.0)
    return tot * pw92_eps(_rs(tot, floor), zeta)


def lda_c_pw_spin_decomposed(rho_a, rho_b, floor: float = 1e-12):
    """Stoll-style split of PW92 into (ec_aa, ec_bb, ec_ab).

    Same-spin parts are fully polarised evaluations of each channel alone; the
    opposite-spin part is the remainder.
    """
    ra = np.asarray(rho_a, dtype=float)
    rb = np.asarray(rho_b, dtype=float)
    ec_aa = ra * pw92_eps(_rs(ra, floor), 1.0)
    ec_bb = rb * pw92_eps(_rs(rb, floor), 1.0)
    ec_ab = lda_c_pw(ra, rb, floor) - ec_aa - ec_bb
    return ec_aa, ec_bb, ec_ab


def fermi_kf(rho_sigma):
    """Spin-polarised Fermi wavevector (6 pi^2 rho_sigma)^(1/3)."""
    return (6.0 * math.pi**2 * np.asarray(rho_sigma, dtype=float)) ** (1.0 / 3.0)


def attenuation(a):
    """Short-range (erfc) Slater attenuation as a function of a = omega / (2 k_F)."""
    a = np.asarray(a, dtype=float)
    out = np.empty_like(a)
    big = a >= _RSH_SERIES_CUT
    ab = a[big]
    ia2 = 1.0 / ab**2
    # asymptotic series; the closed form cancels catastrophically here
    out[big] = ia2 * (1.0 / 36.0 - ia2 * (1.0 / 960.0 - ia2 * (1.0 / 26880.0 - ia2 / 829440.0)))
    sm = a[~big]
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        ex = np.where(sm > 0, np.exp(-1.0 / (4.0 * np.where(sm > 0, sm, 1.0) ** 2)), 0.0)
        inner = (math.sqrt(math.pi) * erf(1.0 / (2.0 * np.where(sm > 0, sm, 1.0)))
                 + (2.0 * sm - 4.0 * sm**3) * ex - 3.0 * sm + 4.0 * sm**3)
    out[~big] = np.where(sm > 0, 1.0 - (8.0 / 3.0) * sm * inner, 1.0)
    return out if out.ndim else float(out)


def rsh_attenuation(rho_sigma, omega: float = 0.3, floor: float = 1e-12):
    """Short-range attenuation factor f_SR(rho_sigma, omega) in (0, 1]."""
    kf = fermi_kf(np.maximum(np.asarray(rho_sigma, dtype=float), floor))
    return attenuation(omega / (2.0 * kf))
