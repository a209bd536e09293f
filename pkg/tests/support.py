"""Independent oracles and helpers shared by the test modules."""

import math

import numpy as np

from xcforge.xcforms import canonical_safs26a
from xcforge.xcforms.expr import walk

# PW92 (paramagnetic, ferromagnetic, spin stiffness) G(rs) parameters from the original publication.
_PW = {"ec0": (0.031091, 0.21370, 7.5957, 3.5876, 1.6382, 0.49294),
       "ec1": (0.015545, 0.20548, 14.1189, 6.1977, 3.3662, 0.62517),
       "mac": (0.016887, 0.11125, 10.357, 3.6231, 0.88026, 0.49671)}


def pw92_oracle(rs, zeta):
    """Straight transcription of the PW92 interpolation, written independently of the package."""
    rs = np.asarray(rs, dtype=float)
    zeta = np.asarray(zeta, dtype=float)

    def G(p):
        a, a1, b1, b2, b3, b4 = _PW[p]
        return -2 * a * (1 + a1 * rs) * np.log(1 + 1 / (2 * a * (b1 * rs**0.5 + b2 * rs + b3 * rs**1.5 + b4 * rs**2)))

    f = ((1 + zeta) ** (4 / 3) + (1 - zeta) ** (4 / 3) - 2) / (2 ** (4 / 3) - 2)
    fpp0 = 1.709921  # f''(0) as tabulated with the parametrization
    return G("ec0") - G("mac") * f / fpp0 * (1 - zeta**4) + (G("ec1") - G("ec0")) * f * zeta**4


def fsr_oracle(rho_sigma, omega=0.3):
    """erfc-attenuated Slater factor, closed form, a = omega / (2 k_F)."""
    from scipy.special import erf

    a = omega / (2 * (6 * math.pi**2 * rho_sigma) ** (1 / 3))
    return 1 - 8 / 3 * a * (math.sqrt(math.pi) * erf(1 / (2 * a)) - 3 * a + 4 * a**3
                            + (2 * a - 4 * a**3) * np.exp(-1 / (4 * a**2)))


def safs26a_denominators():
    """(channel, denominator node) for every rational wrap in SAFS26-a correlation."""
    form = canonical_safs26a()
    out = []
    for tree in ("gss", "gos"):
        for _, node in walk(getattr(form, tree)):
            if node.kind == "div":
                out.append((tree, node.children[1]))
    return form, out


def random_descriptor_view(rng, n):
    """Points over the full documented descriptor ranges."""
    below = np.nextafter(1.0, 0.0)
    return {"w": rng.uniform(-1, 1, n), "u": rng.uniform(0, below, n), "fz": rng.uniform(0, 1, n),
            "v_st": rng.uniform(0, below, n), "z": rng.uniform(0, below, n), "x": rng.uniform(0, below, n)}


def min_denominator(n_draws, n_points, seed=0, chunk=1000, scale=30.0):
    """Smallest SAFS26-a denominator value over random parameter draws x descriptor points."""
    from xcforge.xcforms.expr import evaluate

    rng = np.random.default_rng(seed)
    form, dens = safs26a_denominators()
    view = {k: v[None, :] for k, v in random_descriptor_view(rng, n_points).items()}
    lo = math.inf
    for start in range(0, n_draws, chunk):
        m = min(chunk, n_draws - start)
        params = rng.normal(0.0, scale, (form.n_params, m, 1))
        for _, node in dens:
            lo = min(lo, float(np.min(evaluate(node, view, params))))
    return lo
