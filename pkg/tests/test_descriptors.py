import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from xcforge.descriptors import (DEFAULT_CONSTANTS, EPSILON, compute_alpha_v, compute_descriptors, compute_s,
                                 compute_spin_averages, compute_t, compute_u, compute_v_st, compute_w, compute_z_x,
                                 compute_zeta_rs, spin_fz)
from xcforge.griddata import GaussianTerm, SyntheticSystemSpec, generate, scale_grid, swap_spin, tau_ueg

FZ_HALF = 0.21914659637633051778  # 30-digit evaluation of the closed form at zeta = 0.5
K_C = DEFAULT_CONSTANTS.k_c


def test_s_examples():
    assert compute_s(1.0, 0.0) == 0.0
    assert compute_s(1.0, 1.0) == 1.0


def test_s_zero_at_gaussian_center():
    g = generate(SyntheticSystemSpec("gaussian_sum", terms=(GaussianTerm((0, 0, 0), 1.0, 1.0),)))
    d = compute_descriptors(g)
    # no grid point sits at r = 0; s -> 0 as r -> 0 (s ~ 2 a r rho^{-1/3})
    r = np.linalg.norm(g.coords, axis=1)
    i = int(np.argmin(r))
    assert d.s[0, i] == pytest.approx(2 * r[i] * g.rho[0, i] ** (-1 / 3), rel=1e-12)
    assert d.s[0, i] < 1e-2


def test_w_examples():
    assert compute_w(K_C) == 0.0
    assert compute_w(0.0) == 1.0


def test_u_saturates():
    assert abs(compute_u(1e6, 0.004) - 1.0) < 1e-9
    assert compute_u(0.0, 0.2) == 0.0


def test_v_st_examples():
    assert compute_v_st(0.0, 5.0) == 0.0
    assert compute_v_st(1.0, 1.0) == 1.0 / (2.0 + 1e-10)
    vals = compute_v_st(np.logspace(-3, 8, 50), 1.0)
    assert np.all(np.diff(vals) > 0) and vals[-1] < 1.0 and vals[-1] > 1 - 1e-7


def test_fz_examples():
    assert spin_fz(0.0) == 0.0
    assert spin_fz(1.0) == pytest.approx(1.0, abs=1e-15)
    assert spin_fz(-1.0) == pytest.approx(1.0, abs=1e-15)
    assert spin_fz(0.5) == pytest.approx(FZ_HALF, rel=1e-14)
    with pytest.raises(ValueError):
        spin_fz(1.5)


def test_z_x_examples():
    z, x = compute_z_x(0.0, 2.0, 3.0)
    assert z == 0.0 and x == 0.0
    z, _ = compute_z_x(1.0, 1.0, 1.0)
    assert z == 1.0 / (2.0 + EPSILON)


def test_alpha_examples():
    rho = 0.3
    a, v = compute_alpha_v(rho, 0.0, tau_ueg(rho))
    assert a == pytest.approx(1.0, abs=1e-14) and v == pytest.approx(0.5, abs=1e-14)
    g = 0.2
    a, v = compute_alpha_v(rho, g, g**2 / (8 * rho))
    assert abs(a) < 1e-15 and v == 1.0
    tau = 10.0 * K_C * rho ** (5 / 3)
    a, v = compute_alpha_v(rho, 0.0, tau)
    assert a == pytest.approx(10.0, rel=1e-14) and v == 0.01


def test_spin_averages():
    s = np.array([0.7, 0.7])
    t = np.array([2.0, 2.0])
    s_avg, t_avg, *_ = compute_spin_averages(s, t, np.ones(2), 1.0)
    assert s_avg == pytest.approx(0.7, rel=1e-15)
    assert t_avg == pytest.approx(2.0, rel=1e-10)
    _, t_avg, *_ = compute_spin_averages(np.zeros(2), np.array([1.0, 3.0]), np.ones(2), 1.0)
    assert t_avg == pytest.approx(1.5, rel=1e-10)


def test_zeta_rs():
    zeta, rs, (za, zb) = compute_zeta_rs(0.2, 0.2)
    assert zeta == 0 and za == 0 and zb == 0
    z1, _, (a1, b1) = compute_zeta_rs(0.3, 0.1)
    z2, _, (a2, b2) = compute_zeta_rs(0.1, 0.3)
    assert z2 == -z1 and a1 == b2 and b1 == a2
    _, rs, _ = compute_zeta_rs(1.5 / (4 * math.pi), 1.5 / (4 * math.pi))
    assert rs == pytest.approx(1.0, rel=1e-15)


def test_ueg_grid_descriptors():
    g = generate(SyntheticSystemSpec("ueg", rho_per_spin=0.1))
    d = compute_descriptors(g)
    assert np.all(d.s == 0.0)
    assert np.allclose(d.t, K_C, rtol=1e-14, atol=0)
    assert np.allclose(d.w, 0.0, atol=1e-14)
    assert np.allclose(d.alpha, 1.0, atol=1e-14)


PER_SPIN = ("s", "t", "w", "u_x", "u_ss", "v_st", "alpha", "v_alpha")
AVERAGED = ("s_avg", "t_avg", "w_avg", "u_avg", "v_avg", "v_st_avg", "z_os", "x_os", "fz")


@pytest.mark.parametrize("lam", [0.5, 2.0, 5.0])
def test_scaling_invariance(polarized_grid, lam):
    d0 = compute_descriptors(polarized_grid)
    d1 = compute_descriptors(scale_grid(polarized_grid, lam))
    ok = ~(d0.floored | d1.floored)
    for name in ("s", "t", "w", "u_x", "u_ss", "v_st", "z_ss", "x_ss"):
        a, b = getattr(d0, name)[ok], getattr(d1, name)[ok]
        # s and t are unbounded (t ~ 1e9 in the tails), so compare relative to magnitude
        assert np.max(np.abs(a - b) / np.maximum(1.0, np.abs(a))) < 1e-10, name
    # alpha = (t - s^2/8)/k_c cancels in the tails; one rounding of the scaled tau moves it by
    # ~eps * t / k_c.  Hold 1e-10 where that is attainable and the conditioning bound elsewhere.
    cond = (d0.t + d0.s**2 / 8) / K_C
    tame = ok & (cond < 1e4)
    for name in ("alpha", "v_alpha"):
        diff = np.abs(getattr(d0, name) - getattr(d1, name))
        assert np.max(diff[tame]) < 1e-10, name
        assert np.all(diff[ok] <= np.maximum(1e-10, 16 * np.finfo(float).eps * cond[ok])), name


def test_swap_invariance(polarized_grid):
    d0 = compute_descriptors(polarized_grid)
    d1 = compute_descriptors(swap_spin(polarized_grid))
    for name in PER_SPIN:
        assert np.array_equal(getattr(d0, name), getattr(d1, name)[::-1]), name
    for name in AVERAGED:
        assert np.max(np.abs(getattr(d0, name) - getattr(d1, name))) <= 1e-14, name
    assert np.array_equal(d0.zeta, -d1.zeta)


def test_density_floor_flagged():
    g = generate(SyntheticSystemSpec("gaussian_sum", terms=(GaussianTerm((0, 0, 0), 3.0, 1.0, "a"),)))
    d = compute_descriptors(g)
    assert d.floored[1].all()
    assert np.all(np.isfinite(d.s)) and np.all(np.isfinite(d.alpha))


def test_ranges_over_random_samples():
    rng = np.random.default_rng(7)
    n = 100_000
    rho = 10 ** rng.uniform(-12, 3, (2, n))
    grad = 10 ** rng.uniform(-8, 4, (2, n)) * (rng.random((2, n)) > 0.05)
    tau_w = grad**2 / (8 * rho)
    tau = tau_w + 10 ** rng.uniform(-6, 2, (2, n)) * tau_ueg(rho)
    s = compute_s(rho, grad)
    t = compute_t(rho, tau)
    w = compute_w(t)
    assert np.all((w >= -1) & (w <= 1))
    for gamma in (0.004, 0.2, 0.006):
        u = compute_u(s, gamma)
        assert np.all((u >= 0) & (u < 1))
    v = compute_v_st(s, t)
    assert np.all((v >= 0) & (v < 1))
    zeta = (rho[0] - rho[1]) / (rho[0] + rho[1])
    fz = spin_fz(zeta)
    assert np.all((fz >= 0) & (fz <= 1))
    z, x = compute_z_x(fz, s, t)
    assert np.all((z >= 0) & (z < 1)) and np.all((x >= 0) & (x < 1))
    alpha, va = compute_alpha_v(rho, grad, tau)
    assert np.all(alpha >= -1e-12 * np.maximum(1.0, np.abs(alpha)))
    assert np.all((va >= 0.01) & (va <= 1.0))


@given(st.floats(-1.0, 1.0))
def test_fz_even(z):
    assert abs(spin_fz(z) - spin_fz(-z)) <= 1e-14


@given(st.floats(0.0, 1e3), st.floats(0.0, 1e3))
def test_u_monotone_in_s(a, b):
    lo, hi = sorted((a, b))
    assert compute_u(lo, 0.2) <= compute_u(hi, 0.2)


@given(st.floats(0.0, 1e4), st.floats(0.0, 1e4))
def test_v_st_monotone(a, b):
    lo, hi = sorted((a, b))
    assert compute_v_st(lo, 1.0) <= compute_v_st(hi, 1.0)


@given(st.floats(0.0, 9.9), st.floats(0.0, 9.9))
def test_v_alpha_nonincreasing(a, b):
    lo, hi = sorted((a, b))
    rho = 0.5

    def v(alpha):
        return compute_alpha_v(rho, 0.0, alpha * K_C * rho ** (5 / 3))[1]

    assert v(hi) <= v(lo) + 1e-15
