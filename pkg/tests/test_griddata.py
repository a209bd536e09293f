import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from xcforge.griddata import (K_C, GaussianTerm, GridFormatError, GridSpecError, GridWarning, SyntheticSystemSpec,
                              gaussian_norm, generate, integrate, load_grid, save_grid, scale_grid, swap_spin)

K_C_ORACLE = 4.557799872345596  # 0.3 (6 pi^2)^(2/3)
BALL_VOLUME = 33.510321638291124  # 4/3 pi 2^3


def gauss(exponent=1.3, amplitude=0.8, spin="ab", center=(0.0, 0.0, 0.0)):
    return GaussianTerm(center, exponent, amplitude, spin)


def gsys(terms, resolution="coarse", blend=0.2):
    return generate(SyntheticSystemSpec("gaussian_sum", resolution, terms=tuple(terms), blend=blend))


def ueg(rho=0.5, resolution="coarse"):
    return generate(SyntheticSystemSpec("ueg", resolution, rho_per_spin=rho))


def test_k_c_constant():
    assert K_C == pytest.approx(K_C_ORACLE, rel=1e-15)


def test_ueg_unpolarized_and_uniform():
    g = ueg(0.5)
    assert np.all(g.zeta == 0.0)
    assert np.all(g.grad == 0.0)
    assert np.allclose(g.tau / g.rho ** (5 / 3), K_C_ORACLE, rtol=1e-14, atol=0)


def test_ueg_grid_volume_and_integral():
    g = ueg(0.25)
    assert integrate(g, np.ones(len(g))) == pytest.approx(BALL_VOLUME, rel=1e-12)
    assert integrate(g, g.rho_total) == pytest.approx(0.5 * BALL_VOLUME, rel=1e-12)


def test_single_gaussian_tau_is_weizsacker():
    a, amp = 1.3, 0.8
    g = gsys([gauss(a, amp)], blend=0.0)
    r2 = np.sum(g.coords**2, axis=1)
    rho = amp * np.exp(-a * r2)
    # |grad rho| = 2 a r rho, tau_W = |grad rho|^2 / (8 rho) = a^2 r^2 rho / 2
    tau_w = 0.5 * a**2 * r2 * rho
    assert np.allclose(g.tau[0], tau_w, rtol=1e-12, atol=1e-300)
    assert np.allclose(g.tau[1], tau_w, rtol=1e-12, atol=1e-300)


def test_gaussian_norm_closed_form_at_fine():
    terms = [gauss(1.1, 0.9), gauss(0.6, 0.2, "a", (0.2, 0.1, -0.1)), gauss(2.4, 0.4, "b", (0.0, 0.0, 0.15))]
    g = gsys(terms, "fine")
    exact = 2 * 0.9 * (math.pi / 1.1) ** 1.5 + 0.2 * (math.pi / 0.6) ** 1.5 + 0.4 * (math.pi / 2.4) ** 1.5
    assert gaussian_norm(terms) == pytest.approx(exact, rel=1e-15)
    assert abs(g.electron_count - exact) / exact < 1e-8


def test_generated_tau_respects_weizsacker_bound(polarized_grid):
    assert np.all(polarized_grid.tau >= polarized_grid.tau_weizsacker() - 1e-14)


def test_resolution_sizes():
    assert len(gsys([gauss()], "coarse")) == 48 * 26
    assert len(gsys([gauss()], "fine")) == 96 * 86


@pytest.mark.parametrize("lam", [0.5, 2.0, 5.0])
def test_scaling_preserves_electron_count(polarized_grid, lam):
    n0 = polarized_grid.electron_count
    assert abs(scale_grid(polarized_grid, lam).electron_count - n0) / n0 < 1e-12


def test_scale_identity_and_domain(polarized_grid):
    g = scale_grid(polarized_grid, 1.0)
    for name in ("coords", "weights", "rho", "grad", "tau"):
        assert np.array_equal(getattr(g, name), getattr(polarized_grid, name))
    for bad in (0.0, -1.0, float("nan")):
        with pytest.raises(ValueError):
            scale_grid(polarized_grid, bad)


def test_swap_spin_involution_and_zeta(polarized_grid):
    once = swap_spin(polarized_grid)
    assert np.array_equal(once.zeta, -polarized_grid.zeta)
    twice = swap_spin(once)
    for name in ("rho", "grad", "tau", "weights", "coords"):
        assert np.array_equal(getattr(twice, name), getattr(polarized_grid, name))


def test_swap_unpolarized_is_identity():
    g = gsys([gauss()])
    s = swap_spin(g)
    assert np.array_equal(s.rho, g.rho) and np.array_equal(s.tau, g.tau)


def test_integrate_errors(polarized_grid):
    with pytest.raises(ValueError):
        integrate(polarized_grid, np.ones(3))
    f = np.ones(len(polarized_grid))
    f[5] = np.inf
    with pytest.raises(ValueError, match="point 5"):
        integrate(polarized_grid, f)


def test_round_trip(tmp_path, polarized_grid):
    p = tmp_path / "g.grid"
    save_grid(polarized_grid, p)
    back = load_grid(p)
    for name in ("coords", "weights", "rho", "grad", "tau"):
        assert np.array_equal(getattr(back, name), getattr(polarized_grid, name))
    assert back.label == polarized_grid.label and back.resolution == polarized_grid.resolution


def _row(w=1.0, rho=(0.1, 0.1), tau=(0.5, 0.5), grad=(0.0, 0.0)):
    return " ".join(str(v) for v in (0, 0, 0, w, rho[0], rho[1], grad[0], 0, 0, grad[1], 0, 0, tau[0], tau[1]))


def test_negative_weight_is_parse_error(tmp_path):
    p = tmp_path / "bad.grid"
    p.write_text("XCGRID 1 2 bad\n" + _row() + "\n" + _row(w=-0.5) + "\n")
    with pytest.raises(GridFormatError) as exc:
        load_grid(p)
    assert exc.value.lineno == 3


@pytest.mark.parametrize("text, line", [
    ("", 1), ("GRID 1 1 x\n", 1), ("XCGRID 2 1 x\n", 1), ("XCGRID 1 1 x\n1 2 3\n", 2),
    ("XCGRID 1 2 x\n" + _row() + "\n", 2),
])
def test_malformed_files(tmp_path, text, line):
    p = tmp_path / "m.grid"
    p.write_text(text)
    with pytest.raises(GridFormatError):
        load_grid(p)


def test_tau_below_weizsacker_warns(tmp_path):
    p = tmp_path / "w.grid"
    # rho = 0.1, |grad| = 1 -> tau_W = 1.25 > tau = 0.5
    p.write_text("XCGRID 1 2 w\n" + _row() + "\n" + _row(grad=(1.0, 0.0)) + "\n")
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        load_grid(p)
    msgs = [str(r.message) for r in rec if issubclass(r.category, GridWarning)]
    assert len(msgs) == 1 and "line 3" in msgs[0]


@pytest.mark.parametrize("spec, field", [
    (dict(kind="blob"), "kind"),
    (dict(kind="ueg"), "rho_per_spin"),
    (dict(kind="gaussian_sum"), "terms"),
    (dict(kind="gaussian_sum", terms=(GaussianTerm((0, 0, 0), -1.0, 1.0),)), "terms[0].exponent"),
    (dict(kind="gaussian_sum", terms=(GaussianTerm((0, 0, 0), 1.0, 1.0, "c"),)), "terms[0].spin"),
    (dict(kind="ueg", rho_per_spin=0.1, resolution="medium"), "resolution"),
])
def test_spec_errors_name_field(spec, field):
    with pytest.raises(GridSpecError) as exc:
        generate(SyntheticSystemSpec(**spec))
    assert exc.value.field == field


def test_spec_dict_round_trip():
    spec = SyntheticSystemSpec("gaussian_sum", "fine", terms=(gauss(), gauss(0.5, 0.1, "a", (0.1, 0, 0))),
                               blend=0.3, label="x")
    assert SyntheticSystemSpec.from_dict(spec.to_dict()) == spec


@given(st.floats(0.3, 3.0), st.floats(0.05, 2.0), st.sampled_from(["a", "b", "ab"]),
       st.floats(0.1, 10.0))
def test_property_scaling_and_bound(exponent, amplitude, spin, lam):
    g = gsys([gauss(1.0, 1.0), gauss(exponent, amplitude, spin, (0.1, 0.0, -0.2))])
    assert np.all(g.tau >= g.tau_weizsacker() - 1e-14)
    s = scale_grid(g, lam)
    assert abs(s.electron_count - g.electron_count) / g.electron_count < 1e-12
