"""Fixture bundles for the constraint checks, and forms that violate them.

A bundle holds a spin-polarized two-centre grid, four uniform-gas grids, a
three-centre base grid for the scaling check and 18 composite/fragment proxy
pairs at two resolutions.  On disk it is a directory of grid files plus
``bundle.json``; fragment grids are regenerated from their stored specs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..descriptors import GRID_FEATURES, register_grid_feature
from ..griddata import (RESOLUTIONS, DensityGrid, SyntheticSystemSpec, generate,
                        load_grid, save_grid)
from ..xcforms.expr import add, const, desc, mul, sigmoid, tanh
from ..xcforms.forms import WB97MV_COS, WB97MV_CSS, WB97MV_X, FunctionalForm, ParamBook, poly
from ..xcforms.lda import fermi_kf
from .checks import ProxyPair

MANIFEST = "bundle.json"
UEG_RS = (0.5, 1.0, 2.0, 4.0)
LAPL_EPS = 1e-10


class BundleError(ValueError):
    """Bundle directory is incomplete or malformed."""


# -- grid-dependent Laplacian feature ------------------------------------------

def lapl_norm(grid: DensityGrid, d) -> np.ndarray:
    """Finite-difference Laplacian along the point index, over k_F^2 rho.

    Differencing neighbouring *points* rather than positions makes this a
    property of the quadrature layout, not of the density: it changes with
    resolution and with coordinate scaling.
    """
    lap = np.gradient(grid.grad, axis=1).sum(axis=2)
    rho = d.rho
    return lap / (fermi_kf(rho) ** 2 * rho + LAPL_EPS)


if "lapl_norm" not in GRID_FEATURES:
    register_grid_feature("lapl_norm", lapl_norm)


# -- bundle definition -----------------------------------------------------------

def ueg_density_per_spin(rs: float) -> float:
    return 0.5 * 3.0 / (4.0 * math.pi * rs**3)


def _proxy_fragments(k: int) -> list[dict]:
    """Two concentric atom-like fragments for proxy pair ``k``.

    Each has a closed-shell core and one unpaired valence shell; the spins of
    the unpaired shells are opposite, so the composite is less polarized than
    its parts and every channel contributes to the atomization energy.
    """
    rng = np.random.default_rng(1000 + k)
    frags = []
    for name, spin in (("A", "a"), ("B", "b")):
        core_exp, val_exp = rng.uniform(1.5, 3.0), rng.uniform(0.35, 0.8)
        core_amp, val_amp = rng.uniform(1.0, 4.0), rng.uniform(0.05, 0.25)
        frags.append({"kind": "gaussian_sum", "label": f"proxy{k:02d}_frag{name}", "terms": [
            {"center": [0.0, 0.0, 0.0], "exponent": round(core_exp, 6), "amplitude": round(core_amp, 6), "spin": "ab"},
            {"center": [0.0, 0.0, 0.0], "exponent": round(val_exp, 6), "amplitude": round(val_amp, 6), "spin": spin},
        ]})
    return frags


def default_bundle_spec(n_proxies: int = 18) -> dict:
    """Plain-data description of the default fixture bundle."""
    o2 = [{"center": [0, 0, z], "exponent": 0.9, "amplitude": 0.6, "spin": "ab"} for z in (-1.14, 1.14)]
    o2 += [{"center": [0, 0, z], "exponent": 0.5, "amplitude": 0.12, "spin": "a"} for z in (-1.14, 1.14)]
    h2o = [{"center": [0, 0, 0], "exponent": 1.6, "amplitude": 1.1, "spin": "ab"},
           {"center": [1.43, 1.1, 0], "exponent": 1.0, "amplitude": 0.25, "spin": "ab"},
           {"center": [-1.43, 1.1, 0], "exponent": 1.0, "amplitude": 0.25, "spin": "ab"}]
    return {
        "polarized": {"kind": "gaussian_sum", "label": "o2_triplet_proxy", "terms": o2},
        "ueg": [{"kind": "ueg", "label": f"ueg_rs{rs:g}", "rho_per_spin": ueg_density_per_spin(rs)}
                for rs in UEG_RS],
        "scaling_base": {"kind": "gaussian_sum", "label": "h2o_proxy", "terms": h2o},
        "proxies": [{"name": f"proxy{k:02d}", "fragments": _proxy_fragments(k)} for k in range(n_proxies)],
    }


def composite_spec(fragments: Sequence[dict], name: str) -> dict:
    terms = [t for f in fragments for t in f["terms"]]
    return {"kind": "gaussian_sum", "label": name, "terms": terms}


def _spec(d: dict, resolution: str) -> SyntheticSystemSpec:
    d = dict(d)
    d["resolution"] = resolution
    return SyntheticSystemSpec.from_dict(d)


@dataclass(frozen=True, eq=False)
class FixtureBundle:
    polarized: DensityGrid
    ueg: tuple[DensityGrid, ...]
    scaling_base: DensityGrid
    proxies: tuple[ProxyPair, ...]
    spec: dict = field(default_factory=dict)


def build_bundle(spec: dict | None = None, resolution: str = "coarse") -> FixtureBundle:
    """Generate every grid of a bundle in memory."""
    spec = default_bundle_spec() if spec is None else spec
    try:
        pol = generate(_spec(spec["polarized"], resolution))
        ueg = tuple(generate(_spec(u, resolution)) for u in spec["ueg"])
        base = generate(_spec(spec["scaling_base"], resolution))
        proxies = []
        for p in spec["proxies"]:
            comp = {r: generate(_spec(composite_spec(p["fragments"], p["name"]), r)) for r in RESOLUTIONS}
            frags = {r: tuple(generate(_spec(f, r)) for f in p["fragments"]) for r in RESOLUTIONS}
            proxies.append(ProxyPair(p["name"], comp, frags))
    except (KeyError, TypeError) as exc:
        raise BundleError(f"malformed bundle spec: missing or bad field {exc}") from None
    return FixtureBundle(pol, ueg, base, tuple(proxies), spec)


def save_bundle(bundle: FixtureBundle, out_dir) -> list[Path]:
    """Write grid files and the manifest; returns the grid file paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def put(grid: DensityGrid, name: str) -> str:
        path = out / name
        save_grid(grid, path)
        written.append(path)
        return name

    manifest = {
        "format": 1,
        "polarized": put(bundle.polarized, "polarized.grid"),
        "ueg": [put(g, f"ueg_{i}.grid") for i, g in enumerate(bundle.ueg)],
        "scaling_base": put(bundle.scaling_base, "scaling_base.grid"),
        "proxies": [],
    }
    spec_proxies = {p["name"]: p for p in bundle.spec.get("proxies", [])}
    for p in bundle.proxies:
        if p.name not in spec_proxies:
            raise BundleError(f"proxy {p.name!r} has no fragment spec to store")
        manifest["proxies"].append({
            "name": p.name,
            "composite": {r: put(p.composite[r], f"{p.name}_{r}.grid") for r in RESOLUTIONS},
            "fragments": spec_proxies[p.name]["fragments"],
        })
    (out / MANIFEST).write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return written


def load_bundle(bundle_dir) -> FixtureBundle:
    root = Path(bundle_dir)
    mpath = root / MANIFEST
    try:
        manifest = json.loads(mpath.read_text())
    except FileNotFoundError:
        raise BundleError(f"{mpath}: manifest not found") from None
    except json.JSONDecodeError as exc:
        raise BundleError(f"{mpath}: {exc}") from None

    def get(name: str) -> DensityGrid:
        path = root / name
        if not path.is_file():
            raise BundleError(f"{path}: bundle member missing")
        return load_grid(path)

    try:
        proxies = []
        for p in manifest["proxies"]:
            comp = {r: get(p["composite"][r]) for r in RESOLUTIONS}
            frags = {r: tuple(generate(_spec(f, r)) for f in p["fragments"]) for r in RESOLUTIONS}
            proxies.append(ProxyPair(p["name"], comp, frags))
        spec = {"proxies": [{"name": p["name"], "fragments": p["fragments"]} for p in manifest["proxies"]]}
        return FixtureBundle(get(manifest["polarized"]), tuple(get(u) for u in manifest["ueg"]),
                             get(manifest["scaling_base"]), tuple(proxies), spec)
    except (KeyError, TypeError) as exc:
        raise BundleError(f"{mpath}: missing or bad field {exc}") from None


# -- forms that violate the constraints -----------------------------------------

ANTISYM_ZETA_COEF = -0.174
UEG_BIAS = 0.0167  # relative exchange shift at the uniform gas
SWITCH_SLOPE = 10.0
SWITCH_CENTER = 0.5


def _baseline_channels(book: ParamBook, c_x0: float = 0.85):
    gx = add(const(c_x0), poly(book, "x", WB97MV_X))
    gss = poly(book, "ss", WB97MV_CSS)
    gos = poly(book, "os", WB97MV_COS, trainable=lambda pw: pw != (0, 0))
    return gx, gss, gos


_TEMPLATES = {"x": tuple(WB97MV_X), "ss": tuple(WB97MV_CSS), "os": tuple(WB97MV_COS)}


def _zeta_term(book: ParamBook, coef: float = ANTISYM_ZETA_COEF):
    return mul(book.new("os_fix.alpha_cos", coef, False), desc("zeta"))


def _rs_switch_term(book: ParamBook, p=(0.8, 0.8, 0.8)):
    switch = sigmoid(mul(const(-SWITCH_SLOPE), add(desc("rs_total"), const(-SWITCH_CENTER))))
    w, u = desc("w"), desc("u")
    corr = add(mul(book.new("ss_fix.p1", p[0], False), w), mul(book.new("ss_fix.p2", p[1], False), u),
               mul(book.new("ss_fix.p3", p[2], False), w, u))
    return mul(switch, corr)


_HIDDEN_W = ((0.3, -0.2, 4.0), (-0.25, 0.4, -3.0))
_HIDDEN_B = (0.5, -0.5)


def _hidden_layer(book: ParamBook, c_x0: float = 0.85, use_lapl: bool = True):
    """Two sigmoid units over (w, u, lapl_norm) whose UEG residual is UEG_BIAS * c_x0."""
    feats = (desc("w"), desc("u"), desc("lapl_norm") if use_lapl else const(0.0))
    sig0 = [1.0 / (1.0 + math.exp(-b)) for b in _HIDDEN_B]
    c_h = [0.01, 0.0]
    c_h[1] = (UEG_BIAS * c_x0 - c_h[0] * sig0[0]) / sig0[1]
    units = []
    for j, (row, b) in enumerate(zip(_HIDDEN_W, _HIDDEN_B)):
        pre = add(*(mul(book.new(f"x_fix.W{j}{i}", wij, False), f) for i, (wij, f) in enumerate(zip(row, feats))),
                  book.new(f"x_fix.b{j}", b, False))
        units.append(mul(book.new(f"x_fix.c{j}", c_h[j], False), sigmoid(pre)))
    return add(*units)


def fixture_antisymmetric_zeta() -> FunctionalForm:
    """Baseline plus an additive c*zeta in the opposite-spin factor (spin-odd)."""
    book = ParamBook()
    gx, gss, gos = _baseline_channels(book)
    return book.build(gx, gss, add(gos, _zeta_term(book)), _TEMPLATES, "fixture_antisym_zeta")


def fixture_ueg_bias() -> FunctionalForm:
    """Baseline exchange plus a sigmoid hidden layer over (w, u) only; shifts the UEG value."""
    book = ParamBook()
    gx, gss, gos = _baseline_channels(book)
    return book.build(add(gx, _hidden_layer(book, use_lapl=False)), gss, gos, _TEMPLATES, "fixture_ueg_bias")


def fixture_laplacian(coef: float = 0.05) -> FunctionalForm:
    """Baseline exchange plus c*tanh(lapl_norm); zero at the uniform gas."""
    book = ParamBook()
    gx, gss, gos = _baseline_channels(book)
    gx = add(gx, mul(book.new("x_fix.c_lapl", coef, False), tanh(desc("lapl_norm"))))
    return book.build(gx, gss, gos, _TEMPLATES, "fixture_laplacian")


def fixture_rs_switch() -> FunctionalForm:
    """Baseline same-spin plus a slope-10 r_s switch gating a (w, u) correction."""
    book = ParamBook()
    gx, gss, gos = _baseline_channels(book)
    return book.build(gx, add(gss, _rs_switch_term(book)), gos, _TEMPLATES, "fixture_rs_switch")


def fixture_composite() -> FunctionalForm:
    """All four mechanisms together: hidden layer with lapl_norm, r_s switch, c*zeta."""
    book = ParamBook()
    gx, gss, gos = _baseline_channels(book)
    return book.build(add(gx, _hidden_layer(book)), add(gss, _rs_switch_term(book)),
                      add(gos, _zeta_term(book)), _TEMPLATES, "fixture_composite")


FIXTURE_FORMS = {
    "antisym_zeta": fixture_antisymmetric_zeta,
    "ueg_bias": fixture_ueg_bias,
    "laplacian": fixture_laplacian,
    "rs_switch": fixture_rs_switch,
    "composite": fixture_composite,
}
