"""Dimensionless meta-GGA descriptors and spin quantities.

Every function is vectorised over numpy arrays.  :func:`compute_descriptors`
evaluates the full set on a grid, and :func:`channel_view` exposes the
names an enhancement-factor expression may reference, bound per channel:

* ``"x"``  exchange, per spin channel (both spins stacked, length 2n)
* ``"ss"`` same-spin correlation, per spin channel (stacked, length 2n)
* ``"os"`` opposite-spin correlation, spin-averaged (length n)
"""

from __future__ import annotations

import math
import weakref
from collections.abc import Mapping
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .griddata import DensityGrid

DENSITY_FLOOR = 1e-12
EPSILON = 1e-10
_FZ_NORM = 2.0 ** (4.0 / 3.0) - 2.0
# largest double below 1: keeps x/(1+x) in [0, 1) once x/(1+x) rounds up to 1
_BELOW_ONE = float(np.nextafter(1.0, 0.0))


@dataclass(frozen=True)
class DescriptorConstants:
    """Fixed constants of the wB97M-V family (defaults)."""

    k_c: float = 0.3 * (6.0 * math.pi**2) ** (2.0 / 3.0)
    gamma_x: float = 0.004
    gamma_css: float = 0.2
    gamma_cos: float = 0.006
    epsilon: float = EPSILON
    omega: float = 0.3
    a_hf: float = 0.15
    density_floor: float = DENSITY_FLOOR

    def __post_init__(self):
        for name in ("k_c", "gamma_x", "gamma_css", "gamma_cos", "epsilon", "omega", "a_hf", "density_floor"):
            val = getattr(self, name)
            if not (math.isfinite(val) and val > 0):
                raise ValueError(f"{name} must be a positive finite number, got {val!r}")
        if abs(self.k_c - 0.3 * (6.0 * math.pi**2) ** (2.0 / 3.0)) > 1e-12:
            raise ValueError("k_c must equal (3/10)(6 pi^2)^(2/3)")

    @property
    def c_x0(self) -> float:
        return 1.0 - self.a_hf

    def replace(self, **kw) -> "DescriptorConstants":
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d.update(kw)
        return DescriptorConstants(**d)


DEFAULT_CONSTANTS = DescriptorConstants()


def compute_s(rho_sigma, grad_norm_sigma):
    return np.asarray(grad_norm_sigma, dtype=float) / np.asarray(rho_sigma, dtype=float) ** (4.0 / 3.0)


def compute_t(rho_sigma, tau_sigma):
    return np.asarray(tau_sigma, dtype=float) / np.asarray(rho_sigma, dtype=float) ** (5.0 / 3.0)


def compute_w(t, k_c=DEFAULT_CONSTANTS.k_c):
    t = np.asarray(t, dtype=float)
    return (k_c - t) / (k_c + t)


def compute_u(s, gamma):
    gs2 = gamma * np.asarray(s, dtype=float) ** 2
    return np.minimum(gs2 / (1.0 + gs2), _BELOW_ONE)


def compute_v_st(s, t, epsilon=EPSILON):
    st = np.asarray(s, dtype=float) * np.asarray(t, dtype=float)
    return np.minimum(st / (1.0 + st + epsilon), _BELOW_ONE)


def spin_fz(zeta):
    """Von Barth-Hedin spin interpolation, even in zeta, f(0)=0, f(+-1)=1."""
    z = np.asarray(zeta, dtype=float)
    if np.any(np.abs(z) > 1.0 + 1e-14) or np.any(~np.isfinite(z)):
        raise ValueError("zeta must lie in [-1, 1]")
    z = np.clip(z, -1.0, 1.0)
    return ((1.0 + z) ** (4.0 / 3.0) + (1.0 - z) ** (4.0 / 3.0) - 2.0) / _FZ_NORM


def compute_z_x(fz, s, t, epsilon=EPSILON):
    """Spin-cross descriptors z = f st/(1 + f st + eps), x = z st/(1 + z st + eps)."""
    st = np.asarray(s, dtype=float) * np.asarray(t, dtype=float)
    fst = np.asarray(fz, dtype=float) * st
    z = np.minimum(fst / (1.0 + fst + epsilon), _BELOW_ONE)
    zst = z * st
    x = np.minimum(zst / (1.0 + zst + epsilon), _BELOW_ONE)
    return z, x


def compute_alpha_v(rho_sigma, grad_sigma, tau_sigma, k_c=DEFAULT_CONSTANTS.k_c):
    """Iso-orbital indicator alpha and its bounded map clip(1/(1+alpha^2), 0.01, 1).

    ``grad_sigma`` may be a gradient-norm array or vectors along the last axis.
    """
    rho = np.asarray(rho_sigma, dtype=float)
    g = np.asarray(grad_sigma, dtype=float)
    g2 = np.sum(g**2, axis=-1) if g.ndim == rho.ndim + 1 else g**2
    tau_w = g2 / (8.0 * rho)
    alpha = (np.asarray(tau_sigma, dtype=float) - tau_w) / (k_c * rho ** (5.0 / 3.0))
    v = np.clip(1.0 / (1.0 + alpha**2), 0.01, 1.0)
    return alpha, v


def compute_spin_averages(s, t, v, rho_total, constants: DescriptorConstants = DEFAULT_CONSTANTS):
    """Spin-averaged descriptors from per-spin arrays of shape (2, ...)."""
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    v = np.asarray(v, dtype=float)
    s_avg = np.sqrt(0.5 * (s[0] ** 2 + s[1] ** 2))
    t_avg = 2.0 * t[0] * t[1] / (t[0] + t[1] + constants.epsilon)
    w_avg = compute_w(t_avg, constants.k_c)
    u_avg = compute_u(s_avg, constants.gamma_cos)
    v_avg = 0.5 * (v[0] + v[1])
    rs_avg = (3.0 / (4.0 * math.pi * np.asarray(rho_total, dtype=float))) ** (1.0 / 3.0)
    return s_avg, t_avg, w_avg, u_avg, v_avg, rs_avg


def compute_zeta_rs(rho_a, rho_b):
    """Return (zeta, r_s, (zeta_alpha, zeta_beta))."""
    ra = np.asarray(rho_a, dtype=float)
    rb = np.asarray(rho_b, dtype=float)
    tot = ra + rb
    zeta = (ra - rb) / tot
    rs = (3.0 / (4.0 * math.pi * tot)) ** (1.0 / 3.0)
    return zeta, rs, (zeta * (1.0 - zeta), -zeta * (1.0 + zeta))


@dataclass(frozen=True, eq=False)
class Descriptors:
    """All descriptors on a grid; per-spin arrays have shape (2, n)."""

    rho: np.ndarray  # floored per-spin density
    floored: np.ndarray
    s: np.ndarray
    t: np.ndarray
    w: np.ndarray
    u_x: np.ndarray
    u_ss: np.ndarray
    v_st: np.ndarray
    alpha: np.ndarray
    v_alpha: np.ndarray
    rs_spin: np.ndarray
    z_ss: np.ndarray
    x_ss: np.ndarray
    zeta_spin: np.ndarray
    zeta: np.ndarray
    fz: np.ndarray
    rs: np.ndarray
    s_avg: np.ndarray
    t_avg: np.ndarray
    w_avg: np.ndarray
    u_avg: np.ndarray
    v_avg: np.ndarray
    v_st_avg: np.ndarray
    z_os: np.ndarray
    x_os: np.ndarray

    @property
    def npoints(self) -> int:
        return self.zeta.shape[0]

    def point(self, i: int) -> dict[str, float]:
        """Scalar descriptor record at one point (per-spin fields suffixed _a/_b)."""
        out = {}
        for name in self.__dataclass_fields__:
            arr = getattr(self, name)
            if arr.ndim == 2:
                out[f"{name}_a"] = float(arr[0, i])
                out[f"{name}_b"] = float(arr[1, i])
            else:
                out[name] = float(arr[i])
        return out


def compute_descriptors(grid: DensityGrid, constants: DescriptorConstants = DEFAULT_CONSTANTS) -> Descriptors:
    c = constants
    floored = grid.rho < c.density_floor
    rho = np.maximum(grid.rho, c.density_floor)
    gnorm = np.where(floored, 0.0, grid.grad_norm)
    tau = np.where(floored, 0.0, grid.tau)

    s = compute_s(rho, gnorm)
    t = compute_t(rho, tau)
    w = compute_w(t, c.k_c)
    u_x = compute_u(s, c.gamma_x)
    u_ss = compute_u(s, c.gamma_css)
    v_st = compute_v_st(s, t, c.epsilon)
    alpha, v_alpha = compute_alpha_v(rho, gnorm, tau, c.k_c)
    rs_spin = (3.0 / (4.0 * math.pi * rho)) ** (1.0 / 3.0)

    rho_raw = np.where(floored, 0.0, grid.rho)
    tot = rho_raw[0] + rho_raw[1]
    tot_floor = np.maximum(tot, c.density_floor)
    zeta = np.where(tot > 0, (rho_raw[0] - rho_raw[1]) / tot_floor, 0.0)
    zeta = np.clip(zeta, -1.0, 1.0)
    fz = spin_fz(zeta)
    rs = (3.0 / (4.0 * math.pi * tot_floor)) ** (1.0 / 3.0)
    zeta_spin = np.stack([zeta * (1.0 - zeta), -zeta * (1.0 + zeta)])

    z_ss, x_ss = compute_z_x(fz[None, :], s, t, c.epsilon)
    s_avg, t_avg, w_avg, u_avg, v_avg, _ = compute_spin_averages(s, t, v_alpha, tot_floor, c)
    v_st_avg = compute_v_st(s_avg, t_avg, c.epsilon)
    z_os, x_os = compute_z_x(fz, s_avg, t_avg, c.epsilon)

    return Descriptors(
        rho=rho, floored=floored, s=s, t=t, w=w, u_x=u_x, u_ss=u_ss, v_st=v_st,
        alpha=alpha, v_alpha=v_alpha, rs_spin=rs_spin, z_ss=z_ss, x_ss=x_ss,
        zeta_spin=zeta_spin, zeta=zeta, fz=fz, rs=rs, s_avg=s_avg, t_avg=t_avg,
        w_avg=w_avg, u_avg=u_avg, v_avg=v_avg, v_st_avg=v_st_avg, z_os=z_os, x_os=x_os,
    )


# -- channel views -------------------------------------------------------------

CHANNELS = ("x", "ss", "os")

_STACKED_X = {"s": "s", "t": "t", "w": "w", "u": "u_x", "v_st": "v_st", "alpha": "alpha",
              "v_alpha": "v_alpha", "rs": "rs_spin"}
_STACKED_SS = {"s": "s", "t": "t", "w": "w", "u": "u_ss", "v_st": "v_st", "z": "z_ss", "x": "x_ss",
               "alpha": "alpha", "v_alpha": "v_alpha", "rs": "rs_spin", "zeta_spin": "zeta_spin"}
_SHARED_SS = {"fz": "fz", "rs_total": "rs", "zeta": "zeta"}
_OS = {"s": "s_avg", "t": "t_avg", "w": "w_avg", "u": "u_avg", "v_st": "v_st_avg", "z": "z_os",
       "x": "x_os", "v_alpha": "v_avg", "rs": "rs", "rs_total": "rs", "fz": "fz", "zeta": "zeta"}

# Grid-dependent features (not pointwise density functionals) used only by
# diagnostic fixtures.  Each returns a (2, n) per-spin array.
GRID_FEATURES: dict[str, Callable[[DensityGrid, Descriptors], np.ndarray]] = {}


def register_grid_feature(name: str, fn: Callable[[DensityGrid, Descriptors], np.ndarray]) -> None:
    if name in descriptor_names():
        raise ValueError(f"{name!r} clashes with a built-in descriptor")
    GRID_FEATURES[name] = fn


def descriptor_names(channel: str | None = None) -> frozenset[str]:
    per = {
        "x": set(_STACKED_X) | {"rs_total"},
        "ss": set(_STACKED_SS) | set(_SHARED_SS),
        "os": set(_OS) | {"abs_zeta"},
    }
    if channel is None:
        return frozenset().union(*per.values())
    return frozenset(per[channel])


class ChannelView(Mapping):
    """Name -> array mapping for one channel; grid features are computed lazily."""

    def __init__(self, channel: str, base: dict[str, np.ndarray], grid: DensityGrid, desc: Descriptors):
        self.channel = channel
        self._base = base
        self._grid = grid
        self._desc = desc

    def __getitem__(self, name):
        if name in self._base:
            return self._base[name]
        if name in GRID_FEATURES:
            feat = np.asarray(GRID_FEATURES[name](self._grid, self._desc), dtype=float)
            if self.channel == "os":
                feat = 0.5 * (feat[0] + feat[1])
            else:
                feat = feat.reshape(-1)
            self._base[name] = feat
            return feat
        raise KeyError(f"descriptor {name!r} is not available in channel {self.channel!r}")

    def __iter__(self):
        return iter(self._base)

    def __len__(self):
        return len(self._base)

    def __contains__(self, name):
        return name in self._base or name in GRID_FEATURES


def channel_view(grid: DensityGrid, desc: Descriptors, channel: str) -> ChannelView:
    if channel == "x":
        base = {k: getattr(desc, v).reshape(-1) for k, v in _STACKED_X.items()}
        base["rs_total"] = np.tile(desc.rs, 2)
    elif channel == "ss":
        base = {k: getattr(desc, v).reshape(-1) for k, v in _STACKED_SS.items()}
        base.update({k: np.tile(getattr(desc, v), 2) for k, v in _SHARED_SS.items()})
    elif channel == "os":
        base = {k: getattr(desc, v) for k, v in _OS.items()}
        base["abs_zeta"] = np.abs(desc.zeta)
    else:
        raise ValueError(f"unknown channel {channel!r}")
    return ChannelView(channel, base, grid, desc)


_CACHE: "weakref.WeakKeyDictionary[DensityGrid, dict]" = weakref.WeakKeyDictionary()


def descriptors_for(grid: DensityGrid, constants: DescriptorConstants = DEFAULT_CONSTANTS) -> Descriptors:
    """Cached :func:`compute_descriptors` (grids are immutable)."""
    per = _CACHE.setdefault(grid, {})
    key = ("desc", constants)
    if key not in per:
        per[key] = compute_descriptors(grid, constants)
    return per[key]
