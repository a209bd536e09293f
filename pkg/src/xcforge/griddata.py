"""Quadrature grids carrying spin-resolved density data.

All systems are analytic: a uniform electron gas ball, or sums of isotropic
Gaussians placed on a single-centre radial x Lebedev grid.  Arrays are stored
spin-major, ``rho[sigma, i]``, ``grad[sigma, i, :]``, ``tau[sigma, i]``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.integrate import lebedev_rule

K_C = 0.3 * (6.0 * math.pi**2) ** (2.0 / 3.0)

RESOLUTIONS = ("coarse", "fine")
# (radial points, Lebedev order) -> 32 x 26 and 96 x 74 points.
_RESOLUTION_TABLE = {"coarse": (48, 7), "fine": (96, 15)}  # (radial, Lebedev order): 26 and 86 directions

SPIN_CHANNELS = ("a", "b", "ab")


class GridSpecError(ValueError):
    """Invalid synthetic system description."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class GridFormatError(ValueError):
    """Malformed grid file."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class GridWarning(UserWarning):
    pass


def _readonly(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class DensityGrid:
    """Immutable quadrature grid with spin-resolved (rho, grad rho, tau).

    Hashes by identity so that derived quantities can be cached per grid.
    """

    coords: np.ndarray  # (n, 3) Bohr
    weights: np.ndarray  # (n,) Bohr^3
    rho: np.ndarray  # (2, n)
    grad: np.ndarray  # (2, n, 3)
    tau: np.ndarray  # (2, n)
    label: str = "grid"
    resolution: str = "coarse"

    def __post_init__(self):
        for name in ("coords", "weights", "rho", "grad", "tau"):
            object.__setattr__(self, name, _readonly(getattr(self, name)))
        n = self.weights.shape[0]
        if self.coords.shape != (n, 3):
            raise ValueError(f"coords must have shape ({n}, 3), got {self.coords.shape}")
        if self.rho.shape != (2, n) or self.tau.shape != (2, n):
            raise ValueError("rho and tau must have shape (2, npoints)")
        if self.grad.shape != (2, n, 3):
            raise ValueError("grad must have shape (2, npoints, 3)")
        if self.resolution not in RESOLUTIONS:
            raise ValueError(f"unknown resolution {self.resolution!r}")
        if not np.all(self.weights > 0):
            raise ValueError("quadrature weights must be strictly positive")
        if np.any(self.rho < 0) or np.any(self.tau < 0):
            raise ValueError("rho and tau must be non-negative")
        for name in ("coords", "rho", "grad", "tau"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} contains non-finite values")

    def __len__(self) -> int:
        return self.weights.shape[0]

    @property
    def npoints(self) -> int:
        return len(self)

    @property
    def rho_total(self) -> np.ndarray:
        return self.rho[0] + self.rho[1]

    @property
    def grad_norm(self) -> np.ndarray:
        return np.linalg.norm(self.grad, axis=-1)

    @property
    def electron_count(self) -> float:
        return float(np.dot(self.weights, self.rho_total))

    @property
    def zeta(self) -> np.ndarray:
        tot = self.rho_total
        with np.errstate(invalid="ignore", divide="ignore"):
            z = np.where(tot > 0, (self.rho[0] - self.rho[1]) / np.where(tot > 0, tot, 1.0), 0.0)
        return z

    def tau_weizsacker(self) -> np.ndarray:
        g2 = np.sum(self.grad**2, axis=-1)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.rho > 0, g2 / (8.0 * np.where(self.rho > 0, self.rho, 1.0)), 0.0)

    def replace(self, **changes) -> "DensityGrid":
        kw = dict(coords=self.coords, weights=self.weights, rho=self.rho, grad=self.grad,
                  tau=self.tau, label=self.label, resolution=self.resolution)
        kw.update(changes)
        return DensityGrid(**kw)


@dataclass(frozen=True)
class GaussianTerm:
    """One isotropic Gaussian ``amplitude * exp(-exponent |r - center|^2)``."""

    center: tuple[float, float, float]
    exponent: float
    amplitude: float
    spin: str = "ab"  # density added to alpha, beta, or both channels


@dataclass(frozen=True)
class SyntheticSystemSpec:
    kind: str  # "ueg" | "gaussian_sum"
    resolution: str = "coarse"
    rho_per_spin: float | tuple[float, float] | None = None
    terms: tuple[GaussianTerm, ...] = ()
    blend: float = 0.2
    radial_scale: float = 1.0
    ueg_radius: float = 2.0
    label: str = ""

    def validate(self) -> None:
        if self.kind not in ("ueg", "gaussian_sum"):
            raise GridSpecError("kind", f"unknown system kind {self.kind!r}")
        if self.resolution not in RESOLUTIONS:
            raise GridSpecError("resolution", f"must be one of {RESOLUTIONS}")
        if self.kind == "ueg":
            if self.rho_per_spin is None:
                raise GridSpecError("rho_per_spin", "required for a ueg system")
            vals = np.atleast_1d(np.asarray(self.rho_per_spin, dtype=float))
            if vals.size not in (1, 2) or np.any(~np.isfinite(vals)) or np.any(vals < 0) or vals.sum() <= 0:
                raise GridSpecError("rho_per_spin", "must be one or two non-negative values, not all zero")
            if not self.ueg_radius > 0:
                raise GridSpecError("ueg_radius", "must be positive")
        else:
            if not self.terms:
                raise GridSpecError("terms", "at least one Gaussian term is required")
            for k, term in enumerate(self.terms):
                if not term.exponent > 0:
                    raise GridSpecError(f"terms[{k}].exponent", "must be positive")
                if not term.amplitude > 0:
                    raise GridSpecError(f"terms[{k}].amplitude", "must be positive")
                if term.spin not in SPIN_CHANNELS:
                    raise GridSpecError(f"terms[{k}].spin", f"must be one of {SPIN_CHANNELS}")
                if len(term.center) != 3 or not all(math.isfinite(c) for c in term.center):
                    raise GridSpecError(f"terms[{k}].center", "must be three finite coordinates")
            if not 0.0 <= self.blend <= 1.0:
                raise GridSpecError("blend", "must lie in [0, 1]")
            if not self.radial_scale > 0:
                raise GridSpecError("radial_scale", "must be positive")

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "resolution": self.resolution, "label": self.label}
        if self.kind == "ueg":
            d["rho_per_spin"] = list(np.atleast_1d(np.asarray(self.rho_per_spin, dtype=float)).tolist())
            d["ueg_radius"] = self.ueg_radius
        else:
            d["terms"] = [
                {"center": list(t.center), "exponent": t.exponent, "amplitude": t.amplitude, "spin": t.spin}
                for t in self.terms
            ]
            d["blend"] = self.blend
            d["radial_scale"] = self.radial_scale
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSystemSpec":
        try:
            kind = d["kind"]
        except (KeyError, TypeError):
            raise GridSpecError("kind", "missing") from None
        kw = dict(kind=kind, resolution=d.get("resolution", "coarse"), label=d.get("label", ""))
        if kind == "ueg":
            rps = d.get("rho_per_spin")
            if isinstance(rps, list):
                rps = tuple(rps) if len(rps) == 2 else (rps[0] if rps else None)
            kw.update(rho_per_spin=rps, ueg_radius=d.get("ueg_radius", 2.0))
        else:
            terms = []
            for k, t in enumerate(d.get("terms", [])):
                try:
                    terms.append(GaussianTerm(tuple(float(c) for c in t["center"]), float(t["exponent"]),
                                              float(t["amplitude"]), t.get("spin", "ab")))
                except (KeyError, TypeError, ValueError) as exc:
                    raise GridSpecError(f"terms[{k}]", f"malformed term ({exc})") from None
            kw.update(terms=tuple(terms), blend=d.get("blend", 0.2), radial_scale=d.get("radial_scale", 1.0))
        spec = cls(**kw)
        spec.validate()
        return spec


def _angular(order: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = lebedev_rule(order)
    return x.T, w


def radial_grid(n: int, scale: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes mapped to (0, inf) by r = scale (1+x)/(1-x).

    Returned weights include the r^2 Jacobian.
    """
    x, w = np.polynomial.legendre.leggauss(n)
    r = scale * (1 + x) / (1 - x)
    dr = 2 * scale / (1 - x) ** 2
    return r, w * dr * r**2


def _ball_radial(n: int, radius: float) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(n)
    r = 0.5 * radius * (x + 1)
    return r, 0.5 * radius * w * r**2


def _product(r, wr, dirs, wa):
    coords = (r[:, None, None] * dirs[None, :, :]).reshape(-1, 3)
    weights = (wr[:, None] * wa[None, :]).reshape(-1)
    return coords, weights


def grid_points(resolution: str, radial_scale: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Radial-major product quadrature for a given resolution level."""
    nr, order = _RESOLUTION_TABLE[resolution]
    r, wr = radial_grid(nr, radial_scale)
    dirs, wa = _angular(order)
    return _product(r, wr, dirs, wa)


def tau_ueg(rho_sigma):
    return K_C * np.asarray(rho_sigma, dtype=float) ** (5.0 / 3.0)


def _gaussian_fields(spec: SyntheticSystemSpec, coords: np.ndarray):
    n = coords.shape[0]
    rho = np.zeros((2, n))
    grad = np.zeros((2, n, 3))
    tau_orb = np.zeros((2, n))
    for term in spec.terms:
        d = coords - np.asarray(term.center, dtype=float)
        r2 = np.einsum("ij,ij->i", d, d)
        g = term.amplitude * np.exp(-term.exponent * r2)
        dg = -2.0 * term.exponent * d * g[:, None]
        # |grad g|^2 / (8 g) for a single Gaussian, written without dividing by g
        tg = 0.5 * term.exponent**2 * r2 * g
        for sigma in {"a": (0,), "b": (1,), "ab": (0, 1)}[term.spin]:
            rho[sigma] += g
            grad[sigma] += dg
            tau_orb[sigma] += tg
    # Each term is one orbital density; the orbital sum bounds tau_W from above.
    tau = tau_orb + spec.blend * tau_ueg(rho)
    return rho, grad, tau


def generate(spec: SyntheticSystemSpec) -> DensityGrid:
    """Build the grid and analytic density fields for a synthetic system."""
    spec.validate()
    nr, order = _RESOLUTION_TABLE[spec.resolution]
    dirs, wa = _angular(order)
    if spec.kind == "ueg":
        r, wr = _ball_radial(nr, spec.ueg_radius)
        coords, weights = _product(r, wr, dirs, wa)
        vals = np.atleast_1d(np.asarray(spec.rho_per_spin, dtype=float))
        if vals.size == 1:
            vals = np.repeat(vals, 2)
        n = coords.shape[0]
        rho = np.repeat(vals[:, None], n, axis=1)
        grad = np.zeros((2, n, 3))
        tau = tau_ueg(rho)
        label = spec.label or f"ueg_{vals[0]:.6g}_{vals[1]:.6g}"
    else:
        r, wr = radial_grid(nr, spec.radial_scale)
        coords, weights = _product(r, wr, dirs, wa)
        rho, grad, tau = _gaussian_fields(spec, coords)
        label = spec.label or "gaussian_sum"
    return DensityGrid(coords, weights, rho, grad, tau, label=label, resolution=spec.resolution)


def gaussian_norm(terms: Iterable[GaussianTerm]) -> float:
    """Closed-form electron count of a Gaussian sum (both spin channels)."""
    total = 0.0
    for t in terms:
        nspin = 2 if t.spin == "ab" else 1
        total += nspin * t.amplitude * (math.pi / t.exponent) ** 1.5
    return total


def scale_grid(grid: DensityGrid, lam: float) -> DensityGrid:
    """Uniform coordinate scaling rho(r) -> lam^3 rho(lam r), point by point.

    Point i of the result is the image of point i of the input, so
    descriptors can be compared at matched indices.
    """
    if not (isinstance(lam, (int, float, np.floating)) and math.isfinite(lam) and lam > 0):
        raise ValueError(f"scaling factor must be positive, got {lam!r}")
    lam = float(lam)
    return grid.replace(
        coords=grid.coords / lam,
        weights=grid.weights / lam**3,
        rho=grid.rho * lam**3,
        grad=grid.grad * lam**4,
        tau=grid.tau * lam**5,
        label=grid.label if lam == 1.0 else f"{grid.label}@scale{lam:g}",
    )


def swap_spin(grid: DensityGrid) -> DensityGrid:
    return grid.replace(rho=grid.rho[::-1], grad=grid.grad[::-1], tau=grid.tau[::-1])


def integrate(grid: DensityGrid, values: Sequence[float] | np.ndarray) -> float:
    f = np.asarray(values, dtype=float)
    if f.shape != grid.weights.shape:
        raise ValueError(f"expected {len(grid)} values, got shape {f.shape}")
    if not np.all(np.isfinite(f)):
        bad = int(np.flatnonzero(~np.isfinite(f))[0])
        raise ValueError(f"non-finite integrand at point {bad}")
    return float(np.dot(grid.weights, f))


# -- file format -------------------------------------------------------------

_NFIELDS = 14


def save_grid(grid: DensityGrid, path) -> None:
    path = Path(path)
    label = grid.label.replace("\n", " ")
    lines = [f"XCGRID 1 {len(grid)} {label}", f"# resolution={grid.resolution}"]
    cols = np.column_stack([
        grid.coords, grid.weights,
        grid.rho[0], grid.rho[1],
        grid.grad[0], grid.grad[1],
        grid.tau[0], grid.tau[1],
    ])
    lines.extend(" ".join(f"{v:.17g}" for v in row) for row in cols)
    path.write_text("\n".join(lines) + "\n")


def load_grid(path) -> DensityGrid:
    path = Path(path)
    with open(path) as fh:
        text = fh.read().splitlines()
    if not text:
        raise GridFormatError(1, "empty file")
    head = text[0].split(maxsplit=3)
    if len(head) < 3 or head[0] != "XCGRID":
        raise GridFormatError(1, "expected header 'XCGRID 1 <npoints> <label>'")
    if head[1] != "1":
        raise GridFormatError(1, f"unsupported format version {head[1]!r}")
    try:
        npts = int(head[2])
    except ValueError:
        raise GridFormatError(1, f"bad point count {head[2]!r}") from None
    label = head[3] if len(head) > 3 else ""
    resolution = "coarse"
    rows = []
    below: list[tuple[int, str]] = []
    for lineno, line in enumerate(text[1:], start=2):
        s = line.strip()
        if not s:
            continue
        if s.startswith("#"):
            key, _, val = s[1:].strip().partition("=")
            if key.strip() == "resolution":
                resolution = val.strip()
            continue
        parts = s.split()
        if len(parts) != _NFIELDS:
            raise GridFormatError(lineno, f"expected {_NFIELDS} fields, got {len(parts)}")
        try:
            vals = [float(p) for p in parts]
        except ValueError:
            raise GridFormatError(lineno, "non-numeric field") from None
        if not all(math.isfinite(v) for v in vals):
            raise GridFormatError(lineno, "non-finite field")
        if vals[3] <= 0:
            raise GridFormatError(lineno, f"weight must be positive, got {vals[3]!r}")
        if vals[4] < 0 or vals[5] < 0:
            raise GridFormatError(lineno, "negative density")
        if vals[12] < 0 or vals[13] < 0:
            raise GridFormatError(lineno, "negative kinetic energy density")
        for sigma, (r_i, g0, t_i) in enumerate(((4, 6, 12), (5, 9, 13))):
            rho_s = vals[r_i]
            if rho_s > 0:
                gn = math.hypot(*vals[g0:g0 + 3])
                tw = (gn / rho_s) * gn / 8  # ordered to avoid underflow in density tails
                if vals[t_i] < tw * (1 - 1e-12) - 1e-300:
                    below.append((lineno, "ab"[sigma]))
        rows.append(vals)
    if below:
        line, ch = below[0]
        warnings.warn(f"{path.name}: tau below the von Weizsacker bound at {len(below)} point(s), "
                      f"first at line {line} in spin channel {ch}", GridWarning, stacklevel=2)
    if len(rows) != npts:
        raise GridFormatError(len(text), f"header declares {npts} points, found {len(rows)}")
    if resolution not in RESOLUTIONS:
        raise GridFormatError(2, f"unknown resolution {resolution!r}")
    a = np.array(rows, dtype=float).reshape(-1, _NFIELDS)
    return DensityGrid(
        coords=a[:, 0:3], weights=a[:, 3],
        rho=np.stack([a[:, 4], a[:, 5]]),
        grad=np.stack([a[:, 6:9], a[:, 9:12]]),
        tau=np.stack([a[:, 12], a[:, 13]]),
        label=label, resolution=resolution,
    )
