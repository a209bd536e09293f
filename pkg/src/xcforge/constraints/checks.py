"""The four physical-constraint checks and the aggregated report."""

from __future__ import annotations

import json
import weakref
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ..descriptors import descriptors_for
from ..griddata import DensityGrid, scale_grid, swap_spin
from ..xcforms.energy import EnergyModel, GridBatch, energy_density, enhancement_factors, prepare, xc_energy
from ..xcforms.lda import lda_x_slater_pol

HARTREE_TO_KCAL = 627.509474

SPIN_TOL = 1e-5  # Hartree
UEG_TOL = 0.005  # relative
SCALING_TOL = 1e-4  # Hartree
GRID_TOL = 0.015  # kcal/mol
SCALING_LAMBDAS = (0.5, 2.0, 5.0)
CHECK_NAMES = ("spin_symmetry", "ueg_limit", "scaling", "grid_convergence")


class ProtocolError(ValueError):
    """Inputs do not satisfy a check's preconditions."""


@dataclass(frozen=True)
class CheckResult:
    metric: float
    threshold: float
    passed: bool
    details: Mapping[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"metric": self.metric, "threshold": self.threshold, "pass": self.passed,
                "details": dict(self.details)}

    @classmethod
    def from_dict(cls, d: dict) -> "CheckResult":
        return cls(float(d["metric"]), float(d["threshold"]), bool(d["pass"]), dict(d.get("details", {})))


@dataclass(frozen=True)
class ConstraintReport:
    spin_symmetry: CheckResult
    ueg_limit: CheckResult
    scaling: CheckResult
    grid_convergence: CheckResult

    @property
    def n_violations(self) -> int:
        return sum(not getattr(self, k).passed for k in CHECK_NAMES)

    def failed(self) -> list[str]:
        return [k for k in CHECK_NAMES if not getattr(self, k).passed]

    def to_dict(self) -> dict:
        d = {k: getattr(self, k).to_dict() for k in CHECK_NAMES}
        d["n_violations"] = self.n_violations
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "ConstraintReport":
        rep = cls(*(CheckResult.from_dict(d[k]) for k in CHECK_NAMES))
        if "n_violations" in d and int(d["n_violations"]) != rep.n_violations:
            raise ValueError("n_violations disagrees with the pass flags")
        return rep

    @classmethod
    def from_json(cls, text: str) -> "ConstraintReport":
        return cls.from_dict(json.loads(text))


def _result(metric: float, tol: float, details=None) -> CheckResult:
    metric = float(metric)
    return CheckResult(metric, tol, bool(metric < tol), details or {})


def check_spin_symmetry(model: EnergyModel, grid: DensityGrid, tol: float = SPIN_TOL,
                        min_polarization: float = 0.1) -> CheckResult:
    """Max pointwise |e_xc(rho_a, rho_b) - e_xc(rho_b, rho_a)|."""
    zmax = float(np.max(np.abs(grid.zeta)))
    if zmax <= min_polarization:
        raise ProtocolError(f"grid {grid.label!r} is not polarized enough (max|zeta| = {zmax:.3g})")
    e = energy_density(model, grid)
    e_sw = energy_density(model, swap_spin(grid))
    dev = float(np.max(np.abs(e - e_sw)))
    return _result(dev, tol, {"max_abs_zeta": zmax})


def _is_ueg(grid: DensityGrid, model: EnergyModel) -> bool:
    d = descriptors_for(grid, model.constants)
    k_c = model.constants.k_c
    return bool(np.all(d.s == 0.0) and np.allclose(d.t, k_c, rtol=1e-12, atol=0.0)
                and np.ptp(grid.rho[0]) == 0.0 and np.ptp(grid.rho[1]) == 0.0)


def extract_gx(model: EnergyModel, grid: DensityGrid) -> np.ndarray:
    """g_x recovered as attenuated exchange density over f_SR * e_x^LDA, per spin."""
    prep = prepare(grid, model.constants)
    gx, _, _ = enhancement_factors(model, grid)
    ex_sr = prep.ref_x * gx
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(prep.ref_x != 0, ex_sr / prep.ref_x, np.nan)


def check_ueg_limit(model: EnergyModel, grids: Sequence[DensityGrid], tol: float = UEG_TOL) -> CheckResult:
    """Max relative |g_x - c_x0| / c_x0 over the UEG densities."""
    if not grids:
        raise ProtocolError("no UEG grids supplied")
    c_x0 = model.constants.c_x0
    details = {}
    worst = 0.0
    for g in grids:
        if not _is_ueg(g, model):
            raise ProtocolError(f"grid {g.label!r} is not a uniform electron gas")
        gx = extract_gx(model, g)
        dev = float(np.nanmax(np.abs(gx - c_x0))) / c_x0
        rs = float((3.0 / (4.0 * np.pi * g.rho_total[0])) ** (1.0 / 3.0))
        details[f"rs={rs:.6g}"] = dev
        worst = max(worst, dev)
    return _result(worst, tol, details)


def scaling_deviation(model: EnergyModel, grid: DensityGrid, lam: float) -> float:
    """Sum_i w_i |e_x^LDA| |g_x(scaled) - g_x(base)| on the base grid, matched points."""
    floor = model.constants.density_floor
    gx0, _, _ = enhancement_factors(model, grid)
    if lam == 1.0:
        return 0.0
    gx1, _, _ = enhancement_factors(model, scale_grid(grid, lam))
    weight = np.abs(lda_x_slater_pol(np.where(grid.rho < floor, 0.0, grid.rho)))
    return float(np.sum(grid.weights[None, :] * weight * np.abs(gx1 - gx0)))


def check_scaling(model: EnergyModel, grid: DensityGrid, lambdas: Sequence[float] = SCALING_LAMBDAS,
                  tol: float = SCALING_TOL) -> CheckResult:
    details = {f"lambda={lam:g}": scaling_deviation(model, grid, float(lam)) for lam in lambdas}
    return _result(max(details.values(), default=0.0), tol, details)


@dataclass(frozen=True, eq=False)
class ProxyPair:
    """A composite system and its fragments, each at both resolutions."""

    name: str
    composite: Mapping[str, DensityGrid]
    fragments: Mapping[str, Sequence[DensityGrid]]

    def atomization(self, model: EnergyModel, resolution: str) -> float:
        """Sum of fragment energies minus composite energy, Hartree."""
        if resolution not in self.composite or resolution not in self.fragments:
            raise ProtocolError(f"proxy {self.name!r} lacks the {resolution!r} resolution")
        frags = sum(xc_energy(model, g) for g in self.fragments[resolution])
        return frags - xc_energy(model, self.composite[resolution])


_PROXY_BATCHES: "weakref.WeakKeyDictionary[ProxyPair, dict]" = weakref.WeakKeyDictionary()


def _proxy_batch(model: EnergyModel, pairs: Sequence[ProxyPair], resolution: str) -> GridBatch:
    """One batch per (pair set, resolution); each pair contributes composite then fragments."""
    grids = []
    for p in pairs:
        if resolution not in p.composite or resolution not in p.fragments:
            raise ProtocolError(f"proxy {p.name!r} lacks the {resolution!r} resolution")
        grids.append(p.composite[resolution])
        grids.extend(p.fragments[resolution])
    # the batch pins its grids, so their ids stay unique while the entry lives
    key = (tuple(id(g) for g in grids), model.constants)
    per = _PROXY_BATCHES.setdefault(pairs[0], {})
    if key not in per:
        per[key] = GridBatch(grids, model.constants)
    return per[key]


def atomization_energies(model: EnergyModel, pairs: Sequence[ProxyPair], resolution: str) -> np.ndarray:
    """Per-pair fragment-sum minus composite energies, Hartree (batched ``ProxyPair.atomization``)."""
    e = _proxy_batch(model, pairs, resolution).energies(model)
    out, k = [], 0
    for p in pairs:
        nf = len(p.fragments[resolution])
        out.append(e[k + 1:k + 1 + nf].sum() - e[k])
        k += 1 + nf
    return np.array(out)


def check_grid_convergence(model: EnergyModel, pairs: Sequence[ProxyPair], tol: float = GRID_TOL,
                           resolutions: tuple[str, str] = ("coarse", "fine")) -> CheckResult:
    """Max |AE(coarse) - AE(fine)| over the proxy set, kcal/mol."""
    if not pairs:
        raise ProtocolError("no proxy systems supplied")
    pairs = tuple(pairs)
    lo, hi = resolutions
    diff = np.abs(atomization_energies(model, pairs, lo) - atomization_energies(model, pairs, hi)) * HARTREE_TO_KCAL
    details = {p.name: float(d) for p, d in zip(pairs, diff)}
    return _result(max(details.values()), tol, details)


def run_all(model: EnergyModel, bundle) -> ConstraintReport:
    """All four checks on a fixture bundle (see :mod:`.fixtures`)."""
    return ConstraintReport(
        check_spin_symmetry(model, bundle.polarized),
        check_ueg_limit(model, bundle.ueg),
        check_scaling(model, bundle.scaling_base),
        check_grid_convergence(model, bundle.proxies),
    )
