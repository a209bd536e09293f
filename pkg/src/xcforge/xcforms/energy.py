"""Semi-local XC energy: LDA references times enhancement factors, integrated on a grid."""

from __future__ import annotations

import weakref
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from ..descriptors import DescriptorConstants, channel_view, descriptors_for
from ..griddata import DensityGrid
from .expr import ExprEvalError, SubtreeMemo, evaluate, evaluate_dual
from .forms import FunctionalForm
from .lda import lda_c_pw_spin_decomposed, lda_x_slater_pol, rsh_attenuation


class EnergyEvalError(ArithmeticError):
    """Non-finite enhancement factor; names the channel, node path and grid point."""

    def __init__(self, channel: str, inner: ExprEvalError, npoints: int):
        self.channel = channel
        self.path = inner.path
        idx = inner.index
        spin = None
        if idx is not None and channel in ("gx", "gss"):
            spin, idx = divmod(idx, npoints)
        self.point = idx
        self.spin = spin
        msg = f"{channel}: {inner}"
        if idx is not None:
            msg += f" (grid point {idx}" + (f", spin {'ab'[spin]})" if spin is not None else ")")
        super().__init__(msg)


@dataclass(frozen=True, eq=False)
class Prepared:
    """Form-independent per-grid data: weighted references and descriptor views."""

    weights: np.ndarray
    ref_x: np.ndarray  # (2, n) f_SR * Slater, per spin
    ref_ss: np.ndarray  # (2, n)
    ref_os: np.ndarray  # (n,)
    views: dict


_PREP: "weakref.WeakKeyDictionary[DensityGrid, dict]" = weakref.WeakKeyDictionary()


def lda_references(grid: DensityGrid, constants: DescriptorConstants):
    """Per-point (attenuated exchange per spin, same-spin corr per spin, opposite-spin corr)."""
    floor = constants.density_floor
    rho = np.where(grid.rho < floor, 0.0, grid.rho)
    ex = lda_x_slater_pol(rho) * rsh_attenuation(rho, constants.omega, floor)
    ec_aa, ec_bb, ec_ab = lda_c_pw_spin_decomposed(rho[0], rho[1], floor)
    return ex, np.stack([ec_aa, ec_bb]), ec_ab


def prepare(grid: DensityGrid, constants: DescriptorConstants) -> Prepared:
    per = _PREP.setdefault(grid, {})
    if constants not in per:
        d = descriptors_for(grid, constants)
        ex, ess, eos = lda_references(grid, constants)
        views = {ch: channel_view(grid, d, ch) for ch in ("x", "ss", "os")}
        per[constants] = Prepared(grid.weights, ex, ess, eos, views)
    return per[constants]


@dataclass(frozen=True, eq=False)
class EnergyModel:
    form: FunctionalForm
    constants: DescriptorConstants | None = None
    offsets: Mapping[str, float] = field(default_factory=dict)  # Hartree, keyed by grid label

    def __post_init__(self):
        if self.constants is None:
            object.__setattr__(self, "constants", self.form.constants())
        for k, v in self.offsets.items():
            if not np.isfinite(v):
                raise ValueError(f"offset for {k!r} is not finite")

    def with_form(self, form: FunctionalForm) -> "EnergyModel":
        return EnergyModel(form, self.constants, self.offsets)

    def offset(self, grid: DensityGrid) -> float:
        return float(self.offsets.get(grid.label, 0.0))


def _broadcast(val, shape):
    val = np.asarray(val)
    return np.broadcast_to(val.astype(np.result_type(val, np.float64), copy=False), shape)


def enhancement_factors(model: EnergyModel, grid: DensityGrid, params=None):
    """(g_x (2,n), g_ss (2,n), g_os (n,)) at every point."""
    prep = prepare(grid, model.constants)
    form = model.form
    p = form.params if params is None else params
    n = grid.npoints
    out = []
    for tree_name, ch, shape in (("gx", "x", (2 * n,)), ("gss", "ss", (2 * n,)), ("gos", "os", (n,))):
        try:
            g = evaluate(getattr(form, tree_name), prep.views[ch], p)
        except ExprEvalError as exc:
            raise EnergyEvalError(tree_name, exc, n) from None
        g = _broadcast(g, shape)
        out.append(g.reshape(2, n) if ch != "os" else g)
    return tuple(out)


def energy_channels(model: EnergyModel, grid: DensityGrid, params=None):
    """Per-point channel energy densities (e_x, e_ss, e_os), each length n."""
    prep = prepare(grid, model.constants)
    gx, gss, gos = enhancement_factors(model, grid, params)
    return (prep.ref_x * gx).sum(0), (prep.ref_ss * gss).sum(0), prep.ref_os * gos


def energy_density(model: EnergyModel, grid: DensityGrid, params=None) -> np.ndarray:
    ex, ess, eos = energy_channels(model, grid, params)
    return ex + ess + eos


def xc_energy(model: EnergyModel, grid: DensityGrid, params=None) -> float:
    """Semi-local XC energy (Hartree) plus the grid's fixed offset."""
    return float(grid.weights @ energy_density(model, grid, params)) + model.offset(grid)


def xc_energy_extended(model: EnergyModel, grid: DensityGrid, params=None) -> np.longdouble:
    """``xc_energy`` with parameter-dependent arithmetic and the final sum in extended precision.

    Parameter-independent inputs stay in double; they are bitwise identical
    between nearby parameter vectors, so finite differences see only the
    extended-precision rounding.
    """
    p = np.asarray(model.form.params if params is None else params, dtype=np.longdouble)
    e = energy_density(model, grid, p)
    return grid.weights.astype(np.longdouble) @ e.astype(np.longdouble) + np.longdouble(model.offset(grid))


def xc_energy_components(model: EnergyModel, grid: DensityGrid, params=None) -> dict[str, float]:
    w = grid.weights
    ex, ess, eos = energy_channels(model, grid, params)
    return {"x": float(w @ ex), "ss": float(w @ ess), "os": float(w @ eos), "offset": model.offset(grid)}


def xc_energy_and_grad(model: EnergyModel, grid: DensityGrid, params=None, active=None):
    """Energy and ``{param index: dE/dp}`` by forward-mode differentiation.

    ``active`` restricts derivative bookkeeping; default is the trainable set.
    """
    prep = prepare(grid, model.constants)
    form = model.form
    p = form.params if params is None else params
    if active is None:
        active = set(int(i) for i in form.trainable_indices)
    n = grid.npoints
    w = prep.weights
    energy = model.offset(grid)
    grad: dict[int, float] = {}
    for tree_name, ch, ref in (("gx", "x", prep.ref_x), ("gss", "ss", prep.ref_ss), ("gos", "os", prep.ref_os)):
        try:
            val, der = evaluate_dual(getattr(form, tree_name), prep.views[ch], p, active)
        except ExprEvalError as exc:
            raise EnergyEvalError(tree_name, exc, n) from None
        wref = (ref * w).reshape(-1)
        energy += float(wref @ _broadcast(val, wref.shape))
        for i, d in der.items():
            grad[i] = grad.get(i, 0.0) + float(wref @ _broadcast(d, wref.shape))
    return energy, grad


class _StackedView(Mapping):
    """Concatenation of one channel's views over several grids, built name by name."""

    def __init__(self, views):
        self._views = views
        self._cache: dict[str, np.ndarray] = {}

    def __getitem__(self, name):
        if name not in self._cache:
            self._cache[name] = np.concatenate([v[name] for v in self._views])
        return self._cache[name]

    def __iter__(self):
        return iter(self._views[0])

    def __len__(self):
        return len(self._views[0])

    def __contains__(self, name):
        return all(name in v for v in self._views)


class GridBatch:
    """Several grids evaluated as one: trees run once, energies come from segment sums."""

    def __init__(self, grids, constants: DescriptorConstants):
        self.grids = tuple(grids)
        if not self.grids:
            raise ValueError("empty grid batch")
        self.constants = constants
        preps = [prepare(g, constants) for g in self.grids]
        n = np.array([g.npoints for g in self.grids])
        self.wref = {
            "x": np.concatenate([(p.ref_x * p.weights).reshape(-1) for p in preps]),
            "ss": np.concatenate([(p.ref_ss * p.weights).reshape(-1) for p in preps]),
            "os": np.concatenate([p.ref_os * p.weights for p in preps]),
        }
        self.starts = {
            "x": np.concatenate([[0], np.cumsum(2 * n)[:-1]]),
            "ss": np.concatenate([[0], np.cumsum(2 * n)[:-1]]),
            "os": np.concatenate([[0], np.cumsum(n)[:-1]]),
        }
        self.views = {ch: _StackedView([p.views[ch] for p in preps]) for ch in ("x", "ss", "os")}
        self.memo = {ch: SubtreeMemo() for ch in ("x", "ss", "os")}

    def _segment(self, ch: str, vals) -> np.ndarray:
        terms = self.wref[ch] * _broadcast(vals, self.wref[ch].shape)
        return np.add.reduceat(terms, self.starts[ch])

    def offsets(self, model: EnergyModel) -> np.ndarray:
        return np.array([model.offset(g) for g in self.grids])

    def energies(self, model: EnergyModel, params=None) -> np.ndarray:
        form = model.form
        p = form.params if params is None else params
        e = self.offsets(model)
        for tree_name, ch in CHANNELS:
            try:
                val = evaluate(getattr(form, tree_name), self.views[ch], p, memo=self.memo[ch])
            except ExprEvalError as exc:
                raise EnergyEvalError(tree_name, exc, len(self.wref["os"])) from None
            e = e + self._segment(ch, val)
        return e

    def energies_and_grads(self, model: EnergyModel, params=None, active=None):
        """Energies (m,) and ``{param index: dE/dp (m,)}``."""
        form = model.form
        p = form.params if params is None else params
        if active is None:
            active = set(int(i) for i in form.trainable_indices)
        e = self.offsets(model)
        grad: dict[int, np.ndarray] = {}
        for tree_name, ch in CHANNELS:
            try:
                val, der = evaluate_dual(getattr(form, tree_name), self.views[ch], p, active, memo=self.memo[ch])
            except ExprEvalError as exc:
                raise EnergyEvalError(tree_name, exc, len(self.wref["os"])) from None
            e = e + self._segment(ch, val)
            for i, d in der.items():
                grad[i] = grad.get(i, 0.0) + self._segment(ch, d)
        return e, grad


CHANNELS = (("gx", "x"), ("gss", "ss"), ("gos", "os"))
