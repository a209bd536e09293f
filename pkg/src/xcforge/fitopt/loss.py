"""Reaction energies, WRMSD and its exact gradient over trainable parameters."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from ..constraints.checks import HARTREE_TO_KCAL
from ..xcforms.energy import EnergyModel, GridBatch, xc_energy, xc_energy_extended
from .dataset import Dataset, DatasetError, Reaction


class GradientError(ArithmeticError):
    def __init__(self, index: int, name: str):
        self.index = index
        super().__init__(f"non-finite gradient for parameter {index} ({name})")


def _batches(model: EnergyModel, ds: Dataset, ids, threads: int) -> list[GridBatch]:
    """Contiguous chunks of the systems, one batch per worker, cached on the dataset."""
    ids = tuple(ids)
    key = (ids, model.constants, max(1, threads))
    if key not in ds.cache:
        chunks = [c for c in np.array_split(np.arange(len(ids)), min(max(1, threads), len(ids))) if c.size]
        ds.cache[key] = [GridBatch([ds.systems[ids[j]] for j in c], model.constants) for c in chunks]
    return ds.cache[key]


def _map(fn, items, threads: int):
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def system_energies(model: EnergyModel, ds: Dataset, ids, params=None, threads: int = 1) -> np.ndarray:
    """Semi-local XC energies (Hartree) of the listed systems."""
    parts = _map(lambda b: b.energies(model, params), _batches(model, ds, ids, threads), threads)
    return np.concatenate(parts)


def system_energies_and_grads(model: EnergyModel, ds: Dataset, ids, params=None, threads: int = 1):
    """Energies (m,) and Jacobian (m, n_trainable) with respect to trainable parameters."""
    tidx = [int(i) for i in model.form.trainable_indices]
    active = set(tidx)
    parts = _map(lambda b: b.energies_and_grads(model, params, active), _batches(model, ds, ids, threads), threads)
    e = np.concatenate([p[0] for p in parts])
    jac = np.zeros((e.size, len(tidx)))
    row = 0
    for pe, g in parts:
        for k, i in enumerate(tidx):
            if i in g:
                jac[row:row + pe.size, k] = g[i]
        row += pe.size
    return e, jac


def _split_arrays(ds: Dataset, split: str):
    idx = ds.split(split)
    if not idx:
        raise DatasetError(f"split {split!r} is empty")
    ids = ds.systems_in(idx)
    col = {s: j for j, s in enumerate(ids)}
    c = np.zeros((len(idx), len(ids)))
    for k, i in enumerate(idx):
        for sid, coef in ds.reactions[i].terms:
            c[k, col[sid]] += coef
    rx = [ds.reactions[i] for i in idx]
    ref = np.array([r.reference for r in rx])
    off = np.array([r.offset for r in rx])
    w = np.array([r.weight for r in rx])
    return ids, c, ref, off, w


def reaction_energy(model: EnergyModel, ds: Dataset, reaction: Reaction, params=None) -> float:
    """kcal/mol: sum_i c_i E(system_i) * 627.509474 + fixed offset."""
    total = 0.0
    for sid, coef in reaction.terms:
        if sid not in ds.systems:
            raise DatasetError(f"unknown system id {sid!r}")
        total += coef * xc_energy(model, ds.systems[sid], params)
    return total * HARTREE_TO_KCAL + reaction.offset


def predictions(model: EnergyModel, ds: Dataset, split: str, params=None, threads: int = 1):
    ids, c, ref, off, w = _split_arrays(ds, split)
    e = system_energies(model, ds, ids, params, threads)
    return c @ e * HARTREE_TO_KCAL + off, ref, w


def weighted_rms(errors, weights) -> float:
    """sqrt(sum w e^2 / sum w)."""
    errors = np.asarray(errors, dtype=float)
    weights = np.asarray(weights, dtype=float)
    return math.sqrt(float(weights @ errors**2) / float(weights.sum()))


def wrmsd(model: EnergyModel, ds: Dataset, split: str = "train", params=None, threads: int = 1) -> float:
    pred, ref, w = predictions(model, ds, split, params, threads)
    return weighted_rms(pred - ref, w)


def wrmsd_sq_and_grad(model: EnergyModel, ds: Dataset, split: str = "train", params=None, threads: int = 1):
    """Mean-square loss L = WRMSD^2 and dL/dp over trainable parameters (smooth everywhere)."""
    ids, c, ref, off, w = _split_arrays(ds, split)
    e, jac = system_energies_and_grads(model, ds, ids, params, threads)
    err = c @ e * HARTREE_TO_KCAL + off - ref
    wsum = w.sum()
    loss = float(w @ err**2) / wsum
    grad = 2.0 * ((w * err) @ (c @ jac)) * HARTREE_TO_KCAL / wsum
    bad = np.flatnonzero(~np.isfinite(grad))
    if bad.size:
        i = int(model.form.trainable_indices[bad[0]])
        raise GradientError(i, model.form.param_names[i])
    return loss, grad


def grad_wrmsd(model: EnergyModel, ds: Dataset, split: str = "train", params=None, threads: int = 1) -> np.ndarray:
    """d WRMSD / d p for each trainable parameter (in trainable-index order)."""
    loss, g = wrmsd_sq_and_grad(model, ds, split, params, threads)
    r = math.sqrt(loss)
    return g / (2.0 * r) if r > 0 else np.zeros_like(g)


def wrmsd_extended(model: EnergyModel, ds: Dataset, split: str = "train", params=None) -> np.longdouble:
    """WRMSD evaluated in extended precision (finite-difference oracle)."""
    ids, c, ref, off, w = _split_arrays(ds, split)
    e = np.array([xc_energy_extended(model, ds.systems[s], params) for s in ids], dtype=np.longdouble)
    err = c.astype(np.longdouble) @ e * np.longdouble(HARTREE_TO_KCAL) + off - ref
    w = w.astype(np.longdouble)
    return np.sqrt((w @ err**2) / w.sum())


def finite_diff_check(model: EnergyModel, ds: Dataset, step: float = 1e-6, split: str = "train",
                      params=None) -> float:
    """Max entrywise |analytic - central FD| / max(|FD|, 1e-12) of the WRMSD gradient.

    The central differences are taken on the extended-precision WRMSD so that
    cancellation at small steps does not swamp small gradient entries.
    """
    if not (math.isfinite(step) and step > 0):
        raise ValueError(f"step must be positive and finite, got {step!r}")
    base = np.array(model.form.params if params is None else params, dtype=float)
    g = grad_wrmsd(model, ds, split, base)
    base_ld = base.astype(np.longdouble)
    h = np.longdouble(step)
    fd = np.empty(g.size, dtype=np.longdouble)
    for k, i in enumerate(model.form.trainable_indices):
        p = base_ld.copy()
        p[i] = base_ld[i] + h
        up = wrmsd_extended(model, ds, split, p)
        p[i] = base_ld[i] - h
        dn = wrmsd_extended(model, ds, split, p)
        fd[k] = (up - dn) / (2 * h)
    fd = fd.astype(float)
    return float(np.max(np.abs(g - fd) / np.maximum(np.abs(fd), 1e-12)))
