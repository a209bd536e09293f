"""Reaction datasets: systems on grids, reactions as stoichiometric combinations."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from ..griddata import DensityGrid, GridFormatError, load_grid, save_grid

SPLITS = ("train", "val", "test")


class DatasetError(ValueError):
    """Dataset or manifest is inconsistent."""


@dataclass(frozen=True)
class Reaction:
    terms: tuple[tuple[str, float], ...]
    reference: float  # kcal/mol
    weight: float = 1.0
    split: str = "train"
    offset: float = 0.0  # kcal/mol, fixed exact-exchange + VV10 stand-in

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple((str(s), float(c)) for s, c in self.terms))
        if not self.terms:
            raise DatasetError("reaction needs at least one term")
        if not (math.isfinite(self.weight) and self.weight > 0):
            raise DatasetError(f"reaction weight must be positive, got {self.weight!r}")
        if self.split not in SPLITS:
            raise DatasetError(f"unknown split {self.split!r}")
        if not (math.isfinite(self.reference) and math.isfinite(self.offset)):
            raise DatasetError("reference and offset must be finite")

    def to_dict(self) -> dict:
        return {"terms": [[s, c] for s, c in self.terms], "ref_kcal": self.reference,
                "weight": self.weight, "split": self.split, "offset_kcal": self.offset}


@dataclass(frozen=True, eq=False)
class Dataset:
    systems: Mapping[str, DensityGrid]
    reactions: tuple[Reaction, ...]
    label: str = ""
    system_ids: tuple[str, ...] = field(init=False)
    cache: dict = field(init=False, repr=False, default_factory=dict)  # evaluation batches

    def __post_init__(self):
        object.__setattr__(self, "reactions", tuple(self.reactions))
        object.__setattr__(self, "systems", dict(self.systems))
        object.__setattr__(self, "system_ids", tuple(sorted(self.systems)))
        for k, r in enumerate(self.reactions):
            for sid, _ in r.terms:
                if sid not in self.systems:
                    raise DatasetError(f"reaction {k}: unknown system id {sid!r}")

    def split(self, name: str) -> list[int]:
        return [i for i, r in enumerate(self.reactions) if r.split == name]

    def require_splits(self, *names: str) -> None:
        for n in names:
            if not self.split(n):
                raise DatasetError(f"split {n!r} is empty")

    def stoichiometry(self, idx) -> np.ndarray:
        """Matrix C with C[k, j] = coefficient of system j in reaction idx[k]."""
        col = {s: j for j, s in enumerate(self.system_ids)}
        c = np.zeros((len(idx), len(self.system_ids)))
        for k, i in enumerate(idx):
            for sid, coef in self.reactions[i].terms:
                c[k, col[sid]] += coef
        return c

    def systems_in(self, idx) -> list[str]:
        used = {sid for i in idx for sid, _ in self.reactions[i].terms}
        return [s for s in self.system_ids if s in used]

    def with_reactions(self, reactions) -> "Dataset":
        return Dataset(self.systems, tuple(reactions), self.label)


def save_dataset(ds: Dataset, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    systems = []
    for sid in ds.system_ids:
        name = f"{sid}.grid"
        save_grid(ds.systems[sid], out / name)
        systems.append({"id": sid, "grid_path": name})
    manifest = {"label": ds.label, "systems": systems, "reactions": [r.to_dict() for r in ds.reactions]}
    path = out / "dataset.json"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return path


def load_dataset(path) -> Dataset:
    """Read a manifest; grid paths are relative to the manifest's directory."""
    path = Path(path)
    if path.is_dir():
        path = path / "dataset.json"
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise DatasetError(f"{path}: not found") from None
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path}: {exc}") from None
    try:
        systems = {}
        for s in doc["systems"]:
            gp = path.parent / s["grid_path"]
            try:
                systems[str(s["id"])] = load_grid(gp)
            except FileNotFoundError:
                raise DatasetError(f"{gp}: grid file not found") from None
            except GridFormatError as exc:
                raise DatasetError(f"{gp}: {exc}") from None
        reactions = tuple(Reaction(tuple((t[0], t[1]) for t in r["terms"]), float(r["ref_kcal"]),
                                   float(r.get("weight", 1.0)), r.get("split", "train"),
                                   float(r.get("offset_kcal", 0.0))) for r in doc["reactions"])
    except (KeyError, TypeError, IndexError) as exc:
        raise DatasetError(f"{path}: missing or bad field {exc}") from None
    return Dataset(systems, reactions, str(doc.get("label", "")))
