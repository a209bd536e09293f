"""Seeded synthetic reaction datasets built from analytic Gaussian-sum systems."""

from __future__ import annotations

import numpy as np

from ..constraints.checks import HARTREE_TO_KCAL
from ..griddata import GaussianTerm, SyntheticSystemSpec, generate
from ..xcforms.energy import EnergyModel, xc_energy
from ..xcforms.forms import FunctionalForm, canonical_baseline
from .dataset import Dataset, Reaction

SPLIT_FRACTIONS = (0.6, 0.2, 0.2)


def random_system(rng: np.random.Generator, label: str, resolution: str = "coarse") -> SyntheticSystemSpec:
    """A compact molecule-like Gaussian sum near the grid origin, possibly spin polarized."""
    terms = [GaussianTerm((0.0, 0.0, 0.0), float(rng.uniform(1.2, 3.0)), float(rng.uniform(0.5, 3.0)), "ab")]
    for _ in range(int(rng.integers(1, 3))):
        center = tuple(float(c) for c in rng.uniform(-0.4, 0.4, 3))
        spin = str(rng.choice(["ab", "ab", "a", "b"]))
        terms.append(GaussianTerm(center, float(rng.uniform(0.4, 1.2)), float(rng.uniform(0.05, 0.4)), spin))
    return SyntheticSystemSpec("gaussian_sum", resolution, terms=tuple(terms), label=label)


def _assign_splits(n: int, rng: np.random.Generator, fractions=SPLIT_FRACTIONS) -> list[str]:
    n_train = max(1, int(round(fractions[0] * n)))
    n_val = int(round(fractions[1] * n))
    labels = ["train"] * n_train + ["val"] * n_val + ["test"] * (n - n_train - n_val)
    return [labels[i] for i in rng.permutation(n)]


def make_dataset(n_reactions: int = 50, n_systems: int = 20, seed: int = 0,
                 reference_form: FunctionalForm | None = None, noise_kcal: float = 0.0,
                 resolution: str = "coarse", splits: bool = True) -> Dataset:
    """Random reactions whose references come from ``reference_form`` plus optional noise.

    With zero noise the reference form reproduces every reference exactly, so a
    fit started elsewhere has a known zero-loss target.
    """
    if n_reactions < 1 or n_systems < 2:
        raise ValueError("need at least one reaction and two systems")
    rng = np.random.default_rng(seed)
    systems = {f"sys{j:03d}": generate(random_system(rng, f"sys{j:03d}", resolution)) for j in range(n_systems)}
    ids = sorted(systems)
    ref_model = EnergyModel(reference_form if reference_form is not None else canonical_baseline())
    energies = {s: xc_energy(ref_model, systems[s]) for s in ids}
    split_labels = _assign_splits(n_reactions, rng) if splits else ["train"] * n_reactions
    reactions = []
    for k in range(n_reactions):
        m = int(rng.integers(2, 4))
        picked = rng.choice(len(ids), size=m, replace=False)
        coefs = rng.choice([-2.0, -1.0, 1.0, 2.0], size=m)
        terms = tuple((ids[j], float(c)) for j, c in zip(picked, coefs))
        offset = float(rng.normal(0.0, 5.0))
        ref = sum(c * energies[s] for s, c in terms) * HARTREE_TO_KCAL + offset
        ref += float(rng.normal(0.0, noise_kcal)) if noise_kcal > 0 else 0.0
        reactions.append(Reaction(terms, ref, float(rng.uniform(0.5, 2.0)), split_labels[k], offset))
    return Dataset(systems, tuple(reactions), label=f"synthetic_seed{seed}")


def perturbed_form(form: FunctionalForm, rel: float = 0.1, seed: int = 0, absolute: float = 0.0) -> FunctionalForm:
    """Trainable parameters scaled by (1 + rel * N(0,1)) plus ``absolute * N(0,1)``."""
    rng = np.random.default_rng(seed)
    x = form.trainable_vector()
    x = x * (1.0 + rel * rng.standard_normal(x.size)) + absolute * rng.standard_normal(x.size)
    return form.with_trainable(x)


def recovery_problem(form: FunctionalForm | None = None, n_reactions: int = 50, seed: int = 0,
                     rel: float = 0.1):
    """(dataset generated from ``form``, starting form perturbed by ``rel``)."""
    form = canonical_baseline() if form is None else form
    ds = make_dataset(n_reactions, seed=seed, reference_form=form, splits=False)
    return ds, perturbed_form(form, rel, seed + 1)


def hidden_reference_form(seed: int = 0) -> FunctionalForm:
    """A richer form than the baseline: SAFS26-a with nonzero extra terms and active denominators."""
    from ..xcforms.forms import canonical_safs26a

    form = canonical_safs26a()
    rng = np.random.default_rng(seed)
    p = form.params.copy()
    for i, name in enumerate(form.param_names):
        tail = name.split(".", 1)[1]
        if tail.startswith("d_"):
            p[i] = rng.uniform(-3.0, -1.0)
        elif tail[:2] in ("cv", "cz", "cx"):
            p[i] = rng.normal(0.0, 0.1 if name.startswith("x.") else 0.3)
    return form.with_params(p)


def evolution_dataset(n_reactions: int = 40, n_systems: int = 16, seed: int = 0,
                      noise_kcal: float = 0.3) -> Dataset:
    """Train/val/test reactions referenced to ``hidden_reference_form`` plus noise."""
    return make_dataset(n_reactions, n_systems, seed, hidden_reference_form(seed), noise_kcal)
