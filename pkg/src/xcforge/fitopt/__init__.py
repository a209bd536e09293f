"""Reaction datasets, WRMSD loss with exact gradients, and L-BFGS fitting."""

from .dataset import SPLITS, Dataset, DatasetError, Reaction, load_dataset, save_dataset
from .lbfgs import FitOptions, FitResult, MinimizeResult, fit, minimize_lbfgs
from .loss import (GradientError, finite_diff_check, grad_wrmsd, predictions, reaction_energy,
                   system_energies, system_energies_and_grads, weighted_rms, wrmsd, wrmsd_extended, wrmsd_sq_and_grad)
from .synthetic import (evolution_dataset, hidden_reference_form, make_dataset, perturbed_form, random_system,
                        recovery_problem)

__all__ = [
    "SPLITS", "Dataset", "DatasetError", "Reaction", "load_dataset", "save_dataset",
    "FitOptions", "FitResult", "MinimizeResult", "fit", "minimize_lbfgs",
    "GradientError", "finite_diff_check", "wrmsd_extended", "grad_wrmsd", "predictions", "reaction_energy",
    "system_energies", "system_energies_and_grads", "weighted_rms", "wrmsd", "wrmsd_sq_and_grad",
    "evolution_dataset", "hidden_reference_form", "make_dataset", "perturbed_form", "random_system",
    "recovery_problem",
]
