"""Score R = J_target / J_val and its constraint-penalized form."""

from __future__ import annotations

import math

J_TARGET = 3.45  # kcal/mol
PENALTY = 0.9


def score(j_val: float, j_target: float = J_TARGET) -> float:
    if not (math.isfinite(j_val) and j_val > 0):
        raise ValueError(f"validation WRMSD must be positive and finite, got {j_val!r}")
    return j_target / j_val


def penalized(r: float, n_violations: int, penalty: float = PENALTY) -> float:
    """R * penalty**n."""
    if n_violations < 0:
        raise ValueError("violation count must be non-negative")
    return r * penalty**n_violations
