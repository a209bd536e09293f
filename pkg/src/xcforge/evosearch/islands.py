"""Islands: append-only populations, capped elite archives, selection and migration."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

ARCHIVE_CAP = 10
EXPLORE_RATE = 0.8
MIGRATION_PERIOD = 25
MIGRATION_COUNT = 2

EXPLORE, EXPLOIT, FALLBACK = "explore", "exploit", "fallback"


@dataclass
class Island:
    id: int
    cap: int = ARCHIVE_CAP
    population: list[str] = field(default_factory=list)
    archive: list[str] = field(default_factory=list)  # best first

    def add(self, cid: str, scores: Mapping[str, float], order: Mapping[str, int]) -> bool:
        """Append to the population and offer to the archive; True if archived."""
        if cid not in self.population:
            self.population.append(cid)
        return self.offer(cid, scores, order)

    def offer(self, cid: str, scores: Mapping[str, float], order: Mapping[str, int]) -> bool:
        if cid in self.archive:
            return True
        ranked = sorted(self.archive + [cid], key=lambda c: (-scores[c], order[c]))
        self.archive = ranked[: self.cap]
        return cid in self.archive

    def state(self) -> dict:
        return {"id": self.id, "population": list(self.population), "archive": list(self.archive)}


def select_parent(island: Island, rng: np.random.Generator, explore_rate: float = EXPLORE_RATE) -> tuple[str, str]:
    """(candidate id, mode): uniform over the population with probability explore_rate, else over the archive."""
    if not island.population:
        raise ValueError(f"island {island.id} has an empty population")
    explore = rng.random() < explore_rate
    if explore:
        return island.population[int(rng.integers(len(island.population)))], EXPLORE
    if not island.archive:
        return island.population[int(rng.integers(len(island.population)))], FALLBACK
    return island.archive[int(rng.integers(len(island.archive)))], EXPLOIT


def migrate(islands: Sequence[Island], count: int, scores: Mapping[str, float],
            order: Mapping[str, int]) -> list[tuple[int, int, str]]:
    """Copy each island's top ``count`` elites into the next island (ring); returns the moves.

    Elites are read before any island is modified, so one round moves each
    island's pre-migration best exactly one step.
    """
    if len(islands) < 2:
        raise ValueError("migration needs at least two islands")
    elites = [list(isl.archive[:count]) for isl in islands]
    moves = []
    for k, isl in enumerate(islands):
        dst = islands[(k + 1) % len(islands)]
        for cid in elites[k]:
            if cid not in dst.population:
                dst.add(cid, scores, order)
                moves.append((isl.id, dst.id, cid))
    return moves


def migrated_elites(island: Island, home: Mapping[str, int]) -> list[str]:
    """Population members that arrived from another island."""
    return [c for c in island.population if home[c] != island.id]
