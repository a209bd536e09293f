"""Append-only evolutionary memory and dead-end synthesis."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping

FIT_FAILURE = "fit_failure"
DEAD_END_ATTEMPTS = 5


@dataclass(frozen=True)
class MemoryRecord:
    iteration: int
    island: int
    candidate: str
    parents: tuple[str, ...]
    plan_text: str
    summary_text: str
    delta: float  # child R_evlv minus (first) parent R_evlv
    outcomes: Mapping[str, bool] = field(default_factory=dict)  # check name -> passed; fit_failure -> False
    tags: tuple[str, ...] = ()

    @property
    def failures(self) -> frozenset[str]:
        return frozenset(k for k, ok in self.outcomes.items() if not ok)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["parents"] = list(self.parents)
        d["tags"] = list(self.tags)
        d["outcomes"] = dict(self.outcomes)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "MemoryRecord":
        return cls(int(d["iteration"]), int(d["island"]), str(d["candidate"]), tuple(d["parents"]),
                   str(d["plan_text"]), str(d["summary_text"]), float(d["delta"]),
                   {str(k): bool(v) for k, v in d["outcomes"].items()}, tuple(d["tags"]))


class MemoryStore:
    """Records in arrival order; per island the iteration must strictly increase."""

    def __init__(self, records: Iterable[MemoryRecord] = ()):
        self._records: list[MemoryRecord] = []
        self._by_candidate: dict[str, MemoryRecord] = {}
        self._last: dict[int, int] = {}
        for r in records:
            self.append(r)

    def append(self, rec: MemoryRecord) -> None:
        last = self._last.get(rec.island)
        if last is not None and rec.iteration <= last:
            raise ValueError(f"island {rec.island}: iteration {rec.iteration} does not follow {last}")
        if rec.candidate in self._by_candidate:
            raise ValueError(f"duplicate memory record for {rec.candidate!r}")
        self._records.append(rec)
        self._by_candidate[rec.candidate] = rec
        self._last[rec.island] = rec.iteration

    @property
    def records(self) -> tuple[MemoryRecord, ...]:
        return tuple(self._records)

    def __len__(self) -> int:
        return len(self._records)

    def get(self, candidate: str) -> MemoryRecord | None:
        return self._by_candidate.get(candidate)

    def lineage(self, candidate: str, depth: int = 5) -> list[MemoryRecord]:
        """Records along the first-parent chain, nearest ancestor first."""
        out = []
        rec = self._by_candidate.get(candidate)
        while rec is not None and len(out) < depth:
            out.append(rec)
            rec = self._by_candidate.get(rec.parents[0]) if rec.parents else None
        return out


@dataclass(frozen=True)
class DeadEnd:
    tag: str
    attempts: int
    cause: str

    def to_dict(self) -> dict:
        return asdict(self)


def synthesize_dead_ends(records: Iterable[MemoryRecord], min_attempts: int = DEAD_END_ATTEMPTS) -> list[DeadEnd]:
    """Tags tried at least ``min_attempts`` times, never improving, all failing the same way.

    The shared cause is the alphabetically first failure category present in
    every attempt (a check name or ``fit_failure``).
    """
    by_tag: dict[str, list[MemoryRecord]] = {}
    for r in records:
        for t in r.tags:
            by_tag.setdefault(t, []).append(r)
    out = []
    for tag in sorted(by_tag):
        recs = by_tag[tag]
        if len(recs) < min_attempts or any(r.delta > 0 for r in recs):
            continue
        shared = frozenset.intersection(*(r.failures for r in recs))
        if shared:
            out.append(DeadEnd(tag, len(recs), sorted(shared)[0]))
    return out
