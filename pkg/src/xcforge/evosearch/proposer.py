"""Proposers turn a request (parents, lineage, dead ends) into a child form.

``ScriptedProposer`` applies registered operators with a seeded generator.
``HttpProposer`` sends the request as JSON to an external service.
"""

from __future__ import annotations

import json
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from ..xcforms.forms import FunctionalForm
from ..xcforms.serialize import FormParseError, form_from_dict, form_to_dict
from .memory import DeadEnd, MemoryRecord
from .operators import OPERATORS, OperatorInapplicable, OperatorSpec, is_freeze_graft

TASK_TEXT = (
    "Improve a semi-local meta-GGA exchange-correlation functional. The functional is three "
    "enhancement-factor expression trees (exchange g_x, same-spin g_ss, opposite-spin g_os) over "
    "dimensionless descriptors, multiplying LDA reference energy densities. Exact exchange and "
    "nonlocal dispersion are fixed offsets and cannot be changed. Return one child form document "
    "and a short plan. New parameters should start at values that leave the parent's energies "
    "unchanged. Candidates are fitted on the training split, ranked by validation WRMSD, and "
    "penalized by a factor 0.9 per violated physical constraint (spin symmetry, uniform electron "
    "gas limit, uniform coordinate scaling, grid convergence)."
)


class ProposerWireError(RuntimeError):
    """External proposer unreachable or returned an unusable answer."""


@dataclass(frozen=True)
class ProposerRequest:
    task_text: str
    parents: tuple[tuple[str, FunctionalForm], ...]  # (candidate id, form); first is the primary parent
    lineage: tuple[MemoryRecord, ...] = ()
    dead_ends: tuple[DeadEnd, ...] = ()
    donors: tuple[tuple[str, FunctionalForm], ...] = ()  # migrated elites usable as second parents
    mode: str = ""  # how the primary parent was selected

    def to_wire(self) -> dict:
        return {
            "task_text": self.task_text,
            "parent_forms": [dict(form_to_dict(f), id=cid) for cid, f in self.parents],
            "lineage_records": [r.to_dict() for r in self.lineage],
            "dead_ends": [d.to_dict() for d in self.dead_ends],
        }


@dataclass(frozen=True)
class ProposerResponse:
    plan_text: str
    form: FunctionalForm
    operator: str
    tag: str
    channel: str = ""
    parents: tuple[str, ...] = ()  # ids of all parents used
    notes: tuple[str, ...] = field(default=())  # resampling and fallback messages

    @property
    def form_document(self) -> dict:
        return form_to_dict(self.form)


class ScriptedProposer:
    """Seeded operator application with resampling on inapplicable or dead-end moves.

    ``exploit_bias`` multiplies the weight of conservative operators when the
    parent came from the elite archive; values above 1 reproduce the drift
    toward small, parameter-freezing edits under exploitation-heavy selection.
    """

    def __init__(self, weights: Mapping[str, float] | None = None, exploit_bias: float = 1.0,
                 max_attempts: int = 20, registry: Mapping[str, OperatorSpec] = OPERATORS):
        self.registry = dict(registry)
        if not self.registry:
            raise ValueError("operator registry is empty")
        self.weights = {k: float((weights or {}).get(k, 1.0)) for k in self.registry}
        if any(w < 0 for w in self.weights.values()) or not any(self.weights.values()):
            raise ValueError("operator weights must be non-negative and not all zero")
        self.exploit_bias = float(exploit_bias)
        self.max_attempts = int(max_attempts)

    def _weights(self, mode: str) -> tuple[list[str], np.ndarray]:
        names = sorted(self.registry)
        w = np.array([self.weights[n] * (self.exploit_bias if mode == "exploit" and self.registry[n].conservative
                                         else 1.0) for n in names])
        return names, w / w.sum()

    def propose(self, request: ProposerRequest, rng: np.random.Generator) -> ProposerResponse:
        names, probs = self._weights(request.mode)
        dead = {d.tag for d in request.dead_ends}
        notes = []
        primary_id, primary = request.parents[0]
        for _ in range(self.max_attempts):
            op = self.registry[names[int(rng.choice(len(names), p=probs))]]
            parents, ids = [primary], [primary_id]
            if op.arity == 2:
                if not request.donors:
                    notes.append(f"{op.name} inapplicable: no migrated elites; resampled")
                    continue
                did, dform = request.donors[int(rng.integers(len(request.donors)))]
                parents.append(dform)
                ids.append(did)
            try:
                prop = op.fn(parents, rng)
            except OperatorInapplicable as exc:
                notes.append(f"{op.name} inapplicable: {exc}; resampled")
                continue
            if prop.tag in dead:
                notes.append(f"{prop.tag} is a dead end; resampled")
                continue
            return ProposerResponse(prop.plan_text, prop.form, prop.operator, prop.tag, prop.channel,
                                    tuple(ids), tuple(notes))
        raise ProposerWireError(f"no applicable operator after {self.max_attempts} attempts")


class HttpProposer:
    """POSTs the request JSON; expects ``{plan_text, form_document}`` back."""

    def __init__(self, url: str, timeout: float = 30.0, retries: int = 2):
        self.url = url
        self.timeout = float(timeout)
        self.retries = int(retries)

    def _post(self, payload: bytes) -> dict:
        last = None
        for _ in range(self.retries + 1):
            req = urllib.request.Request(self.url, data=payload, method="POST",
                                         headers={"Content-Type": "application/json"})
            try:
                with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                    return json.loads(resp.read().decode("utf-8"))
            except (urllib.error.URLError, OSError, ValueError) as exc:
                last = exc
        raise ProposerWireError(f"{self.url}: {last}")

    def propose(self, request: ProposerRequest, rng: np.random.Generator | None = None) -> ProposerResponse:
        doc = self._post(json.dumps(request.to_wire(), sort_keys=True).encode("utf-8"))
        if not isinstance(doc, dict) or "form_document" not in doc:
            raise ProposerWireError("response lacks form_document")
        try:
            form = form_from_dict(doc["form_document"])
        except FormParseError as exc:
            raise ProposerWireError(f"child form does not parse: {exc}") from None
        primary_id, primary = request.parents[0]
        op = str(doc.get("operator") or ("freeze_graft" if is_freeze_graft(primary, form) else "external"))
        return ProposerResponse(str(doc.get("plan_text", "")), form, op, str(doc.get("tag") or op),
                                str(doc.get("channel", "")), (primary_id,))
