"""The island search loop: select, propose, evaluate, summarize, archive, migrate."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from ..constraints.checks import CHECK_NAMES, ConstraintReport, ProtocolError, run_all
from ..fitopt.dataset import Dataset
from ..fitopt.lbfgs import FitOptions, fit
from ..fitopt.loss import wrmsd
from ..xcforms.energy import EnergyModel
from ..xcforms.forms import FunctionalForm, canonical_baseline
from ..xcforms.serialize import form_from_dict, form_to_dict
from .islands import (ARCHIVE_CAP, EXPLORE_RATE, MIGRATION_COUNT, MIGRATION_PERIOD, Island, migrate,
                      migrated_elites, select_parent)
from .memory import DEAD_END_ATTEMPTS, FIT_FAILURE, MemoryRecord, MemoryStore, synthesize_dead_ends
from .proposer import TASK_TEXT, ProposerRequest, ProposerResponse, ProposerWireError
from .scoring import J_TARGET, PENALTY, penalized, score


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SearchConfig:
    islands: int = 4
    budget: int = 200
    explore_rate: float = EXPLORE_RATE
    archive_cap: int = ARCHIVE_CAP
    migration_period: int = MIGRATION_PERIOD
    migration_count: int = MIGRATION_COUNT
    j_target: float = J_TARGET
    penalty: float = PENALTY
    dead_end_attempts: int = DEAD_END_ATTEMPTS
    lineage_depth: int = 5
    seed: int = 0
    fit_max_iter: int = 40
    fit_gtol: float = 1e-8
    fit_ftol: float = 1e-12
    operator_weights: Mapping[str, float] = field(default_factory=dict)
    exploit_bias: float = 1.0
    task_text: str = TASK_TEXT
    threads: int = 1

    def __post_init__(self):
        if self.islands < 1:
            raise ConfigError("islands must be >= 1")
        if self.budget < 0:
            raise ConfigError("budget must be >= 0")
        if not 0.0 <= self.explore_rate <= 1.0:
            raise ConfigError("explore_rate must lie in [0, 1]")
        if self.archive_cap < 1 or self.migration_period < 1 or self.migration_count < 0:
            raise ConfigError("archive_cap and migration_period must be >= 1, migration_count >= 0")
        if not (self.j_target > 0 and 0 < self.penalty <= 1):
            raise ConfigError("j_target must be positive and penalty in (0, 1]")
        object.__setattr__(self, "operator_weights", dict(self.operator_weights))

    def fit_options(self) -> FitOptions:
        return FitOptions(gtol=self.fit_gtol, ftol=self.fit_ftol, max_iter=self.fit_max_iter, threads=self.threads)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "SearchConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown search option {sorted(unknown)[0]!r}")
        return cls(**d)


@dataclass
class Candidate:
    id: str
    island: int
    iteration: int
    parents: tuple[str, ...]
    form: FunctionalForm
    j_val: float
    r: float
    r_evlv: float
    n_violations: int
    report: ConstraintReport | None
    failed: bool = False
    error: str = ""
    j_train: float | None = None
    pre_fit_j_val: float | None = None
    fit_info: dict = field(default_factory=dict)
    operator: str = "seed"
    tag: str = ""
    channel: str = ""
    plan_text: str = ""
    summary_text: str = ""
    mode: str = ""
    notes: tuple[str, ...] = ()
    sealed: dict = field(default_factory=dict, repr=False)  # test-split results, never read by selection

    def to_record(self) -> dict:
        return {
            "event": "candidate", "id": self.id, "island": self.island, "iteration": self.iteration,
            "parents": list(self.parents), "mode": self.mode, "operator": self.operator, "tag": self.tag,
            "channel": self.channel, "plan_text": self.plan_text, "summary_text": self.summary_text,
            "notes": list(self.notes), "form": form_to_dict(self.form), "fit": dict(self.fit_info),
            "pre_fit_j_val": self.pre_fit_j_val, "j_train": self.j_train,
            "j_val": self.j_val if math.isfinite(self.j_val) else None, "r": self.r,
            "r_evlv": self.r_evlv, "n_violations": self.n_violations,
            "report": self.report.to_dict() if self.report is not None else None,
            "failed": self.failed, "error": self.error, "sealed": dict(self.sealed),
        }

    @classmethod
    def from_record(cls, rec: Mapping) -> "Candidate":
        rep = ConstraintReport.from_dict(rec["report"]) if rec.get("report") else None
        j_val = math.inf if rec["j_val"] is None else float(rec["j_val"])
        return cls(rec["id"], int(rec["island"]), int(rec["iteration"]), tuple(rec["parents"]),
                   form_from_dict(rec["form"]), j_val, float(rec["r"]), float(rec["r_evlv"]),
                   int(rec["n_violations"]), rep, bool(rec["failed"]), rec.get("error", ""),
                   rec.get("j_train"), rec.get("pre_fit_j_val"), dict(rec.get("fit", {})),
                   rec.get("operator", ""), rec.get("tag", ""), rec.get("channel", ""), rec.get("plan_text", ""),
                   rec.get("summary_text", ""), rec.get("mode", ""), tuple(rec.get("notes", ())),
                   dict(rec.get("sealed", {})))


@dataclass
class Evaluation:
    form: FunctionalForm
    j_val: float
    r: float
    r_evlv: float
    n_violations: int
    report: ConstraintReport | None
    failed: bool
    error: str
    j_train: float | None
    pre_fit_j_val: float | None
    fit_info: dict
    sealed: dict


def evaluate_candidate(form: FunctionalForm, ds: Dataset, bundle, config: SearchConfig = SearchConfig()) -> Evaluation:
    """Fit on train, score on val, run the constraint checks; test WRMSD is sealed.

    Numerical failures during fitting or checking give a failed candidate
    with score 0 instead of an exception.
    """
    ds.require_splits("train", "val")
    model = EnergyModel(form)
    try:
        nt = config.threads
        pre = wrmsd(model, ds, "val", threads=nt)
        info: dict = {}
        fitted = form
        if form.n_trainable:
            res = fit(model, ds, config.fit_options())
            fitted = res.form
            info = {"converged": res.converged, "iterations": res.iterations, "reason": res.reason,
                    "gradient_norm": res.gradient_norm}
        fm = model.with_form(fitted)
        j_train = wrmsd(fm, ds, "train", threads=nt)
        j_val = wrmsd(fm, ds, "val", threads=nt)
        report = run_all(fm, bundle)
        r = score(j_val, config.j_target)
        sealed = {"test_wrmsd": wrmsd(fm, ds, "test", threads=nt)} if ds.split("test") else {}
    except (ArithmeticError, ProtocolError, ValueError) as exc:
        return Evaluation(form, math.inf, 0.0, 0.0, 0, None, True, f"{type(exc).__name__}: {exc}",
                          None, None, {}, {})
    return Evaluation(fitted, j_val, r, penalized(r, report.n_violations, config.penalty), report.n_violations,
                      report, False, "", j_train, pre, info, sealed)


def summarize(child: Candidate, parent: Candidate, siblings: Iterable[Candidate]) -> str:
    """Rule-based summary: score change, constraint outcomes, rank among siblings."""
    if child.failed:
        return f"{child.operator} on {child.channel or 'all'}: evaluation failed ({child.error}); scored 0."
    delta = child.r_evlv - parent.r_evlv
    viol = child.report.failed() if child.report else []
    sib = sorted(siblings, key=lambda c: -c.r_evlv)
    rank = 1 + [c.id for c in sib].index(child.id)
    verdict = "improved on" if delta > 0 else "did not improve on"
    return (f"{child.operator} on {child.channel or 'all'} {verdict} the parent: R_evlv {parent.r_evlv:.6f} -> "
            f"{child.r_evlv:.6f} ({delta:+.6f}), j_val {child.j_val:.6f} kcal/mol. "
            f"Violated checks: {', '.join(viol) if viol else 'none'}. Rank {rank} of {len(sib)} among siblings.")


def _outcomes(c: Candidate) -> dict:
    if c.failed:
        return {FIT_FAILURE: False}
    return {k: getattr(c.report, k).passed for k in CHECK_NAMES}


@dataclass
class SearchResult:
    config: SearchConfig
    candidates: dict[str, Candidate]
    islands: list[Island]
    memory: MemoryStore
    log: list[dict]

    @property
    def seed_id(self) -> str:
        return next(iter(self.candidates))

    @property
    def best(self) -> Candidate:
        return max(self.candidates.values(), key=lambda c: (c.r_evlv, -_order_key(c.id)))

    def selections(self) -> list[tuple]:
        return selection_sequence(self.log)


def _order_key(cid: str) -> int:
    return int(cid[1:])


def _streams(config: SearchConfig):
    ss = np.random.SeedSequence(config.seed).spawn(2 * config.islands)
    return ([np.random.default_rng(s) for s in ss[: config.islands]],
            [np.random.default_rng(s) for s in ss[config.islands:]])


def _dump(rec: dict) -> str:
    return json.dumps(rec, sort_keys=True)


def run_search(config: SearchConfig, ds: Dataset, bundle, proposer, seed_form: FunctionalForm | None = None,
               log_path=None, progress=None) -> SearchResult:
    """Run the search; every island starts from the fitted seed form (canonical baseline by default)."""
    sel_rngs, prop_rngs = _streams(config)
    islands = [Island(k, config.archive_cap) for k in range(config.islands)]
    cands: dict[str, Candidate] = {}
    scores: dict[str, float] = {}
    order: dict[str, int] = {}
    memory = MemoryStore()
    children: dict[str, list[str]] = {}
    log: list[dict] = []
    sink = open(log_path, "w") if log_path is not None else None

    def emit(rec: dict):
        log.append(rec)
        if sink is not None:
            sink.write(_dump(rec) + "\n")
            sink.flush()

    def register(c: Candidate):
        cands[c.id] = c
        scores[c.id] = c.r_evlv
        order[c.id] = len(order)
        islands[c.island].add(c.id, scores, order)

    try:
        seed = evaluate_candidate(seed_form or canonical_baseline(), ds, bundle, config)
        for k in range(config.islands):
            c = Candidate(f"c{len(cands):05d}", k, 0, (), seed.form, seed.j_val, seed.r, seed.r_evlv,
                          seed.n_violations, seed.report, seed.failed, seed.error, seed.j_train, seed.pre_fit_j_val,
                          dict(seed.fit_info), plan_text="seed", summary_text="seed form", sealed=dict(seed.sealed))
            register(c)
            emit(dict(c.to_record(), best_r_evlv=max(scores.values())))
        for it in range(1, config.budget + 1):
            k = (it - 1) % config.islands
            isl = islands[k]
            pid, mode = select_parent(isl, sel_rngs[k], config.explore_rate)
            parent = cands[pid]
            home = {cid: cands[cid].island for cid in isl.population}
            donors = tuple((d, cands[d].form) for d in migrated_elites(isl, home) if d != pid)
            req = ProposerRequest(config.task_text, ((pid, parent.form),),
                                  tuple(memory.lineage(pid, config.lineage_depth)),
                                  tuple(synthesize_dead_ends(memory.records, config.dead_end_attempts)), donors, mode)
            try:
                resp: ProposerResponse = proposer.propose(req, prop_rngs[k])
            except ProposerWireError as exc:
                emit({"event": "skip", "iteration": it, "island": k, "parents": [pid], "mode": mode,
                      "reason": str(exc)})
                continue
            ev = evaluate_candidate(resp.form, ds, bundle, config)
            c = Candidate(f"c{len(cands):05d}", k, it, resp.parents or (pid,), ev.form, ev.j_val, ev.r, ev.r_evlv,
                          ev.n_violations, ev.report, ev.failed, ev.error, ev.j_train, ev.pre_fit_j_val, ev.fit_info,
                          resp.operator, resp.tag, resp.channel, resp.plan_text, "", mode, resp.notes, ev.sealed)
            register(c)
            children.setdefault(pid, []).append(c.id)
            c.summary_text = summarize(c, parent, [cands[s] for s in children[pid]])
            memory.append(MemoryRecord(it, k, c.id, c.parents, c.plan_text, c.summary_text,
                                       c.r_evlv - parent.r_evlv, _outcomes(c), (c.tag,) if c.tag else ()))
            emit(dict(c.to_record(), best_r_evlv=max(scores.values())))
            if progress is not None:
                progress(it, c)
            if config.islands > 1 and config.migration_count > 0 and it % config.migration_period == 0:
                moves = migrate(islands, config.migration_count, scores, order)
                emit({"event": "migration", "iteration": it, "moves": [list(m) for m in moves]})
    finally:
        if sink is not None:
            sink.close()
    return SearchResult(config, cands, islands, memory, log)


def write_log(records: Iterable[dict], path) -> None:
    Path(path).write_text("".join(_dump(r) + "\n" for r in records))


def read_log(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]


def selection_sequence(records: Iterable[dict]) -> list[tuple]:
    """(iteration, island, primary parent, mode) for every post-seed selection in the log."""
    return [(r["iteration"], r["island"], r["parents"][0], r["mode"]) for r in records
            if r["event"] in ("candidate", "skip") and r["iteration"] > 0]


@dataclass
class ReplayResult:
    selections: list[tuple]
    islands: list[Island]
    migrations: list[list]


def replay(records: list[dict], config: SearchConfig) -> ReplayResult:
    """Rebuild island states and redraw every selection from the log and the seed.

    Reads only ids, islands and R_evlv from the records; sealed fields are
    never consulted.
    """
    sel_rngs, _ = _streams(config)
    islands = [Island(k, config.archive_cap) for k in range(config.islands)]
    scores: dict[str, float] = {}
    order: dict[str, int] = {}
    sels, migs = [], []
    for r in records:
        ev = r["event"]
        if ev == "candidate" and r["iteration"] == 0:
            pass
        elif ev in ("candidate", "skip"):
            k = r["island"]
            pid, mode = select_parent(islands[k], sel_rngs[k], config.explore_rate)
            sels.append((r["iteration"], k, pid, mode))
            if ev == "skip":
                continue
        if ev == "candidate":
            scores[r["id"]] = float(r["r_evlv"])
            order[r["id"]] = len(order)
            islands[r["island"]].add(r["id"], scores, order)
        elif ev == "migration":
            migs.append([list(m) for m in migrate(islands, config.migration_count, scores, order)])
    return ReplayResult(sels, islands, migs)


def running_best(records: Iterable[dict]) -> list[float]:
    return [r["best_r_evlv"] for r in records if r["event"] == "candidate"]
