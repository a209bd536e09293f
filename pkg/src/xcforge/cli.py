"""Command-line entry point: gen, check, fit, evolve, report.

Settings come from one flat JSON config (``--config``), then ``XCFORGE_*``
environment variables, then the explicit flags ``--seed``, ``--threads`` and
``--out``, later sources winning. Exit codes: 0 success, 1-4 violation count
for ``check``, 64 parse or IO error, 65 failed precondition.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .constraints import (BundleError, ProtocolError, build_bundle, default_bundle_spec, load_bundle, run_all,
                          save_bundle)
from .evosearch import (ConfigError, HttpProposer, ScriptedProposer, SearchConfig, read_log, run_search,
                        running_best, synthesize_dead_ends)
from .fitopt import (SPLITS, DatasetError, FitOptions, evolution_dataset, fit, load_dataset, make_dataset,
                     perturbed_form, save_dataset, wrmsd)
from .fitopt.synthetic import hidden_reference_form
from .griddata import GridFormatError, GridSpecError
from .xcforms import CANONICAL, EnergyModel, FormParseError, form_from_dict, load_form, save_form

EXIT_OK, EXIT_PARSE, EXIT_PRECONDITION = 0, 64, 65
ENV_PREFIX = "XCFORGE_"


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    dataset: str = ""  # dataset directory or manifest; empty means the built-in synthetic set
    bundle: str = ""  # fixture bundle directory; empty means the default bundle built in memory
    out: str = "xcforge_out"
    threads: int = 1
    proposer: str = "scripted"  # or an http(s) URL
    proposer_timeout: float = 30.0
    islands: int = 4
    budget: int = 200
    explore_rate: float = 0.8
    archive_cap: int = 10
    migration_period: int = 25
    migration_count: int = 2
    j_target: float = 3.45
    penalty: float = 0.9
    dead_end_attempts: int = 5
    lineage_depth: int = 5
    search_fit_max_iter: int = 40
    operator_weights: dict = field(default_factory=dict)
    exploit_bias: float = 1.0
    fit_max_iter: int = 500
    fit_memory: int = 10
    fit_gtol: float = 1e-8
    fit_ftol: float = 1e-12
    fit_restarts: int = 0  # extra perturbed starts for ``fit``; 0 keeps the single initialization
    synthetic_reactions: int = 40
    synthetic_systems: int = 16
    synthetic_noise: float = 0.3

    def __post_init__(self):
        if not 0.0 <= self.explore_rate <= 1.0:
            raise ConfigError("explore_rate must lie in [0, 1]")
        if self.budget < 0:
            raise ConfigError("budget must be >= 0")
        if self.islands < 1:
            raise ConfigError("islands must be >= 1")
        if self.threads < 1 or self.fit_restarts < 0:
            raise ConfigError("threads must be >= 1 and fit_restarts >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    def search_config(self) -> SearchConfig:
        return SearchConfig(self.islands, self.budget, self.explore_rate, self.archive_cap, self.migration_period,
                            self.migration_count, self.j_target, self.penalty, self.dead_end_attempts,
                            self.lineage_depth, self.seed, self.search_fit_max_iter, self.fit_gtol, self.fit_ftol,
                            dict(self.operator_weights), self.exploit_bias, threads=self.threads)

    def fit_options(self) -> FitOptions:
        return FitOptions(memory=self.fit_memory, gtol=self.fit_gtol, ftol=self.fit_ftol,
                          max_iter=self.fit_max_iter, threads=self.threads)


def _coerce(name: str, kind, raw: str):
    try:
        if kind is bool:
            return raw.strip().lower() in ("1", "true", "yes", "on")
        if kind in (int, float, str):
            return kind(raw)
        return json.loads(raw)
    except ValueError:
        raise ConfigError(f"{ENV_PREFIX}{name.upper()}: cannot parse {raw!r}") from None


def resolve_config(path: str | None = None, env: Mapping[str, str] | None = None,
                   overrides: Mapping[str, object] | None = None) -> RunConfig:
    """Defaults, then the JSON file, then ``XCFORGE_*`` variables, then ``overrides``."""
    values: dict = {}
    known = {f.name: f for f in fields(RunConfig)}
    if path:
        try:
            doc = json.loads(Path(path).read_text())
        except OSError as exc:
            raise CliError(EXIT_PARSE, f"{path}: {exc.strerror or exc}") from None
        except json.JSONDecodeError as exc:
            raise CliError(EXIT_PARSE, f"{path}: {exc}") from None
        if not isinstance(doc, dict):
            raise CliError(EXIT_PARSE, f"{path}: config must be a JSON object")
        unknown = sorted(set(doc) - set(known))
        if unknown:
            raise CliError(EXIT_PARSE, f"{path}: unknown config key {unknown[0]!r}")
        values.update(doc)
    env = os.environ if env is None else env
    for name, f in known.items():
        raw = env.get(ENV_PREFIX + name.upper())
        if raw is not None:
            kind = type(RunConfig.__dataclass_fields__[name].default) if name != "operator_weights" else dict
            values[name] = _coerce(name, kind, raw)
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise CliError(EXIT_PARSE, f"bad config: {exc}") from None


# -- helpers ---------------------------------------------------------------------

def _write_json(path: Path, doc) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return path


def _read_json(path) -> object:
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise CliError(EXIT_PARSE, f"{path}: {exc.strerror or exc}") from None
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_PARSE, f"{path}: {exc}") from None


def _load_form(path):
    try:
        return load_form(path)
    except OSError as exc:
        raise CliError(EXIT_PARSE, f"{path}: {exc.strerror or exc}") from None
    except (FormParseError, json.JSONDecodeError) as exc:
        raise CliError(EXIT_PARSE, f"{path}: {exc}") from None


def _bundle(cfg: RunConfig):
    if not cfg.bundle:
        return build_bundle()
    try:
        return load_bundle(cfg.bundle)
    except (BundleError, GridFormatError, GridSpecError) as exc:
        raise CliError(EXIT_PARSE, str(exc)) from None


def _dataset(cfg: RunConfig):
    if not cfg.dataset:
        return evolution_dataset(cfg.synthetic_reactions, cfg.synthetic_systems, cfg.seed, cfg.synthetic_noise)
    try:
        return load_dataset(cfg.dataset)
    except (DatasetError, GridFormatError) as exc:
        raise CliError(EXIT_PARSE, str(exc)) from None


def split_wrmsd(model: EnergyModel, ds, threads: int = 1) -> dict:
    """WRMSD per split; None for empty splits."""
    return {s: (wrmsd(model, ds, s, threads=threads) if ds.split(s) else None) for s in SPLITS}


def _fmt(v) -> str:
    return "-" if v is None or (isinstance(v, float) and not math.isfinite(v)) else f"{v:.6f}"


def summary_table(rows: Sequence[tuple[str, str, Mapping, int | None, float | None]]) -> str:
    """Per-split WRMSD table in kcal/mol; rows are (role, id, {split: value}, violations, R_evlv)."""
    head = f"{'role':<6} {'id':<8} {'train':>12} {'val':>12} {'test':>12} {'n_viol':>6} {'R_evlv':>10}"
    lines = ["WRMSD by split (kcal/mol)", head, "-" * len(head)]
    for role, cid, w, n, r in rows:
        lines.append(f"{role:<6} {cid:<8} {_fmt(w.get('train')):>12} {_fmt(w.get('val')):>12} "
                     f"{_fmt(w.get('test')):>12} {'-' if n is None else n:>6} {_fmt(r):>10}")
    return "\n".join(lines) + "\n"


def _candidate_row(role: str, rec: Mapping) -> tuple:
    w = {"train": rec.get("j_train"), "val": rec.get("j_val"), "test": rec.get("sealed", {}).get("test_wrmsd")}
    return role, rec["id"], w, rec.get("n_violations"), rec.get("r_evlv")


def log_report(records: Sequence[Mapping]) -> str:
    """Seed-versus-best table, running best and dead ends for a search log."""
    cands = [r for r in records if r.get("event") == "candidate"]
    if not cands:
        raise CliError(EXIT_PRECONDITION, "log holds no candidates")
    seed = cands[0]
    best = max(cands, key=lambda r: (r["r_evlv"], -int(r["id"][1:])))
    rows = [_candidate_row("seed", seed)]
    if best["id"] != seed["id"] and best["r_evlv"] > seed["r_evlv"]:
        rows.append(_candidate_row("best", best))
    n_iter = sum(r.get("event") in ("candidate", "skip") and r.get("iteration", 0) > 0 for r in records)
    n_skip = sum(r.get("event") == "skip" for r in records)
    trace = running_best(records)
    text = summary_table(rows)
    text += f"\ncandidates: {len(cands)}  iterations: {n_iter}  skipped: {n_skip}\n"
    text += f"running best R_evlv: {trace[0]:.6f} -> {trace[-1]:.6f}\n"
    return text


# -- commands ----------------------------------------------------------------------

def cmd_gen(spec_path: str | None, cfg: RunConfig) -> dict:
    """Write fixture-bundle grids, or a synthetic reaction dataset when the input has ``"kind": "dataset"``."""
    spec = _read_json(spec_path) if spec_path else {"kind": "bundle"}
    if not isinstance(spec, dict):
        raise CliError(EXIT_PARSE, f"{spec_path}: spec must be a JSON object")
    kind = spec.get("kind", "bundle")
    out = Path(cfg.out)
    try:
        if kind == "bundle":
            bspec = spec.get("bundle") or default_bundle_spec(int(spec.get("n_proxies", 18)))
            written = save_bundle(build_bundle(bspec), out)
            return {"kind": "bundle", "files": len(written), "out": str(out)}
        if kind == "dataset":
            return _gen_dataset(spec, cfg, out)
    except (BundleError, GridSpecError, DatasetError, KeyError, TypeError, ValueError) as exc:
        raise CliError(EXIT_PARSE, f"{spec_path or 'spec'}: {exc}") from None
    raise CliError(EXIT_PARSE, f"{spec_path}: unknown spec kind {kind!r}")


def _gen_dataset(spec: Mapping, cfg: RunConfig, out: Path) -> dict:
    ref_name = spec.get("reference", "baseline")
    if ref_name == "hidden":
        ref = hidden_reference_form(cfg.seed)
    elif ref_name in CANONICAL:
        ref = CANONICAL[ref_name]()
    else:
        ref = form_from_dict(_read_json(ref_name))
    ds = make_dataset(int(spec.get("n_reactions", 50)), int(spec.get("n_systems", 20)), cfg.seed, ref,
                      float(spec.get("noise_kcal", 0.0)), spec.get("resolution", "coarse"),
                      bool(spec.get("splits", True)))
    save_dataset(ds, out)
    info = {"kind": "dataset", "reactions": len(ds.reactions), "systems": len(ds.systems), "out": str(out)}
    if "perturb" in spec:  # a starting form for recovery runs
        start = perturbed_form(ref, float(spec["perturb"]), cfg.seed + 1)
        save_form(start, out / "start_form.json")
        save_form(ref, out / "reference_form.json")
        info["start_form"] = str(out / "start_form.json")
    return info


def cmd_check(form_path: str, cfg: RunConfig) -> tuple[int, Path]:
    form = _load_form(form_path)
    bundle = _bundle(cfg)
    try:
        report = run_all(EnergyModel(form), bundle)
    except (ProtocolError, ArithmeticError) as exc:
        raise CliError(EXIT_PRECONDITION, f"{form_path}: {exc}") from None
    path = Path(cfg.out) / "check_report.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report.to_json())
    return report.n_violations, path


def _best_fit(model: EnergyModel, ds, cfg: RunConfig):
    res = fit(model, ds, cfg.fit_options())
    rng = np.random.default_rng(cfg.seed)
    for _ in range(cfg.fit_restarts):
        start = perturbed_form(model.form, 0.1, int(rng.integers(2**31)))
        other = fit(model.with_form(start), ds, cfg.fit_options())
        if other.train_wrmsd < res.train_wrmsd:
            res = other
    return res


def cmd_fit(form_path: str, dataset_path: str | None, cfg: RunConfig) -> dict:
    form = _load_form(form_path)
    if form.n_trainable == 0:
        raise CliError(EXIT_PRECONDITION, f"{form_path}: every parameter is frozen")
    if dataset_path:
        cfg = RunConfig(**dict(cfg.to_dict(), dataset=dataset_path))
    ds = _dataset(cfg)
    if not ds.split("train"):
        raise CliError(EXIT_PRECONDITION, "dataset has no training reactions")
    model = EnergyModel(form)
    try:
        res = _best_fit(model, ds, cfg)
    except (ProtocolError, ArithmeticError) as exc:
        raise CliError(EXIT_PRECONDITION, f"fit failed: {exc}") from None
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    save_form(res.form, out / "fitted_form.json")
    report = {
        "form": form.label, "converged": res.converged, "reason": res.reason, "iterations": res.iterations,
        "gradient_norm": res.gradient_norm, "loss_history": res.loss_history,
        "wrmsd": split_wrmsd(model.with_form(res.form), ds, cfg.threads),
        "params": [float(v) for v in res.params], "options": asdict(cfg.fit_options()),
        "restarts": cfg.fit_restarts, "seed": cfg.seed,
    }
    _write_json(out / "fit_report.json", report)
    return report


def _proposer(cfg: RunConfig):
    if cfg.proposer == "scripted":
        return ScriptedProposer(cfg.operator_weights or None, cfg.exploit_bias)
    if cfg.proposer.startswith(("http://", "https://")):
        return HttpProposer(cfg.proposer, cfg.proposer_timeout)
    raise CliError(EXIT_PARSE, f"proposer must be 'scripted' or an http(s) URL, got {cfg.proposer!r}")


def cmd_evolve(cfg: RunConfig) -> dict:
    search = cfg.search_config()
    ds = _dataset(cfg)
    bundle = _bundle(cfg)
    proposer = _proposer(cfg)
    try:
        ds.require_splits("train", "val")
    except DatasetError as exc:
        raise CliError(EXIT_PRECONDITION, str(exc)) from None
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "search_log.ndjson"
    res = run_search(search, ds, bundle, proposer, log_path=log_path)
    best = res.best
    save_form(best.form, out / "best_form.json")
    _write_json(out / "run_config.json", cfg.to_dict())
    table = log_report(res.log)
    (out / "summary.txt").write_text(table)
    dead = [d.to_dict() for d in synthesize_dead_ends(res.memory.records, search.dead_end_attempts)]
    _write_json(out / "dead_ends.json", dead)
    return {"best": best.id, "candidates": len(res.candidates), "log": str(log_path), "table": table}


def cmd_report(log_path: str, cfg: RunConfig) -> str:
    try:
        records = read_log(log_path)
    except OSError as exc:
        raise CliError(EXIT_PARSE, f"{log_path}: {exc.strerror or exc}") from None
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_PARSE, f"{log_path}: {exc}") from None
    try:
        text = log_report(records)
    except (KeyError, TypeError) as exc:
        raise CliError(EXIT_PARSE, f"{log_path}: malformed record ({exc})") from None
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.txt").write_text(text)
    return text


# -- argument parsing -----------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliError(EXIT_PARSE, message)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat JSON run configuration")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int)
    common.add_argument("--out", help="output directory")
    p = _Parser(prog="xcforge", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    g = sub.add_parser("gen", parents=[common], help="write fixture grids or a synthetic dataset")
    g.add_argument("spec", nargs="?", help="JSON spec; default is the standard fixture bundle")
    c = sub.add_parser("check", parents=[common], help="constraint report; exit code = violation count")
    c.add_argument("form")
    c.add_argument("--bundle")
    f = sub.add_parser("fit", parents=[common], help="fit trainable parameters on the training split")
    f.add_argument("form")
    f.add_argument("dataset", nargs="?")
    f.add_argument("--restarts", type=int, dest="fit_restarts")
    e = sub.add_parser("evolve", parents=[common], help="run the island search")
    e.add_argument("--budget", type=int)
    e.add_argument("--bundle")
    e.add_argument("--dataset")
    r = sub.add_parser("report", parents=[common], help="summarize a search log")
    r.add_argument("log")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        over = {k: getattr(args, k, None) for k in ("seed", "threads", "out", "bundle", "budget", "fit_restarts")}
        if args.command == "evolve":
            over["dataset"] = args.dataset
        cfg = resolve_config(args.config, overrides=over)
        if args.command == "gen":
            info = cmd_gen(args.spec, cfg)
            print(json.dumps(info, sort_keys=True))
            return EXIT_OK
        if args.command == "check":
            n, path = cmd_check(args.form, cfg)
            print(f"{n} violation(s); report written to {path}")
            return n
        if args.command == "fit":
            rep = cmd_fit(args.form, args.dataset, cfg)
            flag = "" if rep["converged"] else f" (not converged: {rep['reason']})"
            print(f"train WRMSD {rep['wrmsd']['train']:.6g} kcal/mol after {rep['iterations']} iterations{flag}")
            return EXIT_OK
        if args.command == "evolve":
            info = cmd_evolve(cfg)
            print(info["table"], end="")
            return EXIT_OK
        print(cmd_report(args.log, cfg), end="")
        return EXIT_OK
    except CliError as exc:
        print(f"xcforge: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"xcforge: config: {exc}", file=sys.stderr)
        return EXIT_PARSE


if __name__ == "__main__":
    sys.exit(main())
