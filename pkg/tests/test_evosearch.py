import json
import math
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from xcforge.constraints import build_bundle, default_bundle_spec
from xcforge.evosearch import (EXPLOIT, EXPLORE, FALLBACK, TASK_TEXT, ConfigError, HttpProposer, Island,
                               MemoryRecord, MemoryStore, OperatorInapplicable, ProposerRequest, ProposerWireError,
                               ScriptedProposer, SearchConfig, bounded_descriptor, freeze_graft, fuse, fusion,
                               is_freeze_graft, migrate, param_perturbation, penalized, rational_wrap_op, read_log,
                               replay, run_search, running_best, score, select_parent, sigmoid_gate,
                               synthesize_dead_ends, write_log, zero_init_graft)
from xcforge.fitopt import hidden_reference_form, make_dataset, wrmsd
from xcforge.xcforms import EnergyModel, canonical_baseline, canonical_safs26a, canonical_safs26b, form_to_dict


@pytest.fixture(scope="module")
def search_bundle():
    return build_bundle(default_bundle_spec(n_proxies=2))


@pytest.fixture(scope="module")
def search_ds():
    return make_dataset(16, 8, seed=5, reference_form=hidden_reference_form(5), noise_kcal=0.3)


@pytest.fixture(scope="module")
def small_run(search_ds, search_bundle, tmp_path_factory):
    cfg = SearchConfig(budget=16, fit_max_iter=10, migration_period=5, seed=1)
    path = tmp_path_factory.mktemp("run") / "log.ndjson"
    return cfg, run_search(cfg, search_ds, search_bundle, ScriptedProposer(), log_path=path), path


# -- scoring -----------------------------------------------------------------------

def test_scoring_examples():
    assert score(3.45) == 1.0
    assert score(4.02) == pytest.approx(0.8582, abs=1e-4)
    assert penalized(1.0, 4) == pytest.approx(0.6561, abs=1e-15)
    with pytest.raises(ValueError):
        score(0.0)
    with pytest.raises(ValueError):
        penalized(1.0, -1)


# -- islands -----------------------------------------------------------------------

def _island(pop, archive, cap=10):
    isl = Island(0, cap)
    isl.population = list(pop)
    isl.archive = list(archive)
    return isl


def test_fallback_when_archive_empty():
    isl = _island(["a", "b"], [])
    rng = np.random.default_rng(0)
    for _ in range(200):
        cid, mode = select_parent(isl, rng, 0.0)
        assert mode == FALLBACK and cid in ("a", "b")


def test_single_candidate_always_selected():
    isl = _island(["only"], ["only"])
    rng = np.random.default_rng(0)
    assert {select_parent(isl, rng)[0] for _ in range(100)} == {"only"}


def test_exploit_fraction():
    isl = _island([f"c{i}" for i in range(30)], [f"c{i}" for i in range(10)])
    rng = np.random.default_rng(42)
    modes = [select_parent(isl, rng, 0.8)[1] for _ in range(100_000)]
    frac = modes.count(EXPLOIT) / len(modes)
    assert 0.19 <= frac <= 0.21
    assert set(modes) == {EXPLOIT, EXPLORE}


@given(st.lists(st.floats(0.0, 2.0), min_size=1, max_size=40), st.integers(1, 10))
def test_archive_holds_top_k(values, cap):
    isl = Island(0, cap)
    scores, order = {}, {}
    for i, v in enumerate(values):
        cid = f"c{i}"
        scores[cid], order[cid] = v, i
        isl.add(cid, scores, order)
        expect = sorted(scores, key=lambda c: (-scores[c], order[c]))[:cap]
        assert isl.archive == expect
    assert len(isl.population) == len(values)


def test_ring_migration_count_one():
    scores = {f"i{k}_{j}": float(10 * k + j) for k in range(4) for j in range(3)}
    order = {c: n for n, c in enumerate(scores)}
    islands = []
    for k in range(4):
        isl = Island(k, 10)
        for j in range(3):
            isl.add(f"i{k}_{j}", scores, order)
        islands.append(isl)
    moves = migrate(islands, 1, scores, order)
    assert len(moves) == 4
    for k in range(4):
        src = (k - 1) % 4
        assert f"i{src}_2" in islands[k].population


def test_worse_migrant_leaves_full_archive_unchanged():
    scores = {f"a{j}": 1.0 + j for j in range(3)}
    scores["b0"] = 0.1
    order = {c: n for n, c in enumerate(scores)}
    a, b = Island(0, 3), Island(1, 3)
    for j in range(3):
        a.add(f"a{j}", scores, order)
    b.add("b0", scores, order)
    before = list(a.archive)
    migrate([b, a], 1, scores, order)
    assert a.archive == before and a.population[-1] == "b0"


def test_no_migration_before_period(search_ds, search_bundle):
    cfg = SearchConfig(budget=4, fit_max_iter=3, migration_period=25, seed=3)
    res = run_search(cfg, search_ds, search_bundle, ScriptedProposer())
    assert not [r for r in res.log if r["event"] == "migration"]


# -- memory and dead ends -------------------------------------------------------------

def _rec(i, tag, delta=-0.1, outcomes=None, island=0):
    return MemoryRecord(i, island, f"c{i}", ("c0",), "plan", "summary", delta,
                        outcomes if outcomes is not None else {"ueg_limit": False, "spin_symmetry": True}, (tag,))


def test_dead_end_rules():
    five = [_rec(i, "t") for i in range(1, 6)]
    out = synthesize_dead_ends(five)
    assert len(out) == 1 and out[0].tag == "t" and out[0].attempts == 5 and out[0].cause == "ueg_limit"
    assert synthesize_dead_ends(five[:4]) == []
    improved = five[:4] + [_rec(5, "t", delta=0.2)]
    assert synthesize_dead_ends(improved) == []
    mixed = five[:4] + [_rec(5, "t", outcomes={"scaling": False})]
    assert synthesize_dead_ends(mixed) == []


def test_memory_append_only():
    store = MemoryStore([_rec(1, "a"), _rec(2, "a")])
    with pytest.raises(ValueError):
        store.append(_rec(2, "b"))
    with pytest.raises(ValueError):
        store.append(MemoryRecord(5, 0, "c1", (), "", "", 0.0))
    with pytest.raises(ValueError):
        store.append(_rec(1, "b", island=1))
    store.append(MemoryRecord(1, 1, "d1", ("c0",), "", "", 0.0))
    assert len(store) == 3
    assert MemoryRecord.from_dict(store.records[0].to_dict()) == store.records[0]


def test_lineage_follows_first_parent():
    recs = [MemoryRecord(i, 0, f"c{i}", (f"c{i - 1}",), "", "", 0.0) for i in range(1, 8)]
    store = MemoryStore(recs)
    assert [r.candidate for r in store.lineage("c7", 3)] == ["c7", "c6", "c5"]


# -- operators ------------------------------------------------------------------------

NEUTRAL_OPS = [zero_init_graft, bounded_descriptor, sigmoid_gate, rational_wrap_op, freeze_graft]


@pytest.mark.parametrize("op", NEUTRAL_OPS, ids=lambda f: f.__name__)
@pytest.mark.parametrize("parent_fn", [canonical_baseline, canonical_safs26a, canonical_safs26b],
                         ids=["baseline", "safs26a", "safs26b"])
def test_neutral_children(op, parent_fn, search_ds):
    parent = parent_fn()
    base = wrmsd(EnergyModel(parent), search_ds, "val")
    for seed in range(6):
        prop = op([parent], np.random.default_rng(seed))
        assert prop.form.n_params > parent.n_params
        assert abs(wrmsd(EnergyModel(prop.form), search_ds, "val") - base) <= 1e-12


def test_fusion_neutral_when_donor_exchange_is_recipients(search_ds):
    b = canonical_safs26a()
    a = next(p for p in (zero_init_graft([b], np.random.default_rng(s)) for s in range(100)) if p.channel == "gx")
    child = fuse(a.form, b)
    assert child.n_params == a.form.n_params
    base = wrmsd(EnergyModel(b), search_ds, "val")
    assert abs(wrmsd(EnergyModel(child), search_ds, "val") - base) <= 1e-12


def test_fusion_needs_two_parents():
    with pytest.raises(OperatorInapplicable):
        fusion([canonical_baseline()], np.random.default_rng(0))


def test_freeze_graft_mask_arithmetic():
    parent = canonical_safs26a()
    prop = freeze_graft([parent], np.random.default_rng(0))
    assert parent.n_params == 50 + (parent.n_params - 50)
    assert prop.form.n_trainable == 2
    assert is_freeze_graft(parent, prop.form)
    assert not is_freeze_graft(parent, zero_init_graft([parent], np.random.default_rng(0)).form)


def test_param_perturbation_requires_trainables():
    p = canonical_baseline()
    frozen = p.replace(trainable_mask=np.zeros(p.n_params, dtype=bool))
    with pytest.raises(OperatorInapplicable):
        param_perturbation([frozen], np.random.default_rng(0))


def test_scripted_proposer_resamples_fusion_without_donor():
    weights = {k: 0.0 for k in ("zero_init_graft", "bounded_descriptor", "sigmoid_gate", "rational_wrap",
                                "param_perturbation")}
    prop = ScriptedProposer(weights={**weights, "fusion": 1.0, "freeze_graft": 1.0})
    req = ProposerRequest(TASK_TEXT, (("c0", canonical_baseline()),))
    responses = [prop.propose(req, np.random.default_rng(s)) for s in range(20)]
    assert all(r.operator == "freeze_graft" for r in responses)
    assert any(any("fusion inapplicable" in n for n in r.notes) for r in responses)


def test_scripted_proposer_avoids_dead_ends():
    from xcforge.evosearch import DeadEnd
    prop = ScriptedProposer(weights={k: (1.0 if k == "param_perturbation" else 0.0) for k in
                                     ("zero_init_graft", "bounded_descriptor", "sigmoid_gate", "rational_wrap",
                                      "freeze_graft", "fusion", "param_perturbation")}, max_attempts=3)
    req = ProposerRequest(TASK_TEXT, (("c0", canonical_baseline()),),
                          dead_ends=(DeadEnd("param_perturbation", 5, "ueg_limit"),))
    with pytest.raises(ProposerWireError):
        prop.propose(req, np.random.default_rng(0))


# -- external proposer -------------------------------------------------------------------

class _Handler(BaseHTTPRequestHandler):
    seen: list = []

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        _Handler.seen.append(body)
        parent = body["parent_forms"][0]
        parent.pop("id")
        out = json.dumps({"plan_text": "echo the parent", "form_document": parent}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(out)))
        self.end_headers()
        self.wfile.write(out)

    def log_message(self, *args):
        pass


def test_http_proposer_round_trip():
    server = HTTPServer(("127.0.0.1", 0), _Handler)
    th = threading.Thread(target=server.serve_forever, daemon=True)
    th.start()
    try:
        prop = HttpProposer(f"http://127.0.0.1:{server.server_port}/", timeout=5)
        form = canonical_baseline()
        resp = prop.propose(ProposerRequest(TASK_TEXT, (("c7", form),)))
        assert resp.form.equals(form) and resp.plan_text == "echo the parent" and resp.parents == ("c7",)
        wire = _Handler.seen[-1]
        assert set(wire) == {"task_text", "parent_forms", "lineage_records", "dead_ends"}
        assert wire["task_text"] == TASK_TEXT
    finally:
        server.shutdown()


def test_unreachable_proposer_skips(search_ds, search_bundle):
    prop = HttpProposer("http://127.0.0.1:9/", timeout=0.5, retries=0)
    res = run_search(SearchConfig(budget=3, fit_max_iter=3), search_ds, search_bundle, prop)
    assert [r["event"] for r in res.log].count("skip") == 3
    assert len(res.candidates) == 4


# -- search loop --------------------------------------------------------------------------

def test_budget_zero_only_seeds(search_ds, search_bundle):
    res = run_search(SearchConfig(budget=0, fit_max_iter=3), search_ds, search_bundle, ScriptedProposer())
    assert len(res.log) == 4 and all(r["iteration"] == 0 for r in res.log)


def test_config_validation():
    for bad in (dict(islands=0), dict(budget=-1), dict(explore_rate=1.5), dict(penalty=0.0)):
        with pytest.raises(ConfigError):
            SearchConfig(**bad)
    with pytest.raises(ConfigError):
        SearchConfig.from_dict({"bogus": 1})


def test_stored_scores_identities(small_run):
    _, res, _ = small_run
    for rec in res.log:
        if rec["event"] != "candidate" or rec["failed"]:
            continue
        assert rec["r"] == 3.45 / rec["j_val"]
        assert rec["r_evlv"] == rec["r"] * 0.9 ** rec["n_violations"]
        assert rec["n_violations"] == rec["report"]["n_violations"]


def test_running_best_non_decreasing(small_run):
    _, res, _ = small_run
    best = running_best(res.log)
    assert all(b >= a for a, b in zip(best, best[1:]))
    seed_val = res.candidates[res.seed_id].j_val
    assert min(c.j_val for c in res.candidates.values()) <= seed_val


def test_replay_reproduces_selection_and_islands(small_run):
    cfg, res, path = small_run
    records = read_log(path)
    assert records == json.loads(json.dumps(res.log))
    rep = replay(records, cfg)
    assert rep.selections == res.selections()
    assert [i.state() for i in rep.islands] == [i.state() for i in res.islands]


def test_sealed_scores_do_not_affect_selection(small_run):
    cfg, res, path = small_run
    records = read_log(path)
    sealed = [r["sealed"]["test_wrmsd"] for r in records if r["event"] == "candidate"]
    perm = np.random.default_rng(0).permutation(len(sealed))
    shuffled = json.loads(json.dumps(records))
    k = 0
    for r in shuffled:
        if r["event"] == "candidate":
            r["sealed"]["test_wrmsd"] = sealed[perm[k]]
            k += 1
    assert replay(shuffled, cfg).selections == replay(records, cfg).selections == res.selections()


def test_run_is_byte_reproducible(small_run, search_ds, search_bundle, tmp_path):
    cfg, _, path = small_run
    again = tmp_path / "again.ndjson"
    run_search(cfg, search_ds, search_bundle, ScriptedProposer(), log_path=again)
    assert again.read_bytes() == path.read_bytes()
    rewritten = tmp_path / "rewritten.ndjson"
    write_log(read_log(path), rewritten)
    assert rewritten.read_bytes() == path.read_bytes()


def test_candidate_documents_reparse(small_run):
    from xcforge.evosearch import Candidate
    _, res, _ = small_run
    for c in res.candidates.values():
        back = Candidate.from_record(json.loads(json.dumps(c.to_record())))
        assert back.form.equals(c.form) and back.r_evlv == c.r_evlv
        assert form_to_dict(back.form) == form_to_dict(c.form)


def test_failed_fit_scores_zero(search_ds, search_bundle):
    from xcforge.evosearch import evaluate_candidate
    from xcforge.xcforms.expr import add, div, param
    base = canonical_baseline()
    # an exchange term that overflows to inf as soon as the fit moves p away from 0
    names = base.param_names + ("x.blow",)
    bad = base.replace(gx=add(base.gx, div(param(base.n_params), param(base.n_params))),
                       params=np.append(base.params, 0.0), trainable_mask=np.append(base.trainable_mask, True),
                       param_names=names)
    ev = evaluate_candidate(bad, search_ds, search_bundle, SearchConfig(fit_max_iter=3))
    assert ev.failed and ev.r == 0.0 and ev.r_evlv == 0.0 and not math.isfinite(ev.j_val)
