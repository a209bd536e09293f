"""A short island search with the scripted proposer on a reduced fixture bundle."""

import sys

from xcforge.constraints import build_bundle, default_bundle_spec
from xcforge.evosearch import ScriptedProposer, SearchConfig, run_search, running_best
from xcforge.fitopt import evolution_dataset
from xcforge.xcforms import form_to_dict

budget = int(sys.argv[1]) if len(sys.argv) > 1 else 24
bundle = build_bundle(default_bundle_spec(n_proxies=4))
ds = evolution_dataset(24, 10, seed=0)
cfg = SearchConfig(budget=budget, fit_max_iter=15, migration_period=8, seed=0)
res = run_search(cfg, ds, bundle, ScriptedProposer(),
                 progress=lambda it, c: print(f"{c.id} island {c.island} R_evlv {c.r_evlv:.3f} via {c.operator}"))
best = res.best
print(f"\nbest {best.id}: j_val {best.j_val:.4f} kcal/mol, violations {best.n_violations}, R_evlv {best.r_evlv:.3f}")
print("running best:", " ".join(f"{v:.3f}" for v in running_best(res.log)[::max(1, budget // 8)]))
print(f"best form has {len(form_to_dict(best.form)['params'])} parameters")
