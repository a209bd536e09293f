"""Generate reactions from the baseline, perturb its parameters by 10%, and fit them back."""

import numpy as np

from xcforge.fitopt import fit, recovery_problem
from xcforge.xcforms import EnergyModel, canonical_baseline

truth = canonical_baseline()
ds, start = recovery_problem(truth, rel=0.1)
res = fit(EnergyModel(start), ds, callback=lambda i, f: print(f"iter {i:4d}  WRMSD {f:.3e}") if i % 20 == 0 else None)
print(f"stopped: {res.reason} after {res.iterations} iterations, train WRMSD {res.train_wrmsd:.2e} kcal/mol")
print(f"max parameter error {np.max(np.abs(res.params - truth.params)):.2e}")
