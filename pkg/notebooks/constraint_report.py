"""Run the four exact-constraint checks on every canonical form and fixture."""

from xcforge.constraints import FIXTURE_FORMS, build_bundle, run_all
from xcforge.xcforms import CANONICAL, EnergyModel

bundle = build_bundle()
forms = {**CANONICAL, **FIXTURE_FORMS}
print(f"{'form':<14} {'violations':>10}  failed checks")
for name, make in forms.items():
    report = run_all(EnergyModel(make()), bundle)
    print(f"{name:<14} {report.n_violations:>10}  {', '.join(report.failed()) or '-'}")
