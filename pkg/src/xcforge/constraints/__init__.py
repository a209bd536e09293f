"""Physical-constraint checks with pass/fail thresholds and violation counting."""

from .checks import (CHECK_NAMES, HARTREE_TO_KCAL, CheckResult, ConstraintReport, ProtocolError, ProxyPair,
                     check_grid_convergence, check_scaling, check_spin_symmetry, check_ueg_limit, run_all)
from .fixtures import (FIXTURE_FORMS, BundleError, FixtureBundle, build_bundle, default_bundle_spec,
                       load_bundle, save_bundle)

__all__ = [
    "CHECK_NAMES", "HARTREE_TO_KCAL", "BundleError", "CheckResult", "ConstraintReport", "FIXTURE_FORMS",
    "FixtureBundle", "ProtocolError", "ProxyPair", "build_bundle", "check_grid_convergence",
    "check_scaling", "check_spin_symmetry", "check_ueg_limit", "default_bundle_spec", "load_bundle",
    "run_all", "save_bundle",
]
