"""Enhancement-factor expressions, canonical forms and energy assembly."""

from .energy import (EnergyEvalError, EnergyModel, energy_channels, energy_density, enhancement_factors,
                     lda_references, prepare, xc_energy, xc_energy_and_grad, xc_energy_components,
                     xc_energy_extended)
from .expr import ExprError, ExprEvalError, Node, evaluate, evaluate_dual
from .forms import (CANONICAL, NEUTRAL_DEN, FormError, FunctionalForm, canonical_baseline,
                    canonical_safs26a, canonical_safs26b, ueg_exchange_shift)
from .lda import attenuation, lda_c_pw, lda_c_pw_spin_decomposed, lda_x_slater_pol, rsh_attenuation
from .serialize import FormParseError, form_from_dict, form_to_dict, load_form, parse_form, save_form, serialize_form

__all__ = [
    "CANONICAL", "NEUTRAL_DEN", "EnergyEvalError", "EnergyModel", "ExprError", "ExprEvalError",
    "FormError", "FormParseError", "FunctionalForm", "Node", "attenuation", "canonical_baseline",
    "canonical_safs26a", "canonical_safs26b", "energy_channels", "energy_density", "enhancement_factors",
    "evaluate", "evaluate_dual", "form_from_dict", "form_to_dict", "lda_c_pw", "lda_c_pw_spin_decomposed",
    "lda_references", "lda_x_slater_pol", "load_form", "parse_form", "prepare", "rsh_attenuation",
    "save_form", "serialize_form", "ueg_exchange_shift", "xc_energy", "xc_energy_and_grad", "xc_energy_extended",
    "xc_energy_components",
]
