"""JSON documents for functional forms."""

from __future__ import annotations

import json
from pathlib import Path

from .expr import ExprError, from_data, to_data
from .forms import FormError, FunctionalForm

FORMAT_VERSION = 1


class FormParseError(ValueError):
    def __init__(self, location: str, message: str):
        self.location = location
        super().__init__(f"{location}: {message}")


def form_to_dict(form: FunctionalForm) -> dict:
    return {
        "format": FORMAT_VERSION,
        "label": form.label,
        "channels": {k: to_data(getattr(form, k)) for k in ("gx", "gss", "gos")},
        "params": [float(p) for p in form.params],
        "param_names": list(form.param_names),
        "trainable_mask": [bool(m) for m in form.trainable_mask],
        "power_templates": {k: [list(m) for m in v] for k, v in sorted(form.power_templates.items())},
        "constants_override": dict(sorted(form.constants_override.items())),
    }


def serialize_form(form: FunctionalForm) -> str:
    # json writes floats with repr(), which round-trips binary64 exactly
    return json.dumps(form_to_dict(form), indent=1, sort_keys=True) + "\n"


def _need(doc: dict, key: str, kind, loc: str):
    if key not in doc:
        raise FormParseError(f"{loc}/{key}", "missing field")
    val = doc[key]
    if not isinstance(val, kind):
        raise FormParseError(f"{loc}/{key}", f"expected {getattr(kind, '__name__', kind)}")
    return val


def form_from_dict(doc) -> FunctionalForm:
    if not isinstance(doc, dict):
        raise FormParseError("/", "document must be an object")
    channels = _need(doc, "channels", dict, "")
    trees = {}
    for k in ("gx", "gss", "gos"):
        rec = _need(channels, k, dict, "/channels")
        try:
            trees[k] = from_data(rec, f"/channels/{k}")
        except ExprError as exc:
            raise FormParseError(f"/channels/{k}", str(exc)) from None
    params = _need(doc, "params", list, "")
    for i, p in enumerate(params):
        if isinstance(p, bool) or not isinstance(p, (int, float)):
            raise FormParseError(f"/params/{i}", "expected a number")
    mask = _need(doc, "trainable_mask", list, "")
    for i, m in enumerate(mask):
        if not isinstance(m, bool):
            raise FormParseError(f"/trainable_mask/{i}", "expected a boolean")
    names = doc.get("param_names", [f"p.{i}" for i in range(len(params))])
    if not isinstance(names, list) or not all(isinstance(n, str) for n in names):
        raise FormParseError("/param_names", "expected a list of strings")
    templates = doc.get("power_templates", {})
    if not isinstance(templates, dict):
        raise FormParseError("/power_templates", "expected an object")
    override = doc.get("constants_override", {})
    if not isinstance(override, dict):
        raise FormParseError("/constants_override", "expected an object")
    try:
        return FunctionalForm(trees["gx"], trees["gss"], trees["gos"], params, mask, tuple(names),
                              {k: [tuple(m) for m in v] for k, v in templates.items()},
                              str(doc.get("label", "")), {k: float(v) for k, v in override.items()})
    except (FormError, TypeError, ValueError) as exc:
        raise FormParseError("/", str(exc)) from None


def parse_form(text: str) -> FunctionalForm:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormParseError(f"line {exc.lineno} column {exc.colno}", exc.msg) from None
    return form_from_dict(doc)


def save_form(form: FunctionalForm, path) -> None:
    Path(path).write_text(serialize_form(form))


def load_form(path) -> FunctionalForm:
    return parse_form(Path(path).read_text())
