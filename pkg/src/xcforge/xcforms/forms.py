"""Functional forms: three enhancement-factor trees plus parameter bookkeeping."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ..descriptors import DEFAULT_CONSTANTS, GRID_FEATURES, descriptor_names
from .expr import (Node, add, const, desc, descriptors_used, div, ipow, mul, param,
                   params_used, sigmoid, softplus, tanh, to_data)

CHANNEL_TREES = {"gx": "x", "gss": "ss", "gos": "os"}

# softplus(NEUTRAL_DEN) ~ 4e-18, so a rational wrap at this value is the identity
# to double precision.  softplus(0) = ln 2 is not neutral.
NEUTRAL_DEN = -40.0

# Published wB97M-V coefficients keyed by (w power, u power).
WB97MV_X = {(1, 0): 1.007, (0, 1): 0.259}
WB97MV_CSS = {(0, 0): 0.443, (1, 0): -4.535, (2, 0): -3.39, (4, 3): 4.278, (0, 4): -1.437}
WB97MV_COS = {(0, 0): 1.0, (1, 0): 1.358, (2, 0): 2.924, (2, 1): -8.812, (6, 0): -1.39, (6, 1): 9.142}

# Extra opposite-spin monomials (w, u, f_zeta powers) of the 11-term polynomial.
SAFS26B_COS_EXTRA = ((0, 0, 1), (0, 0, 2), (1, 0, 1), (0, 1, 1), (1, 0, 2))

# Frozen values the published structure leaves unspecified.  Placeholders only:
# chosen small enough that the UEG exchange shift stays well inside tolerance.
SAFS26B_PLACEHOLDERS = {
    "x.c_wv": -0.1, "x.c_uv": 0.05,
    "x.c_sig": 0.002, "x.a_sig": 1.0, "x.b_sig": 1.0,
    "ss.c_sig": 0.05, "ss.a_sig": 1.0,
    "ss_corr.gamma": 0.1, "os_corr.gamma": 0.1,
}


class FormError(ValueError):
    """Functional form violates its structural invariants."""


@dataclass(frozen=True, eq=False)
class FunctionalForm:
    gx: Node
    gss: Node
    gos: Node
    params: np.ndarray
    trainable_mask: np.ndarray
    param_names: tuple[str, ...]
    power_templates: Mapping[str, tuple[tuple[int, ...], ...]] = field(default_factory=dict)
    label: str = ""
    constants_override: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        p = np.array(self.params, dtype=float)
        m = np.array(self.trainable_mask, dtype=bool)
        p.setflags(write=False)
        m.setflags(write=False)
        object.__setattr__(self, "params", p)
        object.__setattr__(self, "trainable_mask", m)
        object.__setattr__(self, "param_names", tuple(self.param_names))
        object.__setattr__(self, "power_templates",
                           {k: tuple(tuple(int(e) for e in mono) for mono in v)
                            for k, v in dict(self.power_templates).items()})
        object.__setattr__(self, "constants_override", dict(self.constants_override))
        self.validate()

    def validate(self) -> None:
        n = self.params.shape[0]
        if self.params.ndim != 1 or self.trainable_mask.shape != (n,):
            raise FormError("params and trainable_mask must be 1-d of equal length")
        if len(self.param_names) != n:
            raise FormError("param_names length differs from params")
        if not np.all(np.isfinite(self.params)):
            raise FormError("params must be finite")
        for tree_name, channel in CHANNEL_TREES.items():
            tree = getattr(self, tree_name)
            bad = [i for i in params_used(tree) if i >= n]
            if bad:
                raise FormError(f"{tree_name}: param index {bad[0]} out of range (n={n})")
            allowed = descriptor_names(channel)
            unknown = [d for d in descriptors_used(tree) if d not in allowed and d not in GRID_FEATURES]
            if unknown:
                raise FormError(f"{tree_name}: unknown descriptor {unknown[0]!r}")
        unknown = set(self.constants_override) - set(DEFAULT_CONSTANTS.__dataclass_fields__)
        if unknown:
            raise FormError(f"unknown constant override {sorted(unknown)[0]!r}")

    @property
    def n_params(self) -> int:
        return self.params.shape[0]

    @property
    def n_trainable(self) -> int:
        return int(self.trainable_mask.sum())

    @property
    def trainable_indices(self) -> np.ndarray:
        return np.flatnonzero(self.trainable_mask)

    def trainable_vector(self) -> np.ndarray:
        return self.params[self.trainable_mask].copy()

    def with_trainable(self, values) -> "FunctionalForm":
        p = self.params.copy()
        p[self.trainable_mask] = np.asarray(values, dtype=float)
        return self.replace(params=p)

    def with_params(self, params) -> "FunctionalForm":
        return self.replace(params=np.asarray(params, dtype=float))

    def replace(self, **changes) -> "FunctionalForm":
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d.update(changes)
        return FunctionalForm(**d)

    def group_of(self, i: int) -> str:
        return self.param_names[i].split(".", 1)[0]

    def trainable_split(self) -> dict[str, int]:
        """Trainable counts per parameter group (the name prefix before '.')."""
        out: dict[str, int] = {}
        for i in self.trainable_indices:
            g = self.group_of(int(i))
            out[g] = out.get(g, 0) + 1
        return out

    def param_index(self, name: str) -> int:
        return self.param_names.index(name)

    def constants(self):
        return DEFAULT_CONSTANTS.replace(**self.constants_override) if self.constants_override else DEFAULT_CONSTANTS

    def structure(self) -> tuple:
        """Hashable structural fingerprint (trees, names, mask, templates)."""
        import json
        return (json.dumps([to_data(self.gx), to_data(self.gss), to_data(self.gos)], sort_keys=True),
                self.param_names, tuple(self.trainable_mask.tolist()),
                tuple(sorted(self.power_templates.items())), self.label,
                tuple(sorted(self.constants_override.items())))

    def equals(self, other: "FunctionalForm") -> bool:
        return self.structure() == other.structure() and np.array_equal(self.params, other.params)


class ParamBook:
    """Accumulates named parameters while trees are being built."""

    def __init__(self):
        self.values: list[float] = []
        self.mask: list[bool] = []
        self.names: list[str] = []

    def new(self, name: str, value: float, trainable: bool = True) -> Node:
        if name in self.names:
            raise FormError(f"duplicate parameter name {name!r}")
        self.values.append(float(value))
        self.mask.append(bool(trainable))
        self.names.append(name)
        return param(len(self.values) - 1)

    def build(self, gx, gss, gos, templates, label) -> FunctionalForm:
        return FunctionalForm(gx, gss, gos, np.array(self.values), np.array(self.mask, dtype=bool),
                              tuple(self.names), templates, label)


def monomial(powers: Sequence[int], names: Sequence[str] = ("w", "u", "fz"), square_odd: bool = False) -> Node:
    """Product of descriptor powers; ``square_odd`` doubles odd powers (sign-definite basis)."""
    factors = []
    for name, k in zip(names, powers):
        if square_odd and k % 2 == 1 and name == "w":
            k *= 2
        if k == 1:
            factors.append(desc(name))
        elif k > 1:
            factors.append(ipow(desc(name), k))
    return mul(*factors) if factors else const(1.0)


def _tag(powers: Sequence[int]) -> str:
    return "".join(str(k) for k in powers)


def poly(book: ParamBook, group: str, coeffs: Mapping[tuple, float], trainable=True,
         names: Sequence[str] = ("w", "u", "fz")) -> Node:
    """Sum of c_k * monomial_k with one new parameter per monomial."""
    terms = []
    for powers, value in coeffs.items():
        tr = trainable(powers) if callable(trainable) else trainable
        p = book.new(f"{group}.c{_tag(powers)}", value, tr)
        mono = monomial(powers, names)
        terms.append(p if mono.kind == "const" else mul(p, mono))
    return add(*terms)


def rational_wrap(book: ParamBook, group: str, numerator: Node, basis: Sequence[tuple[str, Node]],
                  d_init: float = NEUTRAL_DEN, trainable: bool = True) -> Node:
    """N / (1 + sum softplus(d_i) phi_i).

    Every basis function must be non-negative; then the denominator is >= 1
    for any parameter vector.
    """
    terms = [mul(softplus(book.new(f"{group}.d_{tag}", d_init, trainable)), phi) for tag, phi in basis]
    return div(numerator, add(const(1.0), *terms))


def _x_poly(book: ParamBook, c_x0: float, trainable: bool = True) -> Node:
    return add(const(c_x0), poly(book, "x", WB97MV_X, trainable))


def canonical_baseline(constants=DEFAULT_CONSTANTS) -> FunctionalForm:
    """wB97M-V semi-local enhancement factors; 2 + 5 + 5 trainable."""
    book = ParamBook()
    gx = _x_poly(book, constants.c_x0)
    gss = poly(book, "ss", WB97MV_CSS)
    gos = poly(book, "os", WB97MV_COS, trainable=lambda pw: pw != (0, 0))
    templates = {"x": tuple(WB97MV_X), "ss": tuple(WB97MV_CSS), "os": tuple(WB97MV_COS)}
    return book.build(gx, gss, gos, templates, "wB97M-V")


_SAFS26A_EXTRA = ("v_st", "z", "x")


def _safs26a_corr(book: ParamBook, ch: str, coeffs: Mapping[tuple, float]) -> Node:
    num = [poly(book, f"{ch}_num", coeffs)]
    v, z, x = (desc(n) for n in _SAFS26A_EXTRA)
    num.append(mul(book.new(f"{ch}_num.cv0", 0.0), v))
    num.append(mul(book.new(f"{ch}_num.cv1", 0.0), ipow(v, 2)))
    num.append(tanh(add(mul(book.new(f"{ch}_num.cz0", 0.0), z),
                        mul(book.new(f"{ch}_num.cz1", 0.0), ipow(z, 2)))))
    num.append(mul(book.new(f"{ch}_num.cx0", 0.0), x))
    num.append(mul(book.new(f"{ch}_num.cx1", 0.0), ipow(x, 2)))
    basis = [(f"p{_tag(pw)}", monomial(pw, square_odd=True)) for pw in coeffs]
    for name, node in (("v", v), ("z", z), ("x", x)):
        basis.append((f"{name}1", node))
        basis.append((f"{name}2", ipow(node, 2)))
    return rational_wrap(book, f"{ch}_den", add(*num), basis)


def canonical_safs26a(constants=DEFAULT_CONSTANTS) -> FunctionalForm:
    """Bounded-rational correlation with spin-cross descriptors; 4/11/11/12/12 trainable.

    Defaults reproduce the baseline exactly: new numerator terms start at zero
    and denominator coefficients at :data:`NEUTRAL_DEN`.
    """
    book = ParamBook()
    gx = add(_x_poly(book, constants.c_x0),
             mul(book.new("x.cv0", 0.0), desc("v_st")),
             mul(book.new("x.cv1", 0.0), ipow(desc("v_st"), 2)))
    gss = _safs26a_corr(book, "ss", WB97MV_CSS)
    gos = _safs26a_corr(book, "os", WB97MV_COS)
    templates = {"x": tuple(WB97MV_X), "ss": tuple(WB97MV_CSS), "os": tuple(WB97MV_COS)}
    return book.build(gx, gss, gos, templates, "SAFS26-a")


def canonical_safs26b(constants=DEFAULT_CONSTANTS, placeholders: Mapping[str, float] | None = None) -> FunctionalForm:
    """Sigmoid-gated exchange, r_s/v/zeta-corrected correlation; 19 trainable.

    Frozen values the published structure does not fix are taken from
    :data:`SAFS26B_PLACEHOLDERS` (override via ``placeholders``).
    """
    ph = dict(SAFS26B_PLACEHOLDERS)
    ph.update(placeholders or {})
    book = ParamBook()
    k_c = constants.k_c
    w, u, va, s = desc("w"), desc("u"), desc("v_alpha"), desc("s")

    p_x = add(_x_poly(book, constants.c_x0, trainable=False),
              mul(book.new("x.c_wv", ph["x.c_wv"], False), w, va),
              mul(book.new("x.c_uv", ph["x.c_uv"], False), u, va))
    gate_x = sigmoid(mul(book.new("x.a_sig", ph["x.a_sig"], False),
                         add(ipow(s, 2), mul(const(-1.0), book.new("x.b_sig", ph["x.b_sig"], False)))))
    gx = mul(p_x, add(const(1.0), mul(book.new("x.c_sig", ph["x.c_sig"], False), gate_x)))

    p_css = poly(book, "ss", WB97MV_CSS, trainable=False)
    c_sig_ss = book.new("ss.c_sig", ph["ss.c_sig"], False)
    gate_ss = sigmoid(mul(book.new("ss.a_sig", ph["ss.a_sig"], False), add(desc("t"), const(-0.5 * k_c))))
    inner = add(mul(p_css, add(const(1.0), mul(c_sig_ss, gate_ss))),
                mul(book.new("ss_add.c1", 0.0), u, w),
                mul(book.new("ss_add.c2", 0.0), ipow(u, 2), ipow(w, 2)))
    rs = desc("rs")
    corr_ss = div(add(mul(book.new("ss_corr.beta", 0.0), rs),
                      mul(book.new("ss_corr.cv", 0.0), rs, va),
                      mul(book.new("ss_corr.czeta", 0.0), desc("zeta_spin"))),
                  add(const(1.0), mul(book.new("ss_corr.gamma", ph["ss_corr.gamma"], False), ipow(rs, 2))))
    gss = mul(inner, add(const(1.0), corr_ss))

    cos_coeffs = {(a, b, 0): c for (a, b), c in WB97MV_COS.items()}
    cos_coeffs.update({pw: 0.0 for pw in SAFS26B_COS_EXTRA})
    p_cos = poly(book, "os_poly", cos_coeffs)
    corr_os = div(add(book.new("os_corr.beta", 0.0),
                      mul(book.new("os_corr.cv", 0.0), desc("v_alpha")),
                      mul(book.new("os_corr.czeta", 0.0), desc("abs_zeta"))),
                  add(const(1.0), mul(book.new("os_corr.gamma", ph["os_corr.gamma"], False),
                                      ipow(desc("rs_total"), 2))))
    gos = mul(p_cos, add(const(1.0), corr_os))
    templates = {"x": tuple(WB97MV_X) + ((1, 0, 1), (0, 1, 1)), "ss": tuple(WB97MV_CSS),
                 "os": tuple(cos_coeffs)}
    return book.build(gx, gss, gos, templates, "SAFS26-b")


CANONICAL = {"baseline": canonical_baseline, "safs26a": canonical_safs26a, "safs26b": canonical_safs26b}


def ueg_exchange_shift(form: FunctionalForm) -> float:
    """Relative g_x deviation from c_x0 at the UEG point (s = 0, t = k_c)."""
    from .expr import evaluate
    c = form.constants()
    view = {"s": 0.0, "t": c.k_c, "w": 0.0, "u": 0.0, "v_st": 0.0, "alpha": 1.0, "v_alpha": 0.5,
            "rs": 1.0, "rs_total": 1.0}
    g = float(evaluate(form.gx, view, form.params))
    return abs(g - c.c_x0) / c.c_x0


def sigmoid_ueg_bound(c_sig: float, a: float, b: float) -> float:
    """Relative UEG exchange shift c_sig * sigma(-a b) of a multiplicative sigmoid gate."""
    return abs(c_sig) / (1.0 + math.exp(a * b))
