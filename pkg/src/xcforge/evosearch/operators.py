"""Structural edits that turn parent forms into a child form.

Every operator except parameter perturbation adds terms whose new
parameters start at a neutral value, so the child reproduces its parent
before fitting.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ..descriptors import descriptor_names
from ..xcforms.expr import (Node, add, const, desc, descriptors_used, div, ipow, mul, param, params_used,
                            remap_params, sigmoid, softplus, tanh)
from ..xcforms.forms import CHANNEL_TREES, NEUTRAL_DEN, FormError, FunctionalForm

TREES = tuple(CHANNEL_TREES)  # ("gx", "gss", "gos")

# Spin-even descriptors in [-1, 1] per channel; odd-in-zeta names are left out.
BOUNDED = {
    "gx": ("w", "u", "v_st"),
    "gss": ("w", "u", "v_st", "fz", "z", "x"),
    "gos": ("w", "u", "v_st", "fz", "z", "x", "abs_zeta"),
}
# Non-negative basis functions for denominators.
NONNEG = {
    "gx": ("u", "v_st", "w2"),
    "gss": ("u", "v_st", "w2", "z", "x"),
    "gos": ("u", "v_st", "w2", "z", "x", "abs_zeta"),
}
# Bounded transforms of unbounded descriptors, and bounded cross terms.
# tanh(alpha) in exchange breaks the UEG limit; tanh(rs) breaks scaling.
BOUNDED_VARIANTS = ("tanh_s", "tanh_alpha", "tanh_rs", "vst_w", "vst_u", "valpha")


class OperatorInapplicable(Exception):
    """The operator cannot act on the given parents."""


@dataclass(frozen=True)
class Proposal:
    form: FunctionalForm
    operator: str
    channel: str
    tag: str  # strategy tag used by the memory store
    plan_text: str


class ChildBook:
    """Parameter list seeded from a parent; new parameters are appended."""

    def __init__(self, parent: FunctionalForm, freeze_inherited: bool = False):
        self.values = list(parent.params)
        self.mask = [False] * parent.n_params if freeze_inherited else list(parent.trainable_mask)
        self.names = list(parent.param_names)

    def new(self, group: str, name: str, value: float, trainable: bool = True) -> Node:
        base = f"{group}.{name}"
        full, k = base, 1
        while full in self.names:
            k += 1
            full = f"{base}_{k}"
        self.values.append(float(value))
        self.mask.append(bool(trainable))
        self.names.append(full)
        return param(len(self.values) - 1)

    def form(self, parent: FunctionalForm, label: str, **trees) -> FunctionalForm:
        try:
            return parent.replace(params=np.array(self.values), trainable_mask=np.array(self.mask, dtype=bool),
                                  param_names=tuple(self.names), label=label, **trees)
        except FormError as exc:
            raise OperatorInapplicable(str(exc)) from None


def _basis(name: str) -> Node:
    return ipow(desc("w"), 2) if name == "w2" else desc(name)


def _random_monomial(rng: np.random.Generator, tree: str) -> tuple[Node, str]:
    names = BOUNDED[tree]
    k = int(rng.integers(1, 3))
    picked = sorted(rng.choice(len(names), size=k, replace=False))
    factors, tag = [], []
    for j in picked:
        e = int(rng.integers(1, 4))
        factors.append(desc(names[j]) if e == 1 else ipow(desc(names[j]), e))
        tag.append(f"{names[j]}{e}")
    return mul(*factors), "_".join(tag)


def _bounded_term(variant: str) -> Node:
    if variant == "tanh_s":
        return tanh(desc("s"))
    if variant == "tanh_alpha":
        return tanh(desc("alpha"))
    if variant == "tanh_rs":
        return tanh(desc("rs"))
    if variant == "vst_w":
        return mul(desc("v_st"), desc("w"))
    if variant == "vst_u":
        return mul(desc("v_st"), desc("u"))
    if variant == "valpha":
        return desc("v_alpha")
    raise ValueError(variant)


def _group(parent: FunctionalForm, op: str, tree: str) -> str:
    return f"{op}{parent.n_params}_{CHANNEL_TREES[tree]}"


def _pick_tree(rng) -> str:
    return TREES[int(rng.integers(len(TREES)))]


def zero_init_graft(parents: Sequence[FunctionalForm], rng: np.random.Generator) -> Proposal:
    """tree + c * monomial, c = 0."""
    p = parents[0]
    tree = _pick_tree(rng)
    mono, mtag = _random_monomial(rng, tree)
    book = ChildBook(p)
    c = book.new(_group(p, "graft", tree), "c", 0.0)
    child = book.form(p, p.label, **{tree: add(getattr(p, tree), mul(c, mono))})
    return Proposal(child, "zero_init_graft", tree, f"zero_init_graft:{tree}",
                    f"zero_init_graft on {tree}: add c*{mtag} with c = 0")


def bounded_descriptor(parents: Sequence[FunctionalForm], rng: np.random.Generator) -> Proposal:
    """tree + c * B with B a bounded transform or cross term, c = 0."""
    p = parents[0]
    tree = _pick_tree(rng)
    allowed = descriptor_names(CHANNEL_TREES[tree])
    variants = [v for v in BOUNDED_VARIANTS if descriptors_used(_bounded_term(v)) <= allowed]
    variant = variants[int(rng.integers(len(variants)))]
    book = ChildBook(p)
    c = book.new(_group(p, "bnd", tree), "c", 0.0)
    child = book.form(p, p.label, **{tree: add(getattr(p, tree), mul(c, _bounded_term(variant)))})
    return Proposal(child, "bounded_descriptor", tree, f"bounded_descriptor:{tree}:{variant}",
                    f"bounded_descriptor on {tree}: add c*{variant} with c = 0")


def sigmoid_gate(parents: Sequence[FunctionalForm], rng: np.random.Generator) -> Proposal:
    """tree * (1 + c * sigmoid(a (d - b))), c = 0, steepness and center fixed."""
    p = parents[0]
    tree = _pick_tree(rng)
    name = ("w", "u", "v_st")[int(rng.integers(3))]
    a = float(rng.choice([2.0, 4.0, 8.0]))
    b = float(np.round(rng.uniform(-0.5, 0.5), 2)) if name == "w" else float(np.round(rng.uniform(0.1, 0.6), 2))
    book = ChildBook(p)
    c = book.new(_group(p, "gate", tree), "c", 0.0)
    gate = add(const(1.0), mul(c, sigmoid(mul(const(a), add(desc(name), const(-b))))))
    child = book.form(p, p.label, **{tree: mul(getattr(p, tree), gate)})
    return Proposal(child, "sigmoid_gate", tree, f"sigmoid_gate:{tree}",
                    f"sigmoid_gate on {tree}: multiply by 1 + c*sigmoid({a:g}*({name} - {b:g})) with c = 0")


def rational_wrap_op(parents: Sequence[FunctionalForm], rng: np.random.Generator) -> Proposal:
    """tree / (1 + sum softplus(d_i) phi_i), d_i at the neutral value."""
    p = parents[0]
    tree = _pick_tree(rng)
    pool = NONNEG[tree]
    k = int(rng.integers(1, min(3, len(pool)) + 1))
    chosen = [pool[j] for j in sorted(rng.choice(len(pool), size=k, replace=False))]
    book = ChildBook(p)
    group = _group(p, "wrap", tree)
    terms = [mul(softplus(book.new(group, f"d_{n}", NEUTRAL_DEN)), _basis(n)) for n in chosen]
    child = book.form(p, p.label, **{tree: div(getattr(p, tree), add(const(1.0), *terms))})
    return Proposal(child, "rational_wrap", tree, f"rational_wrap:{tree}",
                    f"rational_wrap on {tree}: divide by 1 + sum softplus(d)*phi over {', '.join(chosen)}")


def freeze_graft(parents: Sequence[FunctionalForm], rng: np.random.Generator) -> Proposal:
    """Freeze every inherited parameter and graft two zero-initialized terms."""
    p = parents[0]
    tree = _pick_tree(rng)
    book = ChildBook(p, freeze_inherited=True)
    group = _group(p, "frz", tree)
    terms, tags = [], []
    for _ in range(2):
        mono, mtag = _random_monomial(rng, tree)
        terms.append(mul(book.new(group, "c", 0.0), mono))
        tags.append(mtag)
    child = book.form(p, p.label, **{tree: add(getattr(p, tree), *terms)})
    return Proposal(child, "freeze_graft", tree, f"freeze_graft:{tree}",
                    f"freeze_graft on {tree}: freeze {p.n_params} inherited parameters, add c*{tags[0]} + c*{tags[1]}")


def param_perturbation(parents: Sequence[FunctionalForm], rng: np.random.Generator, scale: float = 0.05) -> Proposal:
    """Multiply every trainable parameter by (1 + scale * N(0, 1))."""
    p = parents[0]
    if p.n_trainable == 0:
        raise OperatorInapplicable("parent has no trainable parameters")
    x = p.trainable_vector()
    child = p.with_trainable(x * (1.0 + scale * rng.standard_normal(x.size)))
    return Proposal(child, "param_perturbation", "all", "param_perturbation",
                    f"param_perturbation: scale trainable parameters by 1 + {scale:g}*N(0,1)")


def fuse(exchange_from: FunctionalForm, correlation_from: FunctionalForm, label: str = "") -> FunctionalForm:
    """Child with the first form's g_x and the second form's g_ss, g_os.

    Parameters keep their values, masks and names; unused ones are dropped.
    """
    values, mask, names = [], [], []

    def take(form: FunctionalForm, trees) -> dict:
        used = sorted(set().union(*(params_used(getattr(form, t)) for t in trees)))
        mapping = {}
        for i in used:
            name, k = form.param_names[i], 1
            full = name
            while full in names:
                k += 1
                full = f"{name}_{k}"
            mapping[i] = len(values)
            values.append(float(form.params[i]))
            mask.append(bool(form.trainable_mask[i]))
            names.append(full)
        return mapping

    corr_map = take(correlation_from, ("gss", "gos"))
    x_map = take(exchange_from, ("gx",))
    return FunctionalForm(
        remap_params(exchange_from.gx, x_map), remap_params(correlation_from.gss, corr_map),
        remap_params(correlation_from.gos, corr_map), np.array(values), np.array(mask, dtype=bool),
        tuple(names), dict(correlation_from.power_templates), label or correlation_from.label,
        dict(correlation_from.constants_override))


def fusion(parents: Sequence[FunctionalForm], rng: np.random.Generator) -> Proposal:
    """Exchange channel of the donor (second parent) fused with the recipient's correlation."""
    if len(parents) < 2:
        raise OperatorInapplicable("fusion needs a second parent")
    recipient, donor = parents[0], parents[1]
    child = fuse(donor, recipient, recipient.label)
    return Proposal(child, "fusion", "gx", "fusion:gx",
                    "fusion: exchange channel from the second parent, correlation channels from the first")


@dataclass(frozen=True)
class OperatorSpec:
    name: str
    fn: Callable[[Sequence[FunctionalForm], np.random.Generator], Proposal]
    arity: int = 1
    conservative: bool = False  # small, low-risk edits (favoured by exploit-biased proposers)


OPERATORS: dict[str, OperatorSpec] = {
    "zero_init_graft": OperatorSpec("zero_init_graft", zero_init_graft),
    "bounded_descriptor": OperatorSpec("bounded_descriptor", bounded_descriptor),
    "sigmoid_gate": OperatorSpec("sigmoid_gate", sigmoid_gate),
    "rational_wrap": OperatorSpec("rational_wrap", rational_wrap_op),
    "freeze_graft": OperatorSpec("freeze_graft", freeze_graft, conservative=True),
    "param_perturbation": OperatorSpec("param_perturbation", param_perturbation, conservative=True),
    "fusion": OperatorSpec("fusion", fusion, arity=2),
}


def is_freeze_graft(parent: FunctionalForm, child: FunctionalForm) -> bool:
    """True when the child carries the parent's parameters verbatim and frozen, training only new ones."""
    n = parent.n_params
    if child.n_params <= n or child.param_names[:n] != parent.param_names:
        return False
    if not np.array_equal(child.params[:n], parent.params):
        return False
    return not child.trainable_mask[:n].any() and bool(child.trainable_mask[n:].all())
