"""Expression trees for enhancement factors.

A tree is built from :class:`Node` values.  Leaves are constants, parameter
references (by index into a flat parameter vector) and descriptor references
(by name).  Evaluation is vectorised: descriptor names resolve to arrays in a
mapping, so one call evaluates the tree at every grid point.

:func:`evaluate_dual` carries forward-mode derivatives with respect to the
parameter vector as a sparse ``{index: array}`` map per node, so the cost
scales with the number of parameters a subtree actually touches.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np
from scipy.special import expit

KINDS = ("const", "param", "desc", "add", "mul", "div", "ipow",
         "tanh", "sigmoid", "softplus", "clamp")
_UNARY = ("ipow", "tanh", "sigmoid", "softplus", "clamp")


class ExprError(ValueError):
    """Structural problem with a tree."""


class ExprEvalError(ArithmeticError):
    """Non-finite value produced while evaluating a tree.

    ``path`` lists child indices from the root to the offending node and
    ``index`` is the first bad point, when known.
    """

    def __init__(self, path: tuple[int, ...], kind: str, index: int | None = None, prefix: str = ""):
        self.path = path
        self.kind = kind
        self.index = index
        where = prefix + "/" + "/".join(map(str, path)) if prefix else "/" + "/".join(map(str, path))
        msg = f"non-finite value at node {where} ({kind})"
        if index is not None:
            msg += f", point {index}"
        super().__init__(msg)

    def with_prefix(self, prefix: str) -> "ExprEvalError":
        return ExprEvalError(self.path, self.kind, self.index, prefix)


@dataclass(frozen=True)
class Node:
    kind: str
    children: tuple["Node", ...] = ()
    value: float = 0.0  # const value
    index: int = -1  # param index
    name: str = ""  # descriptor name
    exponent: int = 0  # ipow
    lo: float = 0.0  # clamp bounds
    hi: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ExprError(f"unknown node kind {self.kind!r}")
        n = len(self.children)
        if self.kind in ("const", "param", "desc") and n:
            raise ExprError(f"{self.kind} node takes no children")
        if self.kind in _UNARY and n != 1:
            raise ExprError(f"{self.kind} node takes one child")
        if self.kind == "div" and n != 2:
            raise ExprError("div node takes two children")
        if self.kind in ("add", "mul") and n < 1:
            raise ExprError(f"{self.kind} node needs children")
        if self.kind == "param" and self.index < 0:
            raise ExprError("param index must be non-negative")
        if self.kind == "desc" and not self.name:
            raise ExprError("descriptor node needs a name")
        if self.kind == "ipow" and self.exponent < 0:
            raise ExprError("ipow exponent must be >= 0")
        if self.kind == "clamp" and not self.lo <= self.hi:
            raise ExprError("clamp needs lo <= hi")
        # cached so memo lookups stay cheap on deep trees
        object.__setattr__(self, "_hash", hash((self.kind, self.children, self.value, self.index, self.name,
                                                self.exponent, self.lo, self.hi)))
        object.__setattr__(self, "param_free", self.kind != "param" and all(c.param_free for c in self.children))

    def __hash__(self):
        return self._hash

    # operator sugar keeps constructor code readable
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __pow__(self, k: int):
        return ipow(self, k)


def _wrap(x) -> Node:
    return x if isinstance(x, Node) else const(float(x))


def const(value: float) -> Node:
    return Node("const", value=float(value))


def param(index: int) -> Node:
    return Node("param", index=int(index))


def desc(name: str) -> Node:
    return Node("desc", name=name)


def add(*terms: Node) -> Node:
    flat = []
    for t in terms:
        flat.extend(t.children if t.kind == "add" else (t,))
    return flat[0] if len(flat) == 1 else Node("add", tuple(flat))


def mul(*factors: Node) -> Node:
    flat = []
    for f in factors:
        flat.extend(f.children if f.kind == "mul" else (f,))
    return flat[0] if len(flat) == 1 else Node("mul", tuple(flat))


def div(num: Node, den: Node) -> Node:
    return Node("div", (num, den))


def ipow(base: Node, k: int) -> Node:
    return Node("ipow", (base,), exponent=int(k))


def tanh(x: Node) -> Node:
    return Node("tanh", (x,))


def sigmoid(x: Node) -> Node:
    return Node("sigmoid", (x,))


def softplus(x: Node) -> Node:
    return Node("softplus", (x,))


def clamp(x: Node, lo: float, hi: float) -> Node:
    return Node("clamp", (x,), lo=float(lo), hi=float(hi))


# -- structural queries --------------------------------------------------------

def walk(node: Node, path: tuple[int, ...] = ()) -> Iterable[tuple[tuple[int, ...], Node]]:
    yield path, node
    for i, ch in enumerate(node.children):
        yield from walk(ch, path + (i,))


def params_used(node: Node) -> set[int]:
    return {n.index for _, n in walk(node) if n.kind == "param"}


def descriptors_used(node: Node) -> set[str]:
    return {n.name for _, n in walk(node) if n.kind == "desc"}


def remap_params(node: Node, mapping: Mapping[int, int]) -> Node:
    """Copy of the tree with parameter indices renumbered through ``mapping``."""
    if node.kind == "param":
        return param(mapping[node.index])
    if not node.children:
        return node
    return Node(node.kind, tuple(remap_params(c, mapping) for c in node.children),
                node.value, node.index, node.name, node.exponent, node.lo, node.hi)


def node_count(node: Node) -> int:
    return sum(1 for _ in walk(node))


# -- evaluation ----------------------------------------------------------------

def softplus_np(x):
    return np.logaddexp(0.0, x)


def _check(val, path, kind):
    if not np.all(np.isfinite(val)):
        bad = np.flatnonzero(~np.isfinite(np.atleast_1d(val)))
        raise ExprEvalError(path, kind, int(bad[0]) if bad.size else None)
    return val


class SubtreeMemo:
    """Bounded cache of parameter-free subtree values for one fixed view."""

    def __init__(self, capacity: int = 128):
        self.capacity = int(capacity)
        self._data: OrderedDict[Node, np.ndarray] = OrderedDict()

    def get(self, node: Node):
        val = self._data.get(node)
        if val is not None:
            self._data.move_to_end(node)
        return val

    def put(self, node: Node, val) -> None:
        self._data[node] = val
        if len(self._data) > self.capacity:
            self._data.popitem(last=False)

    def __len__(self) -> int:
        return len(self._data)


def evaluate(node: Node, view: Mapping[str, np.ndarray], params, path: tuple[int, ...] = (),
             memo: SubtreeMemo | None = None):
    """Value of ``node`` at every point of ``view``.

    ``memo`` caches parameter-free subtrees; it must belong to ``view``.
    """
    k = node.kind
    if memo is not None and node.children and node.param_free:
        val = memo.get(node)
        if val is None:
            val = evaluate(node, view, params, path)
            memo.put(node, val)
        return val
    if k == "const":
        return np.float64(node.value)
    if k == "param":
        v = params[node.index]
        return v if isinstance(v, np.longdouble) else np.float64(v)  # extended precision passes through
    if k == "desc":
        try:
            return view[node.name]
        except KeyError:
            raise ExprError(f"descriptor {node.name!r} unavailable at node /{'/'.join(map(str, path))}") from None
    vals = [evaluate(c, view, params, path + (i,), memo) for i, c in enumerate(node.children)]
    with np.errstate(all="ignore"):
        if k == "add":
            out = vals[0]
            for v in vals[1:]:
                out = out + v
        elif k == "mul":
            out = vals[0]
            for v in vals[1:]:
                out = out * v
        elif k == "div":
            out = vals[0] / vals[1]
        elif k == "ipow":
            out = vals[0] ** node.exponent
        elif k == "tanh":
            out = np.tanh(vals[0])
        elif k == "sigmoid":
            out = expit(vals[0])
        elif k == "softplus":
            out = softplus_np(vals[0])
        else:
            out = np.clip(vals[0], node.lo, node.hi)
    return _check(out, path, k)


def _scale(d: dict, f) -> dict:
    return {i: f * g for i, g in d.items()}


def _accum(dst: dict, src: dict, f=None) -> None:
    for i, g in src.items():
        term = g if f is None else f * g
        dst[i] = dst[i] + term if i in dst else term


def evaluate_dual(node: Node, view: Mapping[str, np.ndarray], params, active=None,
                  path: tuple[int, ...] = (), memo: SubtreeMemo | None = None):
    """Value and derivatives ``{param index: d value / d param}``.

    Only indices in ``active`` (default: all) get derivative entries.
    """
    k = node.kind
    if k == "const":
        return np.float64(node.value), {}
    if k == "param":
        i = node.index
        return np.float64(params[i]), ({i: 1.0} if active is None or i in active else {})
    if node.param_free:
        return evaluate(node, view, params, path, memo), {}
    ch = [evaluate_dual(c, view, params, active, path + (j,), memo) for j, c in enumerate(node.children)]
    with np.errstate(all="ignore"):
        if k == "add":
            val = ch[0][0]
            der = dict(ch[0][1])
            for v, d in ch[1:]:
                val = val + v
                _accum(der, d)
        elif k == "mul":
            vals = [v for v, _ in ch]
            val = vals[0]
            for v in vals[1:]:
                val = val * v
            der = {}
            for j, (_, d) in enumerate(ch):
                if not d:
                    continue
                other = 1.0
                for m, v in enumerate(vals):
                    if m != j:
                        other = other * v
                _accum(der, d, other)
        elif k == "div":
            (a, da), (b, db) = ch
            val = a / b
            der = _scale(da, 1.0 / b)
            if db:
                _accum(der, db, -a / (b * b))
        else:
            x, dx = ch[0]
            if k == "ipow":
                n = node.exponent
                val = x**n
                fp = n * x ** (n - 1) if n > 0 else 0.0
            elif k == "tanh":
                val = np.tanh(x)
                fp = 1.0 - val * val
            elif k == "sigmoid":
                val = expit(x)
                fp = val * (1.0 - val)
            elif k == "softplus":
                val = softplus_np(x)
                fp = expit(x)
            else:
                val = np.clip(x, node.lo, node.hi)
                fp = ((x >= node.lo) & (x <= node.hi)).astype(float) if np.ndim(x) else float(node.lo <= x <= node.hi)
            der = _scale(dx, fp)
    _check(val, path, k)
    for d in der.values():
        _check(d, path, k + "'")
    return val, der


# -- serialisation to plain data -----------------------------------------------

def to_data(node: Node):
    k = node.kind
    if k == "const":
        return {"const": node.value}
    if k == "param":
        return {"param": node.index}
    if k == "desc":
        return {"desc": node.name}
    rec = {"op": k, "args": [to_data(c) for c in node.children]}
    if k == "ipow":
        rec["exponent"] = node.exponent
    if k == "clamp":
        rec["lo"] = node.lo
        rec["hi"] = node.hi
    return rec


def from_data(rec, path: str = "") -> Node:
    """Inverse of :func:`to_data`; raises ExprError naming ``path`` on bad input."""
    try:
        if not isinstance(rec, dict):
            raise ExprError("node record must be an object")
        if "const" in rec:
            return const(float(rec["const"]))
        if "param" in rec:
            idx = rec["param"]
            if not isinstance(idx, int) or isinstance(idx, bool):
                raise ExprError("param index must be an integer")
            return param(idx)
        if "desc" in rec:
            return desc(str(rec["desc"]))
        op = rec.get("op")
        if op not in KINDS:
            raise ExprError(f"unknown op {op!r}")
        args = rec.get("args")
        if not isinstance(args, list):
            raise ExprError("args must be a list")
        kids = tuple(from_data(a, f"{path}/args/{i}") for i, a in enumerate(args))
        return Node(op, kids, exponent=int(rec.get("exponent", 0)),
                    lo=float(rec.get("lo", 0.0)), hi=float(rec.get("hi", 0.0)))
    except ExprError as exc:
        if str(exc).startswith("at "):
            raise
        raise ExprError(f"at {path or '/'}: {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ExprError(f"at {path or '/'}: {exc}") from None
