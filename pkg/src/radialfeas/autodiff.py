"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

A :class:`Tape` records every operation applied to its :class:`Var` nodes in
creation order, so a backward sweep in reverse creation order is a valid
topological traversal. Shapes are checked eagerly; there is no implicit
broadcasting. A Python scalar may be combined with a ``Var`` of any shape, and a
constant numpy array may be combined with a ``Var`` of exactly the same shape.

Projection layers plug in as custom primitives (see
:func:`register_projection_primitives`).

Example::

    tape = Tape()
    x = tape.var(np.array([1.0, 2.0]))
    y = ad.sum(x * x)
    (gx,) = tape.gradient(y, [x])      # 2 * x
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import GraphError

__all__ = [
    "Tape",
    "Var",
    "Primitive",
    "register_primitive",
    "apply",
    "primitives",
    "register_projection_primitives",
    "grad_check",
]


class Tape:
    def __init__(self):
        self._vjps: list = []
        self._inputs: list = []
        self._ops: list = []

    def __len__(self):
        return len(self._ops)

    def _record(self, value, op, inputs=(), vjp=None) -> "Var":
        value = np.asarray(value, dtype=np.float64)
        node = Var(self, len(self._ops), value)
        self._ops.append(op)
        self._inputs.append(tuple(i.id for i in inputs))
        self._vjps.append(vjp)
        return node

    def var(self, value) -> "Var":
        """A differentiable leaf."""
        return self._record(np.array(value, dtype=np.float64), "leaf")

    def gradient(self, output: "Var", wrt: Sequence["Var"], seed=None):
        """Cotangents of ``output`` with respect to each node in ``wrt``.

        ``seed`` defaults to 1 and must be given for non-scalar outputs.
        """
        if output.tape is not self:
            raise GraphError("output belongs to a different tape")
        if seed is None:
            if output.value.size != 1:
                raise GraphError("seed required for non-scalar output")
            seed = np.ones_like(output.value)
        seed = np.asarray(seed, dtype=np.float64)
        if seed.shape != output.shape:
            raise GraphError(f"seed shape {seed.shape} != output shape {output.shape}")
        cots: list = [None] * (output.id + 1)
        cots[output.id] = seed
        for k in range(output.id, -1, -1):
            g = cots[k]
            vjp = self._vjps[k]
            if g is None or vjp is None:
                continue
            for i, gi in zip(self._inputs[k], vjp(g)):
                if gi is None:
                    continue
                cots[i] = gi if cots[i] is None else cots[i] + gi
        out = []
        for w in wrt:
            if w.tape is not self:
                raise GraphError("wrt node belongs to a different tape")
            g = cots[w.id] if w.id < len(cots) else None
            out.append(np.zeros_like(w.value) if g is None else g)
        return out


class Var:
    __slots__ = ("tape", "id", "value")
    __array_priority__ = 1000

    def __init__(self, tape: Tape, id_: int, value: np.ndarray):
        self.tape = tape
        self.id = id_
        self.value = value

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(id={self.id}, shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, index):
        return take(self, index)


# -- operand handling ---------------------------------------------------------


def _tape_of(*xs) -> Tape:
    tape = None
    for x in xs:
        if isinstance(x, Var):
            if tape is not None and x.tape is not tape:
                raise GraphError("operands belong to different tapes")
            tape = x.tape
    if tape is None:
        raise GraphError("at least one operand must be a Var")
    return tape


def _val(x):
    return x.value if isinstance(x, Var) else x


def _binary_operands(a, b, op):
    tape = _tape_of(a, b)
    av, bv = _val(a), _val(b)
    a_scalar = np.isscalar(av) or np.ndim(av) == 0
    b_scalar = np.isscalar(bv) or np.ndim(bv) == 0
    if isinstance(a, Var) and isinstance(b, Var):
        if a.shape != b.shape:
            raise GraphError(f"{op}: shape mismatch {a.shape} vs {b.shape}")
    elif isinstance(a, Var) and not b_scalar and np.shape(bv) != a.shape:
        raise GraphError(f"{op}: shape mismatch {a.shape} vs {np.shape(bv)}")
    elif isinstance(b, Var) and not a_scalar and np.shape(av) != b.shape:
        raise GraphError(f"{op}: shape mismatch {np.shape(av)} vs {b.shape}")
    return tape, av, bv


def _reduce_to(g, like):
    """Sum a cotangent down to a scalar when the operand was a scalar Var."""
    if np.ndim(like) == 0 and np.ndim(g) != 0:
        return np.sum(g)
    return g


# -- elementwise --------------------------------------------------------------


def add(a, b):
    tape, av, bv = _binary_operands(a, b, "add")
    ins = [x for x in (a, b) if isinstance(x, Var)]

    def vjp(g):
        return [_reduce_to(g, x.value) for x in ins]

    return tape._record(av + bv, "add", ins, vjp)


def sub(a, b):
    tape, av, bv = _binary_operands(a, b, "sub")
    ins, signs = [], []
    if isinstance(a, Var):
        ins.append(a)
        signs.append(1.0)
    if isinstance(b, Var):
        ins.append(b)
        signs.append(-1.0)

    def vjp(g):
        return [_reduce_to(s * g, x.value) for s, x in zip(signs, ins)]

    return tape._record(av - bv, "sub", ins, vjp)


def mul(a, b):
    tape, av, bv = _binary_operands(a, b, "mul")
    ins, parts = [], []
    if isinstance(a, Var):
        ins.append(a)
        parts.append(bv)
    if isinstance(b, Var):
        ins.append(b)
        parts.append(av)

    def vjp(g):
        return [_reduce_to(g * p, x.value) for p, x in zip(parts, ins)]

    return tape._record(av * bv, "mul", ins, vjp)


def div(a, b):
    tape, av, bv = _binary_operands(a, b, "div")
    out = av / bv
    ins, fns = [], []
    if isinstance(a, Var):
        ins.append(a)
        fns.append(lambda g: g / bv)
    if isinstance(b, Var):
        ins.append(b)
        fns.append(lambda g: -g * out / bv)

    def vjp(g):
        return [_reduce_to(f(g), x.value) for f, x in zip(fns, ins)]

    return tape._record(out, "div", ins, vjp)


def scale(x: Var, c: float):
    return x.tape._record(c * x.value, "scale", [x], lambda g: [c * g])


def power(x: Var, p: float):
    v = x.value
    return x.tape._record(v**p, "power", [x], lambda g: [g * p * v ** (p - 1.0)])


def square(x: Var):
    v = x.value
    return x.tape._record(v * v, "square", [x], lambda g: [2.0 * v * g])


def sqrt(x: Var):
    out = np.sqrt(x.value)
    return x.tape._record(out, "sqrt", [x], lambda g: [0.5 * g / out])


def log(x: Var):
    v = x.value
    return x.tape._record(np.log(v), "log", [x], lambda g: [g / v])


def log1p(x: Var):
    v = x.value
    return x.tape._record(np.log1p(v), "log1p", [x], lambda g: [g / (1.0 + v)])


def absolute(x: Var):
    sign = np.sign(x.value)  # subgradient 0 at the kink
    return x.tape._record(np.abs(x.value), "abs", [x], lambda g: [g * sign])


def exp(x: Var):
    out = np.exp(x.value)
    return x.tape._record(out, "exp", [x], lambda g: [g * out])


def tanh(x: Var):
    out = np.tanh(x.value)
    return x.tape._record(out, "tanh", [x], lambda g: [g * (1.0 - out * out)])


def relu(x: Var):
    mask = x.value > 0.0  # subgradient 0 at the kink
    return x.tape._record(np.where(mask, x.value, 0.0), "relu", [x], lambda g: [g * mask])


def clamp(x: Var, lo, hi):
    v = x.value
    inside = (v > lo) & (v < hi)  # open interval: kinks pass nothing
    return x.tape._record(np.clip(v, lo, hi), "clamp", [x], lambda g: [g * inside])


# -- reductions and structure -------------------------------------------------


def sum(x: Var, axis=None):  # noqa: A001 - mirrors numpy naming
    shape = x.shape

    def vjp(g):
        if axis is None:
            return [np.full(shape, float(g))]
        return [np.broadcast_to(np.expand_dims(g, axis), shape).copy()]

    return x.tape._record(np.sum(x.value, axis=axis), "sum", [x], vjp)


def mean(x: Var, axis=None):
    count = x.value.size if axis is None else x.shape[axis]
    return scale(sum(x, axis=axis), 1.0 / count)


def dot(a, b):
    """Inner product of two vectors, or row-wise inner products of two matrices."""
    tape, av, bv = _binary_operands(a, b, "dot")
    if np.ndim(av) not in (1, 2):
        raise GraphError("dot expects vectors or matrices")
    ins, parts = [], []
    if isinstance(a, Var):
        ins.append(a)
        parts.append(bv)
    if isinstance(b, Var):
        ins.append(b)
        parts.append(av)

    def vjp(g):
        gg = np.asarray(g)[..., None] if np.ndim(av) == 2 else g
        return [gg * p for p in parts]

    return tape._record(np.sum(av * bv, axis=-1), "dot", ins, vjp)


def affine(x: Var, W, b):
    """``W x + b`` for a vector ``x``, or row-wise ``X W^T + b`` for a batch."""
    tape = _tape_of(x, W, b)
    xv, Wv, bv = _val(x), _val(W), _val(b)
    if np.ndim(Wv) != 2 or np.ndim(bv) != 1 or Wv.shape[0] != bv.shape[0]:
        raise GraphError(f"affine: bad parameter shapes W{np.shape(Wv)} b{np.shape(bv)}")
    if np.shape(xv)[-1] != Wv.shape[1]:
        raise GraphError(f"affine: input width {np.shape(xv)[-1]} != {Wv.shape[1]}")
    out = xv @ Wv.T + bv
    ins, fns = [], []
    if isinstance(x, Var):
        ins.append(x)
        fns.append(lambda g: g @ Wv)
    if isinstance(W, Var):
        ins.append(W)
        fns.append(lambda g: np.outer(g, xv) if np.ndim(xv) == 1 else g.T @ xv)
    if isinstance(b, Var):
        ins.append(b)
        fns.append(lambda g: g if np.ndim(g) == 1 else g.sum(axis=0))

    def vjp(g):
        return [f(g) for f in fns]

    return tape._record(out, "affine", ins, vjp)


def concat(xs: Sequence, axis=-1):
    tape = _tape_of(*xs)
    vals = [np.asarray(_val(x), dtype=np.float64) for x in xs]
    ndim = vals[0].ndim
    ax = axis % ndim
    for v in vals:
        if v.ndim != ndim or any(v.shape[i] != vals[0].shape[i] for i in range(ndim) if i != ax):
            raise GraphError("concat: incompatible shapes")
    bounds = np.cumsum([0] + [v.shape[ax] for v in vals])
    ins = [(k, x) for k, x in enumerate(xs) if isinstance(x, Var)]

    def vjp(g):
        out = []
        for k, _ in ins:
            sl = [slice(None)] * ndim
            sl[ax] = slice(bounds[k], bounds[k + 1])
            out.append(g[tuple(sl)])
        return out

    return tape._record(np.concatenate(vals, axis=ax), "concat", [x for _, x in ins], vjp)


def take(x: Var, index):
    """Basic (slice/integer) indexing."""
    shape = x.shape

    def vjp(g):
        full = np.zeros(shape)
        full[index] = g
        return [full]

    return x.tape._record(x.value[index], "take", [x], vjp)


def expand(x: Var, n: int):
    """Repeat a vector (or scalar) ``n`` times along a new trailing axis."""
    v = x.value
    return x.tape._record(
        np.repeat(v[..., None], n, axis=-1), "expand", [x], lambda g: [g.sum(axis=-1)]
    )


# -- custom primitives --------------------------------------------------------


@dataclass(frozen=True)
class Primitive:
    """``forward(*arrays, **params) -> (out, saved)``; ``vjp(saved, g) -> cotangents``."""

    name: str
    forward: Callable
    vjp: Callable


_REGISTRY: dict[str, Primitive] = {}


def register_primitive(prim: Primitive) -> None:
    if prim.name in _REGISTRY:
        return
    _REGISTRY[prim.name] = prim


def primitives() -> dict:
    return dict(_REGISTRY)


def apply(name: str, *inputs, **params):
    prim = _REGISTRY.get(name)
    if prim is None:
        raise GraphError(f"unknown primitive {name!r}")
    tape = _tape_of(*inputs)
    vals = [_val(x) for x in inputs]
    out, saved = prim.forward(*vals, **params)
    var_idx = [k for k, x in enumerate(inputs) if isinstance(x, Var)]

    def vjp(g):
        cots = prim.vjp(saved, g)
        return [cots[k] for k in var_idx]

    return tape._record(out, name, [inputs[k] for k in var_idx], vjp)


def register_projection_primitives() -> None:
    """Expose the projection layers as tape primitives. Safe to call repeatedly."""
    from . import baselines

    def soft_fwd(u, layer):
        return layer.soft_project(u), (layer, u)

    def soft_vjp(saved, g):
        layer, u = saved
        return [layer.vjp(u, g)]

    def orth_fwd(u, caps):
        w = baselines.project_capped_simplex(u, caps)
        return w, (w, caps)

    def orth_vjp(saved, g):
        w, caps = saved
        return [baselines.orth_projection_vjp_from_output(w, caps, g)]

    def softmax_fwd(u, tau):
        w = baselines.softmax_temp(u, tau)
        return w, (w, tau)

    def softmax_vjp(saved, g):
        w, tau = saved
        return [baselines.softmax_vjp_from_output(w, tau, g)]

    def hardnet_fwd(u, bounds):
        return baselines.hardnet_correct(u, bounds), (u, bounds)

    def hardnet_vjp(saved, g):
        u, bounds = saved
        return [baselines.hardnet_vjp(u, bounds, g)]

    register_primitive(Primitive("soft_project", soft_fwd, soft_vjp))
    register_primitive(Primitive("project_capped_simplex", orth_fwd, orth_vjp))
    register_primitive(Primitive("softmax_temp", softmax_fwd, softmax_vjp))
    register_primitive(Primitive("hardnet_correct", hardnet_fwd, hardnet_vjp))


# -- verification -------------------------------------------------------------


def grad_check(f: Callable, x, h: float = 1e-5) -> float:
    """Max relative error between the tape gradient and central differences.

    ``f(tape, var) -> scalar Var``. The error per coordinate is
    ``|analytic - numeric| / max(1, |numeric|)``. Kinks inside ``[x-h, x+h]``
    can make the error exceed any tolerance; callers choose smooth points.
    """
    x = np.asarray(x, dtype=np.float64)
    tape = Tape()
    xv = tape.var(x)
    (analytic,) = tape.gradient(f(tape, xv), [xv])

    def value(point):
        t = Tape()
        return float(f(t, t.var(point)).value)

    numeric = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[i] = h
        numeric[i] = (value(x + e) - value(x - e)) / (2.0 * h)
    err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))
    return float(err.max()) if err.size else 0.0
