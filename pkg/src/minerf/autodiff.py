"""Tape-based reverse-mode automatic differentiation over float64 numpy arrays.

A Tape records primitive operations in creation order; node inputs always
reference earlier nodes, so the backward pass is a single reverse sweep with
ordered (deterministic) gradient accumulation. Values are scalars (shape ()),
vectors, matrices, or higher-rank arrays. Parameters live outside the tape
and are re-registered as leaves every step; a tape is built, differentiated,
and dropped.

Leaves registered with leaf() are differentiable; raw arrays mixed into ops
become constants, and the expensive primitives skip the vector-Jacobian
products feeding pure-constant subgraphs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionError, NumericError, UsageError


class _Node:
    __slots__ = ("op", "parents", "vjp")

    def __init__(self, op: str, parents: tuple, vjp):
        self.op = op
        self.parents = parents
        self.vjp = vjp


class Tape:
    """Append-only record of primitive ops plus their forward values."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self.values: list[np.ndarray] = []
        self.requires: list[bool] = []

    def _push(self, op: str, value: np.ndarray, parents: tuple = (), vjp=None,
              requires: bool | None = None) -> "Var":
        idx = len(self.nodes)
        self.nodes.append(_Node(op, parents, vjp))
        self.values.append(value)
        if requires is None:
            requires = any(self.requires[p] for p in parents)
        self.requires.append(requires)
        return Var(self, idx)

    def __len__(self):
        return len(self.nodes)


@dataclass(frozen=True)
class Var:
    """Handle to one tape node. Shape is fixed at creation."""

    tape: Tape
    idx: int

    @property
    def value(self) -> np.ndarray:
        return self.tape.values[self.idx]

    @property
    def shape(self):
        return self.tape.values[self.idx].shape

    @property
    def requires_grad(self) -> bool:
        return self.tape.requires[self.idx]

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __getitem__(self, key):
        return slice_(self, key)


def _f64(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def leaf(tape: Tape, value) -> Var:
    """Register a differentiable input array as a tape leaf."""
    return tape._push("leaf", _f64(value), requires=True)


def const(tape: Tape, value) -> Var:
    """Register a non-differentiable array (no gradients flow into it)."""
    return tape._push("const", _f64(value), requires=False)


def _coerce(tape: Tape, x) -> Var:
    if isinstance(x, Var):
        if x.tape is not tape:
            raise UsageError("cannot mix variables from different tapes")
        return x
    return const(tape, x)


def _tape_of(*xs) -> Tape:
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    raise UsageError("at least one operand must be a Var")


# ---------------------------------------------------------------------------
# elementwise primitives

def add(a, b) -> Var:
    tape = _tape_of(a, b)
    a, b = _coerce(tape, a), _coerce(tape, b)
    av, bv = a.value, b.value
    na, nb = a.requires_grad, b.requires_grad
    if av.shape == bv.shape:
        def vjp(g):
            return g if na else None, g if nb else None
    elif av.ndim == 2 and bv.ndim == 1 and av.shape[1] == bv.shape[0]:
        # row-broadcast bias add
        def vjp(g):
            return g if na else None, g.sum(axis=0) if nb else None
    elif av.shape == () or bv.shape == ():
        def vjp(g):
            ga = (g if av.shape == g.shape else g.sum()) if na else None
            gb = (g if bv.shape == g.shape else g.sum()) if nb else None
            return ga, gb
    else:
        raise DimensionError(f"add: shapes {av.shape} vs {bv.shape}")
    return tape._push("add", av + bv, (a.idx, b.idx), vjp)


def sub(a, b) -> Var:
    return add(a, neg(b) if isinstance(b, Var) else -_f64(b))


def mul(a, b) -> Var:
    """Elementwise (Hadamard) product; scalars broadcast."""
    tape = _tape_of(a, b)
    a, b = _coerce(tape, a), _coerce(tape, b)
    av, bv = a.value, b.value
    na, nb = a.requires_grad, b.requires_grad
    if not (av.shape == bv.shape or av.shape == () or bv.shape == ()):
        raise DimensionError(f"mul: shapes {av.shape} vs {bv.shape}")

    def vjp(g):
        ga = gb = None
        if na:
            ga = g * bv
            if av.shape != ga.shape:
                ga = ga.sum()
        if nb:
            gb = g * av
            if bv.shape != gb.shape:
                gb = gb.sum()
        return ga, gb

    return tape._push("mul", av * bv, (a.idx, b.idx), vjp)


hadamard = mul


def neg(a: Var) -> Var:
    return a.tape._push("neg", -a.value, (a.idx,), lambda g: (-g,))


def scale(a: Var, c: float) -> Var:
    c = float(c)
    return a.tape._push("scale", c * a.value, (a.idx,), lambda g: (c * g,))


def square(a: Var) -> Var:
    av = a.value
    return a.tape._push("square", av * av, (a.idx,), lambda g: (2.0 * av * g,))


def sqrt(a: Var) -> Var:
    out = np.sqrt(a.value)
    return a.tape._push("sqrt", out, (a.idx,), lambda g: (g / (2.0 * out),))


def exp(a: Var) -> Var:
    out = np.exp(a.value)
    return a.tape._push("exp", out, (a.idx,), lambda g: (g * out,))


def sin(a: Var) -> Var:
    av = a.value
    return a.tape._push("sin", np.sin(av), (a.idx,), lambda g: (g * np.cos(av),))


def cos(a: Var) -> Var:
    av = a.value
    return a.tape._push("cos", np.cos(av), (a.idx,), lambda g: (-g * np.sin(av),))


def relu(a: Var) -> Var:
    av = a.value
    mask = av > 0.0  # derivative at 0 defined as 0
    return a.tape._push("relu", np.maximum(av, 0.0), (a.idx,), lambda g: (g * mask,))


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ev = np.exp(x[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def sigmoid(a: Var) -> Var:
    out = _stable_sigmoid(a.value)
    return a.tape._push("sigmoid", out, (a.idx,), lambda g: (g * out * (1.0 - out),))


def softplus(a: Var) -> Var:
    av = a.value
    out = np.maximum(av, 0.0) + np.log1p(np.exp(-np.abs(av)))
    return a.tape._push("softplus", out, (a.idx,),
                        lambda g: (g * _stable_sigmoid(av),))


# ---------------------------------------------------------------------------
# linear algebra

def matvec(W, x) -> Var:
    tape = _tape_of(W, x)
    W, x = _coerce(tape, W), _coerce(tape, x)
    Wv, xv = W.value, x.value
    if Wv.ndim != 2 or xv.ndim != 1 or Wv.shape[1] != xv.shape[0]:
        raise DimensionError(f"matvec: {Wv.shape} @ {xv.shape}")
    nW, nx = W.requires_grad, x.requires_grad

    def vjp(g):
        return (np.outer(g, xv) if nW else None, Wv.T @ g if nx else None)

    return tape._push("matvec", Wv @ xv, (W.idx, x.idx), vjp)


def matmul(A, B) -> Var:
    tape = _tape_of(A, B)
    A, B = _coerce(tape, A), _coerce(tape, B)
    Av, Bv = A.value, B.value
    if Av.ndim != 2 or Bv.ndim != 2 or Av.shape[1] != Bv.shape[0]:
        raise DimensionError(f"matmul: {Av.shape} @ {Bv.shape}")
    nA, nB = A.requires_grad, B.requires_grad

    def vjp(g):
        return (g @ Bv.T if nA else None, Av.T @ g if nB else None)

    return tape._push("matmul", Av @ Bv, (A.idx, B.idx), vjp)


# ---------------------------------------------------------------------------
# reductions and shape ops

def sum_(a: Var, axis=None) -> Var:
    av = a.value

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, av.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), av.shape).copy(),)

    return a.tape._push("sum", av.sum(axis=axis), (a.idx,), vjp)


def mean(a: Var, axis=None) -> Var:
    av = a.value
    n = av.size if axis is None else av.shape[axis]

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g / n, av.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis) / n, av.shape).copy(),)

    return a.tape._push("mean", av.mean(axis=axis), (a.idx,), vjp)


def concat(parts: Sequence, axis: int = 0) -> Var:
    tape = _tape_of(*parts)
    parts = [_coerce(tape, p) for p in parts]
    vals = [p.value for p in parts]
    ndim = vals[0].ndim
    for v in vals[1:]:
        if v.ndim != ndim:
            raise DimensionError("concat: rank mismatch")
    sizes = [v.shape[axis] for v in vals]
    offs = np.cumsum([0] + sizes)
    needs = [p.requires_grad for p in parts]

    def vjp(g):
        return tuple(
            np.take(g, np.arange(offs[j], offs[j + 1]), axis=axis) if needs[j] else None
            for j in range(len(vals)))

    return tape._push("concat", np.concatenate(vals, axis=axis),
                      tuple(p.idx for p in parts), vjp)


def slice_(a: Var, key) -> Var:
    av = a.value
    out = av[key]

    def vjp(g):
        ga = np.zeros_like(av)
        ga[key] = g
        return (ga,)

    return a.tape._push("slice", np.array(out, dtype=np.float64, copy=True), (a.idx,), vjp)


def reshape(a: Var, shape) -> Var:
    av = a.value

    def vjp(g):
        return (g.reshape(av.shape),)

    return a.tape._push("reshape", av.reshape(shape), (a.idx,), vjp)


def tile_rows(v: Var, n: int) -> Var:
    """Repeat a vector as n identical rows; backward sums over rows."""
    vv = v.value
    if vv.ndim != 1:
        raise DimensionError(f"tile_rows expects a vector, got shape {vv.shape}")
    out = np.broadcast_to(vv, (n, vv.shape[0])).copy()
    return v.tape._push("tile_rows", out, (v.idx,), lambda g: (g.sum(axis=0),))


# ---------------------------------------------------------------------------
# backward

def grad(tape: Tape, output: Var, wrt: Sequence[Var]) -> list[np.ndarray]:
    """d(output)/d(w) for each w in wrt; output must be scalar.

    Fan-out accumulates by addition, in strictly reverse creation order.
    """
    if output.tape is not tape:
        raise UsageError("output does not belong to this tape")
    if output.value.shape != ():
        raise UsageError(f"grad output must be scalar, got shape {output.value.shape}")
    adj: list = [None] * len(tape.nodes)
    adj[output.idx] = np.ones(())
    requires = tape.requires
    for idx in range(output.idx, -1, -1):
        g = adj[idx]
        if g is None:
            continue
        node = tape.nodes[idx]
        if not node.parents:
            continue
        for pidx, pg in zip(node.parents, node.vjp(g)):
            if pg is None or not requires[pidx]:
                continue
            adj[pidx] = pg if adj[pidx] is None else adj[pidx] + pg
    out = []
    for w in wrt:
        if w.tape is not tape:
            raise UsageError("wrt variable from a different tape")
        g = adj[w.idx]
        out.append(np.zeros_like(w.value) if g is None else np.asarray(g, dtype=np.float64))
    return out


# ---------------------------------------------------------------------------
# gradient checking

@dataclass
class FiniteDiffReport:
    max_rel_err: float
    passed: bool


def value_of(f: Callable, params: Sequence[np.ndarray]) -> float:
    """Evaluate f on a fresh tape and return the scalar forward value."""
    tape = Tape()
    out = f(*[leaf(tape, p) for p in params])
    v = float(out.value)
    if not np.isfinite(v):
        raise NumericError("non-finite function value")
    return v


def finite_diff_check(f: Callable, params: Sequence[np.ndarray], step: float = 1e-5,
                      tol: float = 1e-5) -> FiniteDiffReport:
    """Compare tape gradients of f against central finite differences.

    f maps leaf Vars (one per entry of params) to a scalar Var and must be a
    pure function of its inputs. Relative error uses the denominator
    max(|analytic|, |numeric|, 1e-8) elementwise.
    """
    if step <= 0:
        raise UsageError("step must be positive")
    params = [np.array(p, dtype=np.float64) for p in params]
    tape = Tape()
    vs = [leaf(tape, p) for p in params]
    out = f(*vs)
    if not np.isfinite(out.value):
        raise NumericError("non-finite function value")
    analytic = grad(tape, out, vs)

    max_rel = 0.0
    for pi, p in enumerate(params):
        flat = p.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            fp = value_of(f, params)
            flat[j] = orig - step
            fm = value_of(f, params)
            flat[j] = orig
            numeric = (fp - fm) / (2.0 * step)
            a = analytic[pi].reshape(-1)[j]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            max_rel = max(max_rel, rel)
    return FiniteDiffReport(max_rel_err=max_rel, passed=max_rel < tol)
