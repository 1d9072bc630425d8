"""Reverse-mode differentiation over a tape of dense-matrix primitives.

Every value on the tape is a 2-D float64 matrix (scalars are 1x1). A
:class:`Tape` records each primitive application in order; :func:`backward`
walks the record in reverse and applies the registered adjoint rule of each
primitive. Adding a primitive means registering a forward function and an
adjoint with :func:`primitive`.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import numkit
from .numkit import NumericalError, as_mat

__all__ = [
    "Tape",
    "Var",
    "UnregisteredPrimitiveError",
    "backward",
    "grad",
    "override_adjoint",
    "finite_diff_check",
    "GradReport",
    "relative_error",
]


class UnregisteredPrimitiveError(KeyError):
    pass


@dataclass(frozen=True)
class Primitive:
    name: str
    forward: Callable
    adjoint: Callable


_REGISTRY: dict[str, Primitive] = {}


def primitive(name):
    """Register ``forward`` and return a decorator that attaches its adjoint."""

    def wrap_forward(fwd):
        def wrap_adjoint(adj):
            _REGISTRY[name] = Primitive(name, fwd, adj)
            return adj

        fwd.adjoint = wrap_adjoint
        return fwd

    return wrap_forward


def registered() -> tuple[str, ...]:
    return tuple(sorted(_REGISTRY))


def adjoint_of(name: str) -> Callable:
    return _REGISTRY[name].adjoint


@contextlib.contextmanager
def override_adjoint(name: str, adjoint: Callable):
    """Temporarily replace the adjoint of a registered primitive."""
    old = _REGISTRY[name]
    _REGISTRY[name] = Primitive(name, old.forward, adjoint)
    try:
        yield
    finally:
        _REGISTRY[name] = old


@dataclass
class Node:
    op: str
    inputs: tuple[int, ...]
    attrs: dict
    value: np.ndarray
    requires_grad: bool


class Var:
    """Handle to one recorded value on a tape."""

    __slots__ = ("tape", "index")
    __array_priority__ = 1000

    def __init__(self, tape: "Tape", index: int):
        self.tape = tape
        self.index = index

    @property
    def value(self) -> np.ndarray:
        return self.tape.nodes[self.index].value

    @property
    def shape(self):
        return self.value.shape

    @property
    def T(self) -> "Var":
        return self.tape.apply("transpose", self)

    def item(self) -> float:
        return float(self.value.reshape(-1)[0])

    def _lift(self, other) -> "Var":
        if isinstance(other, Var):
            return other
        if np.ndim(other) == 0:
            return self.tape.const(np.full(self.shape, float(other)))
        return self.tape.const(other)

    def __matmul__(self, other):
        return self.tape.apply("matmul", self, self._lift(other))

    def __rmatmul__(self, other):
        return self.tape.apply("matmul", self._lift(other), self)

    def __add__(self, other):
        return self.tape.apply("add", self, self._lift(other))

    __radd__ = __add__

    def __sub__(self, other):
        return self.tape.apply("sub", self, self._lift(other))

    def __rsub__(self, other):
        return self.tape.apply("sub", self._lift(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return self.tape.apply("scale", self, c=float(other))
        return self.tape.apply("hadamard", self, self._lift(other))

    __rmul__ = __mul__

    def __neg__(self):
        return self.tape.apply("scale", self, c=-1.0)

    def __truediv__(self, c):
        if not isinstance(c, (int, float)):
            raise TypeError("divide Vars elementwise with div_row")
        return self.tape.apply("scale", self, c=1.0 / float(c))

    def __getitem__(self, key):
        rows, cols = key if isinstance(key, tuple) else (key, slice(None))
        r0, r1, _ = rows.indices(self.shape[0])
        c0, c1, _ = cols.indices(self.shape[1])
        return self.tape.apply("slice", self, r0=r0, r1=r1, c0=c0, c1=c1)

    def __repr__(self):
        node = self.tape.nodes[self.index]
        return f"Var({node.op}#{self.index}, shape={self.shape})"


class Tape:
    def __init__(self):
        self.nodes: list[Node] = []

    def _push(self, op, inputs, attrs, value, requires_grad) -> Var:
        self.nodes.append(Node(op, inputs, attrs, value, requires_grad))
        return Var(self, len(self.nodes) - 1)

    def leaf(self, value, requires_grad: bool = True) -> Var:
        v = np.array(as_mat(value), dtype=np.float64, copy=True)
        return self._push("leaf", (), {}, v, requires_grad)

    def const(self, value) -> Var:
        return self.leaf(value, requires_grad=False)

    def apply(self, op: str, *args: Var, **attrs) -> Var:
        if op not in _REGISTRY:
            raise UnregisteredPrimitiveError(op)
        for a in args:
            if a.tape is not self:
                raise ValueError("all inputs must live on the same tape")
        value = _REGISTRY[op].forward(*(a.value for a in args), **attrs)
        rg = any(self.nodes[a.index].requires_grad for a in args)
        return self._push(op, tuple(a.index for a in args), attrs, value, rg)

    @property
    def leaves(self) -> list[Var]:
        return [Var(self, i) for i, n in enumerate(self.nodes) if n.op == "leaf"]

    def replay(self) -> list[np.ndarray]:
        """Recompute every node from the leaves."""
        vals: list[np.ndarray] = []
        for node in self.nodes:
            if node.op == "leaf":
                vals.append(node.value)
            else:
                fwd = _REGISTRY[node.op].forward
                vals.append(fwd(*(vals[i] for i in node.inputs), **node.attrs))
        return vals

    def __len__(self):
        return len(self.nodes)


def backward(output: Var) -> dict[int, np.ndarray]:
    """Gradients of a scalar ``output`` for every node index that needs one.

    Nodes that do not depend on a gradient-requiring leaf are skipped and
    get no entry. Use :func:`grad` to pull out specific leaves.
    """
    tape = output.tape
    if output.shape != (1, 1):
        raise ValueError(f"backward needs a scalar (1x1) output, got {output.shape}")
    for node in tape.nodes[: output.index + 1]:
        if node.op != "leaf" and node.op not in _REGISTRY:
            raise UnregisteredPrimitiveError(node.op)
    grads: dict[int, np.ndarray] = {output.index: np.ones((1, 1))}
    for idx in range(output.index, -1, -1):
        g = grads.get(idx)
        node = tape.nodes[idx]
        if g is None or node.op == "leaf" or not node.requires_grad:
            continue
        ins = [tape.nodes[i].value for i in node.inputs]
        in_grads = _REGISTRY[node.op].adjoint(g, node.value, *ins, **node.attrs)
        for i, gi in zip(node.inputs, in_grads):
            if gi is None or not tape.nodes[i].requires_grad:
                continue
            if i in grads:
                grads[i] = grads[i] + gi
            else:
                grads[i] = gi
    return grads


def grad(output: Var, wrt) -> list[np.ndarray]:
    """Gradients of ``output`` with respect to each Var in ``wrt`` (zeros if unreachable)."""
    g = backward(output)
    return [g.get(v.index, np.zeros_like(v.value)) for v in wrt]


# ---------------------------------------------------------------------------
# primitives


def _colsum(g):
    return g.sum(axis=0, keepdims=True)


@primitive("matmul")
def _matmul(a, b):
    return numkit.matmul(a, b)


@_matmul.adjoint
def _(g, out, a, b):
    return numkit.matmul(g, b.T), numkit.matmul(a.T, g)


@primitive("transpose")
def _transpose(a):
    return np.ascontiguousarray(a.T)


@_transpose.adjoint
def _(g, out, a):
    return (np.ascontiguousarray(g.T),)


@primitive("hadamard")
def _hadamard(a, b):
    return numkit.hadamard(a, b)


@_hadamard.adjoint
def _(g, out, a, b):
    return g * b, g * a


@primitive("add")
def _add(a, b):
    if a.shape != b.shape:
        raise ValueError(f"add shape mismatch {a.shape} vs {b.shape}")
    return a + b


@_add.adjoint
def _(g, out, a, b):
    return g, g


@primitive("sub")
def _sub(a, b):
    if a.shape != b.shape:
        raise ValueError(f"sub shape mismatch {a.shape} vs {b.shape}")
    return a - b


@_sub.adjoint
def _(g, out, a, b):
    return g, -g


@primitive("scale")
def _scale(a, c):
    return a * c


@_scale.adjoint
def _(g, out, a, c):
    return (g * c,)


@primitive("add_row")
def _add_row(a, v):
    """``a`` plus the row vector ``v`` broadcast down every row."""
    if v.shape != (1, a.shape[1]):
        raise ValueError(f"add_row needs a 1x{a.shape[1]} vector, got {v.shape}")
    return a + v


@_add_row.adjoint
def _(g, out, a, v):
    return g, _colsum(g)


@primitive("div_row")
def _div_row(a, v):
    if v.shape != (1, a.shape[1]):
        raise ValueError(f"div_row needs a 1x{a.shape[1]} vector, got {v.shape}")
    return a / v


@_div_row.adjoint
def _(g, out, a, v):
    return g / v, -_colsum(g * out) / v


@primitive("colsum")
def _colsum_fwd(a):
    return _colsum(a)


@_colsum_fwd.adjoint
def _(g, out, a):
    return (np.broadcast_to(g, a.shape).copy(),)


@primitive("sum")
def _sum(a):
    return np.array([[a.sum()]])


@_sum.adjoint
def _(g, out, a):
    return (np.full(a.shape, g[0, 0]),)


@primitive("row_softmax")
def _row_softmax(s, mask=None):
    return numkit.row_softmax(s, mask)


@_row_softmax.adjoint
def _(g, p, s, mask=None):
    return (p * (g - np.sum(g * p, axis=1, keepdims=True)),)


@primitive("lu_solve")
def _lu_solve(a, b):
    return numkit.lu_solve(a, b)


@_lu_solve.adjoint
def _(g, x, a, b):
    gb = numkit.lu_solve(a.T, g)
    return -numkit.matmul(gb, x.T), gb


@primitive("log_clamp")
def _log_clamp(a, eps=1e-30):
    return np.log(np.maximum(a, eps))


@_log_clamp.adjoint
def _(g, out, a, eps=1e-30):
    return (np.where(a > eps, g / np.maximum(a, eps), 0.0),)


@primitive("relu")
def _relu(a):
    return np.maximum(a, 0.0)


@_relu.adjoint
def _(g, out, a):
    return (np.where(a > 0.0, g, 0.0),)


@primitive("pairwise_dist")
def _pairwise_dist(z):
    """Euclidean distances between rows, from explicit differences (exact zero diagonal)."""
    diff = z[:, None, :] - z[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


@_pairwise_dist.adjoint
def _(g, out, z):
    # d D_ij / d z_i = (z_i - z_j) / D_ij; coincident points contribute nothing
    safe = np.where(out > 0.0, out, 1.0)
    w = np.where(out > 0.0, (g + g.T) / safe, 0.0)
    return (w.sum(axis=1, keepdims=True) * z - w @ z,)


@primitive("slice")
def _slice(a, r0, r1, c0, c1):
    return a[r0:r1, c0:c1].copy()


@_slice.adjoint
def _(g, out, a, r0, r1, c0, c1):
    ga = np.zeros_like(a)
    ga[r0:r1, c0:c1] = g
    return (ga,)


@primitive("vstack")
def _vstack(a, b):
    return np.vstack([a, b])


@_vstack.adjoint
def _(g, out, a, b):
    return g[: a.shape[0]], g[a.shape[0]:]


@primitive("stop_gradient")
def _stop_gradient(a):
    return a.copy()


@_stop_gradient.adjoint
def _(g, out, a):
    return (None,)


# ---------------------------------------------------------------------------
# functional spellings


def matmul(a: Var, b: Var) -> Var:
    return a.tape.apply("matmul", a, b)


def hadamard(a: Var, b: Var) -> Var:
    return a.tape.apply("hadamard", a, b)


def row_softmax(s: Var, mask=None) -> Var:
    return s.tape.apply("row_softmax", s, mask=mask)


def lu_solve(a: Var, b: Var) -> Var:
    return a.tape.apply("lu_solve", a, b)


def log(a: Var, eps: float = 1e-30) -> Var:
    return a.tape.apply("log_clamp", a, eps=eps)


def relu(a: Var) -> Var:
    return a.tape.apply("relu", a)


def pairwise_dist(z: Var) -> Var:
    return z.tape.apply("pairwise_dist", z)


def total(a: Var) -> Var:
    return a.tape.apply("sum", a)


def colsum(a: Var) -> Var:
    return a.tape.apply("colsum", a)


def add_row(a: Var, v: Var) -> Var:
    return a.tape.apply("add_row", a, v)


def div_row(a: Var, v: Var) -> Var:
    return a.tape.apply("div_row", a, v)


def vstack(a: Var, b: Var) -> Var:
    return a.tape.apply("vstack", a, b)


def stop_gradient(a: Var) -> Var:
    return a.tape.apply("stop_gradient", a)


# ---------------------------------------------------------------------------
# finite differences


def relative_error(a, n, floor: float = 1e-8) -> np.ndarray:
    a, n = np.asarray(a), np.asarray(n)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


@dataclass
class GradReport:
    analytic: np.ndarray | None
    numeric: np.ndarray
    max_rel_err: float
    tol: float
    worst: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.max_rel_err < self.tol


def finite_diff_check(f: Callable[[np.ndarray], float], at, h: float = 1e-5,
                      analytic=None, tol: float = 1e-5, n_worst: int = 5) -> GradReport:
    """Central-difference gradient of ``f`` at ``at``, compared against ``analytic``."""
    if not 1e-7 <= h <= 1e-3:
        raise ValueError("step h must lie in [1e-7, 1e-3]")
    x = np.array(as_mat(at), dtype=np.float64, copy=True)
    num = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        orig = x[idx]
        x[idx] = orig + h
        fp = float(f(x.copy()))
        x[idx] = orig - h
        fm = float(f(x.copy()))
        x[idx] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericalError(f"non-finite evaluation at perturbed entry {idx}")
        num[idx] = (fp - fm) / (2.0 * h)
    if analytic is None:
        return GradReport(None, num, float("nan"), tol)
    analytic = as_mat(analytic).reshape(x.shape)
    rel = relative_error(analytic, num)
    order = np.argsort(rel, axis=None)[::-1][:n_worst]
    worst = [
        (tuple(int(i) for i in np.unravel_index(k, x.shape)),
         float(analytic.flat[k]), float(num.flat[k]), float(rel.flat[k]))
        for k in order
    ]
    return GradReport(analytic, num, float(rel.max()) if rel.size else 0.0, tol, worst)
