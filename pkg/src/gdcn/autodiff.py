"""Dense float64 tensors with reverse-mode differentiation on an explicit tape.

Ops record onto the innermost active ``Tape`` (define-by-run, rebuilt every
forward pass).  Outside any tape they just compute values, which keeps
inference passes free of graph bookkeeping.  Everything is 64-bit and
single-threaded per tape; separate tapes over disjoint data are independent.

Shape rules per op (no implicit broadcasting beyond the forms listed):

* ``matmul(a, b)``       -- a is (n, k), b is (k, m)
* ``transpose(a)``       -- a is 2-D
* ``add/sub(a, b)``      -- same shape, or b is a (k,) / (1, k) row vector
                            against a (n, k) matrix (bias form)
* ``mul/div(a, b)``      -- same shape, or b is (n, 1) or (1, k) against (n, k)
* ``scale/add_scalar``   -- any shape, scalar is a plain float
* ``concat(ts, axis)``   -- all 1-D, or all 2-D matching on the other axis
* ``relu/tanh/exp/log/sqrt/maximum_scalar`` -- elementwise, any shape
* ``mean/sum_all/sum_sq``-- any shape, produce a scalar
* ``row_sum(a)``         -- a is (n, k), produces (n, 1)
* ``cosine_sim(a, b)``   -- two 1-D vectors -> scalar, or two 2-D matrices
                            with equal column count -> (n, m) pairwise matrix

relu/maximum_scalar take derivative 0 exactly at the kink.  log and sqrt
require strictly positive inputs, div a nowhere-zero divisor.
"""

from __future__ import annotations

import numpy as np

_SPEC_KINDS = (
    "matmul", "add", "scale", "concat", "relu", "tanh",
    "mean", "sum_sq", "exp", "log", "cosine_sim",
)


class ShapeError(ValueError):
    """Raised when op inputs do not conform; names the op and the shapes."""

    def __init__(self, op, *shapes, detail=""):
        self.op = op
        self.shapes = [tuple(s) for s in shapes]
        msg = f"{op}: incompatible shapes {self.shapes}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


_TAPE_STACK = []


class Tape:
    """Ordered record of op nodes; creation order is a topological order."""

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _TAPE_STACK.pop()
        return False


def _active_tape():
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class Tensor:
    """Row-major float64 buffer, optionally a recorded node of a tape.

    Leaves are built directly (``Tensor(values)`` or ``param``); op results
    carry parent links and a vjp closure only while a tape is active.
    """

    __slots__ = ("values", "parents", "vjp", "requires_grad", "op", "name")

    def __init__(self, values, requires_grad=False, name=None):
        self.values = np.ascontiguousarray(values, dtype=np.float64)
        self.parents = ()
        self.vjp = None
        self.op = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return list(self.values.shape)

    @property
    def size(self):
        return self.values.size

    def item(self):
        if self.values.size != 1:
            raise ShapeError("item", self.values.shape, detail="expected scalar")
        return float(self.values.reshape(()))

    def check_finite(self):
        return bool(np.isfinite(self.values).all())

    def __repr__(self):
        tag = self.name or self.op or "tensor"
        return f"Tensor({tag}, shape={tuple(self.values.shape)})"

    # arithmetic sugar; floats route to the scalar ops
    def __add__(self, other):
        return add_scalar(self, other) if isinstance(other, (int, float)) else add(self, other)

    def __radd__(self, other):
        return add_scalar(self, other)

    def __sub__(self, other):
        return add_scalar(self, -other) if isinstance(other, (int, float)) else sub(self, other)

    def __mul__(self, other):
        return scale(self, other) if isinstance(other, (int, float)) else mul(self, other)

    def __rmul__(self, other):
        return scale(self, other)

    def __truediv__(self, other):
        return scale(self, 1.0 / other) if isinstance(other, (int, float)) else div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def param(values, name=None):
    """A trainable leaf tensor."""
    return Tensor(values, requires_grad=True, name=name)


def _node(op, values, parents, vjp):
    out = Tensor(values)
    tape = _active_tape()
    if tape is not None:
        out.op = op
        out.parents = tuple(parents)
        out.vjp = vjp
        tape.nodes.append(out)
    return out


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# primitives


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    av, bv = a.values, b.values
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise ShapeError("matmul", av.shape, bv.shape)
    out = av @ bv

    def vjp(g):
        return g @ bv.T, av.T @ g

    return _node("matmul", out, (a, b), vjp)


def transpose(a):
    a = _as_tensor(a)
    if a.values.ndim != 2:
        raise ShapeError("transpose", a.values.shape)
    return _node("transpose", a.values.T.copy(), (a,), lambda g: (g.T,))


def _bias_form(ashape, bshape):
    # (n,k) against (k,) or (1,k)
    return (
        len(ashape) == 2
        and (bshape == (ashape[1],) or bshape == (1, ashape[1]))
    )


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    av, bv = a.values, b.values
    if av.shape == bv.shape:
        vjp = lambda g: (g, g)
    elif _bias_form(av.shape, bv.shape):
        vjp = lambda g: (g, g.sum(axis=0).reshape(bv.shape))
    else:
        raise ShapeError("add", av.shape, bv.shape)
    return _node("add", av + bv, (a, b), vjp)


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    av, bv = a.values, b.values
    if av.shape == bv.shape:
        vjp = lambda g: (g, -g)
    elif _bias_form(av.shape, bv.shape):
        vjp = lambda g: (g, -g.sum(axis=0).reshape(bv.shape))
    else:
        raise ShapeError("sub", av.shape, bv.shape)
    return _node("sub", av - bv, (a, b), vjp)


def _factor_form(ashape, bshape):
    # (n,k) against (n,1) column or (1,k) row
    return (
        len(ashape) == 2
        and len(bshape) == 2
        and (
            bshape == (ashape[0], 1)
            or bshape == (1, ashape[1])
        )
    )


def _reduce_to(g, shape):
    if g.shape == shape:
        return g
    if shape[0] == 1:
        return g.sum(axis=0, keepdims=True)
    return g.sum(axis=1, keepdims=True)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    av, bv = a.values, b.values
    if av.shape != bv.shape and not _factor_form(av.shape, bv.shape):
        raise ShapeError("mul", av.shape, bv.shape)

    def vjp(g):
        return _reduce_to(g * bv, av.shape), _reduce_to(g * av, bv.shape)

    return _node("mul", av * bv, (a, b), vjp)


def div(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    av, bv = a.values, b.values
    if av.shape != bv.shape and not _factor_form(av.shape, bv.shape):
        raise ShapeError("div", av.shape, bv.shape)
    if np.any(bv == 0.0):
        raise ValueError("div: divisor contains zeros")
    out = av / bv

    def vjp(g):
        return _reduce_to(g / bv, av.shape), _reduce_to(-g * av / (bv * bv), bv.shape)

    return _node("div", out, (a, b), vjp)


def scale(a, c):
    a = _as_tensor(a)
    c = float(c)
    return _node("scale", a.values * c, (a,), lambda g: (g * c,))


def add_scalar(a, c):
    a = _as_tensor(a)
    c = float(c)
    return _node("add_scalar", a.values + c, (a,), lambda g: (g,))


def concat(tensors, axis=-1):
    ts = [_as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat", detail="no inputs")
    ndim = ts[0].values.ndim
    if ndim not in (1, 2) or any(t.values.ndim != ndim for t in ts):
        raise ShapeError("concat", *[t.values.shape for t in ts])
    ax = axis if axis >= 0 else ndim + axis
    other = 1 - ax
    if ndim == 2 and len({t.values.shape[other] for t in ts}) != 1:
        raise ShapeError("concat", *[t.values.shape for t in ts])
    out = np.concatenate([t.values for t in ts], axis=ax)
    widths = [t.values.shape[ax] for t in ts]
    offsets = np.cumsum([0] + widths)

    def vjp(g):
        return tuple(
            g[offsets[i]:offsets[i + 1]] if ax == 0 else g[:, offsets[i]:offsets[i + 1]]
            for i in range(len(ts))
        )

    return _node("concat", out, ts, vjp)


def relu(a):
    a = _as_tensor(a)
    mask = a.values > 0.0
    return _node("relu", np.where(mask, a.values, 0.0), (a,), lambda g: (g * mask,))


def tanh(a):
    a = _as_tensor(a)
    out = np.tanh(a.values)
    return _node("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def exp(a):
    a = _as_tensor(a)
    out = np.exp(a.values)
    return _node("exp", out, (a,), lambda g: (g * out,))


def log(a):
    a = _as_tensor(a)
    if np.any(a.values <= 0.0):
        raise ValueError("log: requires strictly positive inputs")
    return _node("log", np.log(a.values), (a,), lambda g: (g / a.values,))


def sqrt(a):
    a = _as_tensor(a)
    if np.any(a.values <= 0.0):
        raise ValueError("sqrt: requires strictly positive inputs")
    out = np.sqrt(a.values)
    return _node("sqrt", out, (a,), lambda g: (g / (2.0 * out),))


def maximum_scalar(a, c):
    """Elementwise max(a, c); derivative is 0 where the clamp is active."""
    a = _as_tensor(a)
    c = float(c)
    mask = a.values > c
    return _node("maximum_scalar", np.where(mask, a.values, c), (a,), lambda g: (g * mask,))


def mean(a):
    a = _as_tensor(a)
    n = a.values.size
    out = np.asarray(a.values.mean())
    return _node("mean", out, (a,), lambda g: (np.full_like(a.values, g.reshape(()) / n),))


def sum_all(a):
    a = _as_tensor(a)
    out = np.asarray(a.values.sum())
    return _node("sum_all", out, (a,), lambda g: (np.full_like(a.values, g.reshape(())),))


def sum_sq(a):
    a = _as_tensor(a)
    out = np.asarray((a.values * a.values).sum())
    return _node("sum_sq", out, (a,), lambda g: (2.0 * g.reshape(()) * a.values,))


def row_sum(a):
    a = _as_tensor(a)
    if a.values.ndim != 2:
        raise ShapeError("row_sum", a.values.shape)
    out = a.values.sum(axis=1, keepdims=True)

    def vjp(g):
        return (np.repeat(g, a.values.shape[1], axis=1),)

    return _node("row_sum", out, (a,), vjp)


# ---------------------------------------------------------------------------
# composites (differentiable, built from primitives)

_NORM_EPS = 1e-24


def normalize_rows(a):
    """Divide each row by its L2 norm (guarded so zero rows map to zero)."""
    nsq = add_scalar(row_sum(mul(a, a)), _NORM_EPS)
    return div(a, sqrt(nsq))


def cosine_sim(a, b):
    """Cosine similarity: two vectors -> scalar, two matrices -> pairwise (n, m)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.values.ndim == 1 and b.values.ndim == 1:
        if a.values.shape != b.values.shape:
            raise ShapeError("cosine_sim", a.values.shape, b.values.shape)
        dot = sum_all(mul(a, b))
        na = sqrt(add_scalar(sum_sq(a), _NORM_EPS))
        nb = sqrt(add_scalar(sum_sq(b), _NORM_EPS))
        return div(dot, mul(na, nb))
    if a.values.ndim == 2 and b.values.ndim == 2 and a.values.shape[1] == b.values.shape[1]:
        return matmul(normalize_rows(a), transpose(normalize_rows(b)))
    raise ShapeError("cosine_sim", a.values.shape, b.values.shape)


# ---------------------------------------------------------------------------
# dispatch, backward, gradient checking

_DISPATCH = {
    "matmul": matmul,
    "add": add,
    "scale": scale,
    "concat": None,  # special-cased: takes the input list whole
    "relu": relu,
    "tanh": tanh,
    "mean": mean,
    "sum_sq": sum_sq,
    "exp": exp,
    "log": log,
    "cosine_sim": cosine_sim,
    "sub": sub,
    "mul": mul,
    "div": div,
    "sqrt": sqrt,
    "transpose": transpose,
    "add_scalar": add_scalar,
    "maximum_scalar": maximum_scalar,
    "sum_all": sum_all,
    "row_sum": row_sum,
}


def forward_op(kind, *inputs, **kwargs):
    """Apply a primitive by name, recording it on the active tape."""
    if kind == "concat":
        return concat(list(inputs), **kwargs)
    fn = _DISPATCH.get(kind)
    if fn is None:
        raise ValueError(f"forward_op: unknown kind {kind!r}")
    return fn(*inputs, **kwargs)


def backward(tape, root, wrt=None):
    """Gradient of a scalar root w.r.t. every leaf reachable on the tape.

    Returns a dict keyed by leaf Tensor.  Leaves referenced by the tape (or
    listed in ``wrt``) that lie on no path to the root get exact zeros.
    Each tape node is visited at most once, in reverse recording order.
    """
    if root.values.size != 1:
        raise ShapeError("backward", root.values.shape, detail="root must be scalar")
    pending = {id(root): np.ones_like(root.values)}
    leaf_grads = {}

    def settle(parent, g):
        if parent.vjp is not None:  # interior node: defer to its own visit
            acc = pending.get(id(parent))
            pending[id(parent)] = g if acc is None else acc + g
        elif parent.requires_grad:
            acc = leaf_grads.get(parent)
            leaf_grads[parent] = g.copy() if acc is None else acc + g

    if root.vjp is None:
        if root.requires_grad:
            leaf_grads[root] = np.ones_like(root.values)
    for node in reversed(tape.nodes):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if pg is not None:
                settle(parent, pg)

    # leaves the root never reaches still appear, with exact zeros
    for node in tape.nodes:
        for parent in node.parents:
            if parent.vjp is None and parent.requires_grad and parent not in leaf_grads:
                leaf_grads[parent] = np.zeros_like(parent.values)
    if wrt is not None:
        for p in wrt:
            if p not in leaf_grads:
                leaf_grads[p] = np.zeros_like(p.values)
    return leaf_grads


def grad_check(f, params, step=1e-5):
    """Max relative error between tape gradients of f() and central differences.

    ``f`` is a no-argument callable returning a scalar Tensor; it must be a
    pure function of ``params``.  Error per element is
    |analytic - numeric| / max(1, |analytic|).
    """
    if step <= 0:
        raise ValueError("grad_check: step must be positive")
    with Tape() as tape:
        out = f()
    analytic = backward(tape, out, wrt=params)
    worst = 0.0
    for p in params:
        a = analytic[p].reshape(-1)
        flat = p.values.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = f().item()
            flat[i] = orig - step
            fm = f().item()
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * step)
            err = abs(a[i] - numeric) / max(1.0, abs(a[i]))
            if err > worst:
                worst = err
    return worst
