"""Reverse-mode automatic differentiation over dense float64 arrays.

Everything is 64-bit and row-major.  Operations record onto an explicit
``Tape`` (a Wengert list, one record per op in execution order) while one is
active; ``backward`` replays the tape once in reverse and accumulates
gradients additively across fan-out.  Broadcasting is deliberately limited to
scalar-with-tensor so every backward rule stays small enough to audit by hand;
anything else raises ``DimensionError``.

A forward pass that produces NaN or Inf from finite inputs raises
``DomainError`` immediately: overflow is an error, not a silent state.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DimensionError, DomainError

_LOCAL = threading.local()


def _tape_stack():
    stack = getattr(_LOCAL, "tapes", None)
    if stack is None:
        stack = []
        _LOCAL.tapes = stack
    return stack


def active_tape():
    """The innermost active Tape for this thread, or None."""
    stack = _tape_stack()
    return stack[-1] if stack else None


class Record:
    """One executed operation: kind, input tensors, output tensor, context."""

    __slots__ = ("kind", "inputs", "output", "ctx")

    def __init__(self, kind, inputs, output, ctx):
        self.kind = kind
        self.inputs = inputs
        self.output = output
        self.ctx = ctx


class Tape:
    """Ordered list of operation records; execution order is a topological order."""

    def __init__(self):
        self.records = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _tape_stack().pop()
        if popped is not self:  # pragma: no cover - misuse guard
            raise ContractError("tape stack corrupted: exited a tape that is not innermost")
        return False


class Tensor:
    """A dense float64 array plus gradient bookkeeping."""

    __slots__ = ("values", "requires_grad", "grad", "tape")

    def __init__(self, values, requires_grad=False):
        arr = np.asarray(values, dtype=np.float64)
        if not arr.flags.c_contiguous:  # keep rank-0 shapes as-is
            arr = np.ascontiguousarray(arr)
        self.values = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.tape = None

    @property
    def shape(self):
        return self.values.shape

    @property
    def size(self):
        return self.values.size

    def item(self):
        if self.values.size != 1:
            raise ContractError("item() requires a scalar tensor")
        return float(self.values)

    def detach(self):
        """A constant copy of this tensor's current values."""
        return Tensor(self.values.copy())

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return subtract(self, _as_tensor(other))

    def __rsub__(self, other):
        return subtract(_as_tensor(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return multiply(self, _as_tensor(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def __getitem__(self, key):
        return narrow(self, key)

    def sum(self):
        return reduce_sum(self)

    def mean(self):
        return reduce_mean(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={tuple(self.values.shape)}{flag})"


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def constant(values):
    """A tensor that never requires gradient."""
    return Tensor(values, requires_grad=False)


def _emit(kind, inputs, out_values, ctx=None):
    if not np.all(np.isfinite(out_values)):
        raise DomainError(f"{kind}: non-finite result (overflow or invalid operand)")
    out = Tensor.__new__(Tensor)
    out.values = out_values
    out.grad = None
    out.requires_grad = any(t.requires_grad for t in inputs)
    out.tape = None
    if out.requires_grad:
        tape = active_tape()
        if tape is not None:
            out.tape = tape
            tape.records.append(Record(kind, inputs, out, ctx))
    return out


def _check_binary(a, b, kind):
    """Shapes must match exactly, or one operand must have exactly one element."""
    if a.values.shape == b.values.shape:
        return
    if a.values.size == 1 or b.values.size == 1:
        return
    raise DimensionError(
        f"{kind}: shapes {a.values.shape} and {b.values.shape} differ and neither is scalar"
    )


def _reduce_to(grad, shape):
    """Collapse a gradient onto a (possibly scalar) operand shape."""
    if grad.shape == shape:
        return grad
    return np.asarray(grad.sum(), dtype=np.float64).reshape(shape)


# ---------------------------------------------------------------------------
# forward ops


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_binary(a, b, "add")
    return _emit("add", (a, b), a.values + b.values)


def subtract(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_binary(a, b, "subtract")
    return _emit("subtract", (a, b), a.values - b.values)


def multiply(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_binary(a, b, "multiply")
    return _emit("multiply", (a, b), a.values * b.values)


def scale(t, c):
    """Multiply by a python float constant (no gradient flows into c)."""
    t = _as_tensor(t)
    return _emit("scale", (t,), t.values * float(c), ctx=float(c))


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.values.ndim not in (1, 2) or b.values.ndim not in (1, 2):
        raise DimensionError(
            f"matmul: only rank-1/2 operands supported, got {a.values.ndim} and {b.values.ndim}"
        )
    inner_a = a.values.shape[-1]
    inner_b = b.values.shape[0]
    if inner_a != inner_b:
        raise DimensionError(
            f"matmul: inner dimensions disagree ({a.values.shape} @ {b.values.shape})"
        )
    return _emit("matmul", (a, b), a.values @ b.values)


def concatenate(tensors, axis=0):
    tensors = tuple(_as_tensor(t) for t in tensors)
    if not tensors:
        raise DimensionError("concatenate: need at least one tensor")
    ndim = tensors[0].values.ndim
    for t in tensors:
        if t.values.ndim != ndim:
            raise DimensionError("concatenate: rank mismatch")
    try:
        out = np.concatenate([t.values for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concatenate: {exc}") from None
    sizes = tuple(t.values.shape[axis] for t in tensors)
    return _emit("concatenate", tensors, out, ctx=(axis, sizes))


def narrow(t, key):
    """Basic indexing (ints and slices); gradient scatters back additively."""
    t = _as_tensor(t)
    picked = np.array(t.values[key], dtype=np.float64)
    return _emit("slice", (t,), picked, ctx=key)


def sigmoid(t):
    t = _as_tensor(t)
    x = t.values
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _emit("sigmoid", (t,), out, ctx=out)


def tanh(t):
    t = _as_tensor(t)
    out = np.tanh(t.values)
    return _emit("tanh", (t,), out, ctx=out)


def exp(t):
    t = _as_tensor(t)
    with np.errstate(over="ignore"):
        out = np.exp(t.values)
    return _emit("exp", (t,), out, ctx=out)


def log(t):
    t = _as_tensor(t)
    if np.any(t.values <= 0.0):
        raise DomainError("log: non-positive input")
    return _emit("log", (t,), np.log(t.values))


def softmax(t):
    """Softmax over the last axis, with max subtraction for stability."""
    t = _as_tensor(t)
    if t.values.ndim < 1 or t.values.shape[-1] < 1:
        raise DimensionError("softmax: need at least one element on the last axis")
    shifted = t.values - t.values.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)
    return _emit("softmax", (t,), out, ctx=out)


def log_softmax(t):
    """Fused log(softmax(x)) over the last axis; never materializes the ratio."""
    t = _as_tensor(t)
    if t.values.ndim < 1 or t.values.shape[-1] < 1:
        raise DimensionError("log_softmax: need at least one element on the last axis")
    shifted = t.values - t.values.max(axis=-1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    return _emit("log_softmax", (t,), out, ctx=out)


def reduce_sum(t):
    t = _as_tensor(t)
    return _emit("sum", (t,), np.asarray(t.values.sum(), dtype=np.float64))


def reduce_mean(t):
    t = _as_tensor(t)
    if t.values.size == 0:
        raise DimensionError("mean: empty tensor")
    return _emit("mean", (t,), np.asarray(t.values.mean(), dtype=np.float64))


def add_n(tensors):
    """Sum a non-empty sequence of same-shaped tensors."""
    tensors = list(tensors)
    if not tensors:
        raise DimensionError("add_n: need at least one tensor")
    total = tensors[0] if isinstance(tensors[0], Tensor) else _as_tensor(tensors[0])
    for t in tensors[1:]:
        total = add(total, t)
    return total


# ---------------------------------------------------------------------------
# backward rules


def _bk_add(rec, g):
    a, b = rec.inputs
    return (_reduce_to(g, a.values.shape), _reduce_to(g, b.values.shape))


def _bk_subtract(rec, g):
    a, b = rec.inputs
    return (_reduce_to(g, a.values.shape), _reduce_to(-g, b.values.shape))


def _bk_multiply(rec, g):
    a, b = rec.inputs
    return (_reduce_to(g * b.values, a.values.shape), _reduce_to(g * a.values, b.values.shape))


def _bk_scale(rec, g):
    return (g * rec.ctx,)


def _bk_matmul(rec, g):
    a, b = rec.inputs
    av, bv = a.values, b.values
    if av.ndim == 2 and bv.ndim == 2:
        return (g @ bv.T, av.T @ g)
    if av.ndim == 2 and bv.ndim == 1:
        return (np.outer(g, bv), av.T @ g)
    if av.ndim == 1 and bv.ndim == 2:
        return (bv @ g, np.outer(av, g))
    return (g * bv, g * av)  # dot product, g is scalar


def _bk_concatenate(rec, g):
    axis, sizes = rec.ctx
    splits = np.cumsum(sizes[:-1])
    return tuple(np.ascontiguousarray(piece) for piece in np.split(g, splits, axis=axis))


def _bk_slice(rec, g):
    (a,) = rec.inputs
    out = np.zeros_like(a.values)
    np.add.at(out, rec.ctx, g)
    return (out,)


def _bk_sigmoid(rec, g):
    s = rec.ctx
    return (g * s * (1.0 - s),)


def _bk_tanh(rec, g):
    y = rec.ctx
    return (g * (1.0 - y * y),)


def _bk_exp(rec, g):
    return (g * rec.ctx,)


def _bk_log(rec, g):
    (a,) = rec.inputs
    return (g / a.values,)


def _bk_softmax(rec, g):
    s = rec.ctx
    return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)


def _bk_log_softmax(rec, g):
    y = rec.ctx
    return (g - np.exp(y) * g.sum(axis=-1, keepdims=True),)


def _bk_sum(rec, g):
    (a,) = rec.inputs
    return (np.full(a.values.shape, float(g)),)


def _bk_mean(rec, g):
    (a,) = rec.inputs
    return (np.full(a.values.shape, float(g) / a.values.size),)


# Dispatch table; tests corrupt entries on purpose to prove the verifier notices.
BACKWARD_RULES = {
    "add": _bk_add,
    "subtract": _bk_subtract,
    "multiply": _bk_multiply,
    "scale": _bk_scale,
    "matmul": _bk_matmul,
    "concatenate": _bk_concatenate,
    "slice": _bk_slice,
    "sigmoid": _bk_sigmoid,
    "tanh": _bk_tanh,
    "exp": _bk_exp,
    "log": _bk_log,
    "softmax": _bk_softmax,
    "log_softmax": _bk_log_softmax,
    "sum": _bk_sum,
    "mean": _bk_mean,
}

_FORWARD = {
    "add": add,
    "subtract": subtract,
    "multiply": multiply,
    "scale": scale,
    "matmul": matmul,
    "concatenate": lambda *ts, axis=0: concatenate(ts, axis=axis),
    "slice": narrow,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "exp": exp,
    "log": log,
    "softmax": softmax,
    "log_softmax": log_softmax,
    "sum": reduce_sum,
    "mean": reduce_mean,
}

OP_KINDS = tuple(sorted(_FORWARD))


def forward_op(kind, inputs, **kwargs):
    """Apply an operation by kind name; used by generic per-op property checks."""
    try:
        fn = _FORWARD[kind]
    except KeyError:
        raise ContractError(f"unknown operation kind {kind!r}") from None
    return fn(*inputs, **kwargs)


def backward(root):
    """Accumulate d(root)/d(x) into ``x.grad`` for every reachable tensor.

    ``root`` must be a scalar.  Each tape record is visited exactly once, in
    reverse execution order; records whose outputs received no gradient are
    skipped.  Gradients are accumulated out-of-place, so fan-out adds up and
    no rule may mutate its incoming gradient.
    """
    if root.values.size != 1:
        raise ContractError(f"backward: root must be scalar, got shape {root.values.shape}")
    if not root.requires_grad:
        raise ContractError("backward: root does not require grad")
    root.grad = np.ones_like(root.values)
    tape = root.tape
    if tape is None:
        return  # leaf scalar: gradient w.r.t. itself is 1
    for rec in reversed(tape.records):
        g = rec.output.grad
        if g is None:
            continue
        grads = BACKWARD_RULES[rec.kind](rec, g)
        for inp, gi in zip(rec.inputs, grads):
            if gi is None or not inp.requires_grad:
                continue
            if inp.grad is None:
                inp.grad = gi
            else:
                inp.grad = inp.grad + gi


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckReport:
    """Outcome of comparing analytic and central-difference gradients."""

    max_rel_error: float
    worst_index: tuple
    analytic: np.ndarray
    numeric: np.ndarray
    passed: bool


def grad_check(f, x, step=2e-3, tol=1e-5):
    """Compare analytic and numeric gradients of scalar-valued ``f`` at ``x``.

    ``f`` takes the tensor ``x`` and returns a scalar Tensor; it must be
    deterministic (freeze any sampling).  The numeric side is a Richardson
    extrapolation of central differences at ``step`` and ``step/2``, which
    cancels the quadratic truncation term and resolves coordinates whose
    gradients sit many orders below the loss scale.  Relative error uses the
    denominator max(|analytic|, |numeric|, 1e-8) per coordinate.  Other
    parameters captured by ``f`` may be left with stale ``grad`` fields;
    callers that care should zero them afterwards.
    """
    was_required = x.requires_grad
    x.requires_grad = True
    x.grad = None
    with Tape():
        y = f(x)
        if not isinstance(y, Tensor) or y.values.size != 1:
            x.requires_grad = was_required
            raise ContractError("grad_check: f must return a scalar Tensor")
        backward(y)
    if x.grad is None:
        analytic = np.zeros_like(x.values)
    else:
        analytic = np.array(x.grad, dtype=np.float64).reshape(x.values.shape)
    x.grad = None

    numeric = np.empty_like(x.values)
    flat = x.values.reshape(-1)
    nflat = numeric.reshape(-1)
    half = 0.5 * step
    for i in range(flat.size):
        orig = flat[i]

        def probe(offset):
            flat[i] = orig + offset
            return float(f(x).values)

        coarse = (probe(step) - probe(-step)) / (2.0 * step)
        fine = (probe(half) - probe(-half)) / step
        flat[i] = orig
        nflat[i] = (4.0 * fine - coarse) / 3.0
    x.requires_grad = was_required

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    rel = np.abs(analytic - numeric) / denom
    if rel.size == 0:
        return GradCheckReport(0.0, (), analytic, numeric, True)
    worst = np.unravel_index(int(np.argmax(rel)), rel.shape) if rel.ndim else ()
    max_rel = float(rel.max())
    return GradCheckReport(max_rel, worst, analytic, numeric, max_rel <= tol)
