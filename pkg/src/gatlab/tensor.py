"""Dense 2-D float64 tensors with define-by-run reverse-mode differentiation.

Every differentiable op appends one record to the active :class:`Tape` when
at least one input requires a gradient. ``loss.backward()`` walks that tape
in reverse, visiting each record once, and then clears it.

    >>> x = Tensor([[1.0, 2.0]], requires_grad=True)
    >>> y = (x * x).sum()
    >>> y.backward()
    >>> x.grad
    array([[2., 4.]])
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager

import numpy as np

from . import kernels
from .errors import ContractError, DegenerateNeighborhoodError, DimensionError

DEFAULT_SLOPE = 0.2

_tape_ids = itertools.count(1)
_tape_stack: list["Tape"] = []
_default_tape: "Tape | None" = None
_grad_enabled = True


class Tape:
    """Ordered record of forward ops; inputs of a record always precede it."""

    def __init__(self):
        self.id = next(_tape_ids)
        self.records = []

    def record(self, out, inputs, backward_fn):
        out._tape = self
        out.tape_id = self.id
        self.records.append((out, inputs, backward_fn))

    def backward(self, loss):
        if loss.shape != (1, 1):
            raise ContractError(f"backward needs a 1x1 loss, got {loss.shape}")
        loss.grad = np.ones((1, 1))
        for out, inputs, backward_fn in reversed(self.records):
            if out.grad is None:
                continue
            grads = backward_fn(out.grad)
            for inp, g in zip(inputs, grads):
                if g is None or not inp.requires_grad:
                    continue
                # never mutate in place: backward fns may hand out shared views
                inp.grad = g if inp.grad is None else inp.grad + g
        self.records.clear()

    def __len__(self):
        return len(self.records)

    def __enter__(self):
        _tape_stack.append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack.remove(self)


def active_tape():
    global _default_tape
    if _tape_stack:
        return _tape_stack[-1]
    if _default_tape is None:
        _default_tape = Tape()
    return _default_tape


@contextmanager
def no_grad():
    """Disable tape recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _as_2d(data):
    arr = np.ascontiguousarray(data, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise DimensionError(f"tensors are 2-D, got array of shape {arr.shape}")
    return arr


class Tensor:
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False):
        self.data = _as_2d(data)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.tape_id = None
        self._tape = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def rows(self):
        return self.data.shape[0]

    @property
    def cols(self):
        return self.data.shape[1]

    @property
    def T(self):
        return transpose(self)

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def backward(self):
        tape = self._tape
        if tape is None:
            raise ContractError("tensor was not produced by a recorded op")
        tape.backward(self)
        global _default_tape
        if tape is _default_tape:
            _default_tape = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self):
        return mean(self)


def tensor(data, requires_grad=False):
    return data if isinstance(data, Tensor) else Tensor(data, requires_grad)


def _make(data, inputs, backward_fn):
    out = Tensor(data)
    if _grad_enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        active_tape().record(out, inputs, backward_fn)
    return out


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    if shape[0] == 1 and grad.shape[0] != 1:
        grad = grad.sum(axis=0, keepdims=True)
    if shape[1] == 1 and grad.shape[1] != 1:
        grad = grad.sum(axis=1, keepdims=True)
    return grad


def _check_broadcast(a, b, name):
    for x, y in zip(a.shape, b.shape):
        if x != y and x != 1 and y != 1:
            raise DimensionError(f"{name}: cannot broadcast {a.shape} with {b.shape}")


def add(a, b):
    a, b = tensor(a), tensor(b)
    _check_broadcast(a, b, "add")
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b):
    a, b = tensor(a), tensor(b)
    _check_broadcast(a, b, "sub")
    return _make(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)),
    )


def mul(a, b):
    a, b = tensor(a), tensor(b)
    _check_broadcast(a, b, "mul")
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def matmul(a, b):
    """Matrix product; raises :class:`DimensionError` naming both shapes."""
    a, b = tensor(a), tensor(b)
    if a.cols != b.rows:
        raise DimensionError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")

    def backward(g):
        return (
            g @ b.data.T if a.requires_grad else None,
            a.data.T @ g if b.requires_grad else None,
        )

    return _make(a.data @ b.data, (a, b), backward)


def transpose(a):
    return _make(a.data.T.copy(), (a,), lambda g: (g.T,))


def tsum(a, axis=None):
    if axis is None:
        return _make(a.data.sum().reshape(1, 1), (a,), lambda g: (np.broadcast_to(g, a.shape),))
    return _make(
        a.data.sum(axis=axis, keepdims=True),
        (a,),
        lambda g: (np.broadcast_to(g, a.shape),),
    )


def mean(a):
    n = a.data.size
    return _make(
        a.data.mean().reshape(1, 1),
        (a,),
        lambda g: (np.broadcast_to(g / n, a.shape),),
    )


def leaky_relu(x, slope=DEFAULT_SLOPE):
    """Elementwise ``max(x, slope*x)``; the gradient at exactly 0 is ``slope``."""
    if not 0.0 < slope < 1.0:
        raise ContractError(f"leaky_relu slope must lie in (0, 1), got {slope}")
    x = tensor(x)
    pos = x.data > 0
    return _make(
        np.where(pos, x.data, slope * x.data),
        (x,),
        lambda g: (np.where(pos, g, slope * g),),
    )


def relu(x):
    x = tensor(x)
    pos = x.data > 0
    return _make(x.data * pos, (x,), lambda g: (g * pos,))


def elu(x, alpha=1.0):
    x = tensor(x)
    pos = x.data > 0
    neg_part = alpha * np.expm1(np.minimum(x.data, 0.0))
    out = np.where(pos, x.data, neg_part)
    return _make(out, (x,), lambda g: (np.where(pos, g, g * (neg_part + alpha)),))


def identity(x):
    return x


def concat_rows(a, b):
    """Join each row of ``a`` with the matching row of ``b``: (m,p),(m,q) -> (m,p+q)."""
    a, b = tensor(a), tensor(b)
    if a.rows != b.rows:
        raise DimensionError(f"concat_rows: row counts differ, {a.shape} vs {b.shape}")
    p = a.cols
    return _make(
        np.concatenate([a.data, b.data], axis=1),
        (a, b),
        lambda g: (g[:, :p], g[:, p:]),
    )


def vstack(a, b):
    """Stack ``b`` below ``a``: (m,p),(n,p) -> (m+n,p)."""
    a, b = tensor(a), tensor(b)
    if a.cols != b.cols:
        raise DimensionError(f"vstack: column counts differ, {a.shape} vs {b.shape}")
    m = a.rows
    return _make(
        np.concatenate([a.data, b.data], axis=0),
        (a, b),
        lambda g: (g[:m], g[m:]),
    )


def gather_rows(x, index):
    """Select rows ``x[index]``; the backward pass scatter-adds into ``x``."""
    index = np.asarray(index, dtype=np.int64)
    n = x.rows
    return _make(x.data[index], (x,), lambda g: (kernels.segment_sum(g, index, n),))


def segment_sum(x, segment_ids, num_segments):
    """Sum rows of ``x`` sharing a segment id into ``num_segments`` output rows."""
    segment_ids = np.asarray(segment_ids, dtype=np.int64)
    if segment_ids.shape[0] != x.rows:
        raise DimensionError(
            f"segment_sum: {segment_ids.shape[0]} ids for {x.rows} rows"
        )
    out = kernels.segment_sum(x.data, segment_ids, num_segments)
    return _make(out, (x,), lambda g: (g[segment_ids],))


def segment_softmax(scores, segment_ids, num_segments=None):
    """Softmax of an ``|E| x 1`` score column within each segment.

    Each segment is shifted by its own max before exponentiation. Every id in
    ``range(num_segments)`` must own at least one edge.
    """
    scores = tensor(scores)
    if scores.cols != 1:
        raise DimensionError(f"segment_softmax expects an |E|x1 column, got {scores.shape}")
    segment_ids = np.asarray(segment_ids, dtype=np.int64)
    if segment_ids.shape[0] != scores.rows:
        raise DimensionError(
            f"segment_softmax: {segment_ids.shape[0]} ids for {scores.rows} scores"
        )
    if num_segments is None:
        num_segments = int(segment_ids.max()) + 1 if segment_ids.size else 0
    counts = np.bincount(segment_ids, minlength=num_segments)
    if counts.shape[0] > num_segments or np.any(counts[:num_segments] == 0):
        empty = np.flatnonzero(counts[:num_segments] == 0)
        raise DegenerateNeighborhoodError(
            f"segment_softmax: empty segment(s) {empty[:5].tolist()}"
        )
    s = scores.data[:, 0]
    seg_max = kernels.segment_max(s, segment_ids, num_segments)
    ex = np.exp(s - seg_max[segment_ids])
    denom = kernels.segment_sum(ex, segment_ids, num_segments)[:, 0]
    y = (ex / denom[segment_ids]).reshape(-1, 1)

    def backward(g):
        dot = kernels.segment_sum(g * y, segment_ids, num_segments)[:, 0]
        return (y * (g - dot[segment_ids].reshape(-1, 1)),)

    return _make(y, (scores,), backward)


def cross_entropy(logits, labels):
    """Mean softmax cross-entropy of ``logits`` (N x C) against integer labels."""
    logits = tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape[0] != logits.rows:
        raise DimensionError(f"cross_entropy: {labels.shape[0]} labels for {logits.rows} rows")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsum
    n = logits.rows
    loss = -logp[np.arange(n), labels].mean()

    def backward(g):
        p = np.exp(logp)
        p[np.arange(n), labels] -= 1.0
        return (p * (g[0, 0] / n),)

    return _make(np.array([[loss]]), (logits,), backward)


def _objective(f):
    out = f()
    if not isinstance(out, Tensor) or out.shape != (1, 1):
        shape = getattr(out, "shape", type(out).__name__)
        raise ContractError(f"grad_check needs a scalar-valued function, got {shape}")
    return out


def grad_check(f, x, eps=1e-5):
    """Largest ``|analytic - central difference| / max(1, |analytic|)``.

    ``f`` is called with no arguments and must return a 1x1 tensor computed
    from ``x`` (a tensor or a sequence of tensors).
    """
    params = [x] if isinstance(x, Tensor) else list(x)
    for p in params:
        p.requires_grad = True
        p.grad = None
    with Tape() as tape:
        out = _objective(f)
        tape.backward(out)
    analytic = [p.grad.copy() if p.grad is not None else np.zeros(p.shape) for p in params]

    worst = 0.0
    with no_grad():
        for p, a in zip(params, analytic):
            flat = p.data.reshape(-1)
            for idx in range(flat.size):
                orig = flat[idx]
                flat[idx] = orig + eps
                up = _objective(f).item()
                flat[idx] = orig - eps
                down = _objective(f).item()
                flat[idx] = orig
                numeric = (up - down) / (2.0 * eps)
                ana = a.reshape(-1)[idx]
                worst = max(worst, abs(ana - numeric) / max(1.0, abs(ana)))
    return worst


def slice_rows(x, start, stop):
    def backward(g):
        full = np.zeros(x.shape)
        full[start:stop] = g
        return (full,)

    return _make(x.data[start:stop], (x,), backward)


def slice_cols(x, start, stop):
    def backward(g):
        full = np.zeros(x.shape)
        full[:, start:stop] = g
        return (full,)

    return _make(x.data[:, start:stop], (x,), backward)


def weighted_aggregate(weights, values, src, segment_ids, num_segments):
    """``out[s] = sum over edges e in segment s of weights[e] * values[src[e]]``.

    Fused gather-scale-scatter; ``weights`` is an ``|E| x 1`` column.
    """
    src = np.asarray(src, dtype=np.int64)
    segment_ids = np.asarray(segment_ids, dtype=np.int64)
    if weights.shape != (src.shape[0], 1):
        raise DimensionError(f"weighted_aggregate: weights {weights.shape} for {src.shape[0]} edges")
    out = kernels.weighted_gather_sum(weights.data, values.data, src, segment_ids, num_segments)

    def backward(g):
        d_w = kernels.edge_dot(g, values.data, segment_ids, src).reshape(-1, 1)
        d_v = kernels.weighted_gather_sum(weights.data, g, segment_ids, src, values.rows)
        return d_w, d_v

    return _make(out, (weights, values), backward)


def gatv2_edge_scores(left, right, bias, a, dst, src, slope=DEFAULT_SLOPE):
    """Fused ``a . LeakyReLU(left[dst] + right[src] + bias)`` for every edge."""
    dst = np.asarray(dst, dtype=np.int64)
    src = np.asarray(src, dtype=np.int64)
    width = left.cols
    if right.cols != width or bias.shape != (1, width) or a.shape != (width, 1):
        raise DimensionError(
            f"gatv2_edge_scores: left {left.shape}, right {right.shape}, "
            f"bias {bias.shape}, a {a.shape}"
        )
    out = kernels.gatv2_scores(left.data, right.data, bias.data, a.data, dst, src, slope)

    def backward(g):
        d_left, d_right, d_bias, d_a = kernels.gatv2_scores_backward(
            left.data, right.data, bias.data, a.data, dst, src, slope, g
        )
        return d_left, d_right, d_bias.reshape(1, -1), d_a.reshape(-1, 1)

    return _make(out.reshape(-1, 1), (left, right, bias, a), backward)


def edge_inner(x, y, x_idx, y_idx):
    """Per-edge inner product ``x[x_idx[e]] . y[y_idx[e]]`` as an ``|E| x 1`` column."""
    x_idx = np.asarray(x_idx, dtype=np.int64)
    y_idx = np.asarray(y_idx, dtype=np.int64)
    if x.cols != y.cols:
        raise DimensionError(f"edge_inner: widths differ, {x.shape} vs {y.shape}")
    out = kernels.edge_dot(x.data, y.data, x_idx, y_idx).reshape(-1, 1)

    def backward(g):
        w = g[:, 0]
        return (
            kernels.weighted_gather_sum(w, y.data, y_idx, x_idx, x.rows),
            kernels.weighted_gather_sum(w, x.data, x_idx, y_idx, y.rows),
        )

    return _make(out, (x, y), backward)
