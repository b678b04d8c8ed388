"""Dense float64 tensors with reverse-mode automatic differentiation.

Deliberately small: 2-D matrices (plus vectors and scalars), the primitives a
desk-scale transformer needs, and a replayable record of executed operations.
There is no broadcasting beyond row-wise bias addition, which keeps every
adjoint rule short enough to audit by hand.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf, expit

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


class NumericsError(Exception):
    """Base class for tensor arithmetic failures."""


class ShapeError(NumericsError):
    """Operand shapes do not satisfy an operation's contract."""


class NonFiniteError(NumericsError):
    """A forward operation produced NaN or Inf."""


class ContractError(NumericsError):
    """A non-shape precondition was violated."""


class Tensor:
    """A dense float64 array plus the bookkeeping reverse mode needs.

    Tensors are immutable within a forward pass; every operation returns a
    fresh tensor that remembers its parents and how to push adjoints back to
    them.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("tensor data contains NaN or Inf")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def parameter(data):
    """A leaf tensor that accumulates gradients."""
    return Tensor(data, requires_grad=True)


def constant(data):
    """A leaf tensor excluded from differentiation."""
    if isinstance(data, Tensor):
        return data
    return Tensor(data, requires_grad=False)


def _result(data, parents, what):
    arr = np.asarray(data, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{what} produced non-finite values")
    out = Tensor.__new__(Tensor)
    out.data = arr
    out.grad = None
    out.requires_grad = any(p.requires_grad for p in parents)
    out._parents = tuple(parents) if out.requires_grad else ()
    out._backward = None
    return out


def _accum(t, g):
    if t.requires_grad:
        t.grad += g


class ComputationRecord:
    """Ordered trace of the tensors reachable from one root.

    Replaying the trace in reverse visits every recorded operation exactly
    once; adjoints of tensors consumed by several operations accumulate
    additively.
    """

    def __init__(self, ordered):
        self.ordered = ordered

    def __len__(self):
        return len(self.ordered)

    @classmethod
    def trace(cls, root):
        ordered = []
        seen = set()
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                ordered.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        return cls(ordered)


def backward(loss, record=None):
    """Propagate d(loss)/d(tensor) to every tensor reachable from `loss`.

    Gradients of all tensors in the record are reset before the replay, so a
    fresh call never accumulates across training iterations.
    """
    if loss.data.shape != ():
        raise ContractError(f"loss must be scalar, got shape {loss.data.shape}")
    if not loss.requires_grad:
        raise ContractError("loss is not connected to any parameter")
    if record is None:
        record = ComputationRecord.trace(loss)
    for t in record.ordered:
        if t.requires_grad:
            t.grad = np.zeros_like(t.data)
    loss.grad = np.ones_like(loss.data)
    for t in reversed(record.ordered):
        if t._backward is not None:
            t._backward()


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def add(a, b):
    """a + b for equal shapes, or matrix + row-bias vector."""
    a, b = constant(a), constant(b)
    if a.shape == b.shape:
        out = _result(a.data + b.data, (a, b), "add")
        if out.requires_grad:
            def _bwd():
                _accum(a, out.grad)
                _accum(b, out.grad)
            out._backward = _bwd
        return out
    if a.ndim == 2 and b.ndim == 1 and a.shape[1] == b.shape[0]:
        out = _result(a.data + b.data, (a, b), "add")
        if out.requires_grad:
            def _bwd():
                _accum(a, out.grad)
                _accum(b, out.grad.sum(axis=0))
            out._backward = _bwd
        return out
    raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}")


def sub(a, b):
    """a - b, equal shapes only."""
    a, b = constant(a), constant(b)
    if a.shape != b.shape:
        raise ShapeError(f"sub: incompatible shapes {a.shape} and {b.shape}")
    out = _result(a.data - b.data, (a, b), "sub")
    if out.requires_grad:
        def _bwd():
            _accum(a, out.grad)
            _accum(b, -out.grad)
        out._backward = _bwd
    return out


def mul(a, b):
    """Elementwise product, equal shapes only."""
    a, b = constant(a), constant(b)
    if a.shape != b.shape:
        raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}")
    out = _result(a.data * b.data, (a, b), "mul")
    if out.requires_grad:
        def _bwd():
            _accum(a, out.grad * b.data)
            _accum(b, out.grad * a.data)
        out._backward = _bwd
    return out


def scale(a, c):
    """Multiply by a python scalar."""
    a = constant(a)
    c = float(c)
    out = _result(a.data * c, (a,), "scale")
    if out.requires_grad:
        def _bwd():
            _accum(a, out.grad * c)
        out._backward = _bwd
    return out


def matmul(a, b):
    """Standard matrix product of two 2-D tensors."""
    a, b = constant(a), constant(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul: operands must be 2-D, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions disagree, {a.shape} x {b.shape}")
    out = _result(a.data @ b.data, (a, b), "matmul")
    if out.requires_grad:
        def _bwd():
            _accum(a, out.grad @ b.data.T)
            _accum(b, a.data.T @ out.grad)
        out._backward = _bwd
    return out


def transpose(a):
    a = constant(a)
    if a.ndim != 2:
        raise ShapeError(f"transpose: operand must be 2-D, got {a.shape}")
    out = _result(a.data.T.copy(), (a,), "transpose")
    if out.requires_grad:
        def _bwd():
            _accum(a, out.grad.T)
        out._backward = _bwd
    return out


def row_softmax(x, mask=None):
    """Row-wise softmax, stabilized by max subtraction.

    `mask` is an optional boolean array of the same shape; False entries get
    weight exactly 0 and the remaining entries of each row sum to 1. Every
    row must keep at least one permitted entry.
    """
    x = constant(x)
    if x.ndim != 2:
        raise ShapeError(f"row_softmax: operand must be 2-D, got {x.shape}")
    if mask is None:
        z = x.data
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != x.shape:
            raise ShapeError(f"row_softmax: mask shape {mask.shape} != data shape {x.shape}")
        if not mask.any(axis=1).all():
            raise ContractError("row_softmax: a row has no permitted entries")
        z = np.where(mask, x.data, -np.inf)
    m = z.max(axis=1, keepdims=True)
    e = np.exp(z - m)
    w = e / e.sum(axis=1, keepdims=True)
    out = _result(w, (x,), "row_softmax")
    if out.requires_grad:
        def _bwd():
            g = out.grad
            dot = (w * g).sum(axis=1, keepdims=True)
            _accum(x, w * (g - dot))
        out._backward = _bwd
    return out


def attention_weights(q, k, mask, att_scale):
    """softmax(q @ k.T * att_scale) with masked positions forced to weight 0.

    Fused so the pre-softmax score matrix is never retained; only the weight
    matrix is kept for the adjoint.
    """
    q, k = constant(q), constant(k)
    if q.ndim != 2 or k.ndim != 2 or q.shape[1] != k.shape[1]:
        raise ShapeError(f"attention_weights: incompatible shapes {q.shape} and {k.shape}")
    scores = (q.data @ k.data.T) * att_scale
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != scores.shape:
            raise ShapeError(f"attention_weights: mask shape {mask.shape} != score shape {scores.shape}")
        if not mask.any(axis=1).all():
            raise ContractError("attention_weights: a row has no permitted positions")
        scores = np.where(mask, scores, -np.inf)
    m = scores.max(axis=1, keepdims=True)
    e = np.exp(scores - m)
    w = e / e.sum(axis=1, keepdims=True)
    out = _result(w, (q, k), "attention_weights")
    if out.requires_grad:
        def _bwd():
            g = out.grad
            ds = w * (g - (w * g).sum(axis=1, keepdims=True))
            _accum(q, (ds @ k.data) * att_scale)
            _accum(k, (ds.T @ q.data) * att_scale)
        out._backward = _bwd
    return out


def layer_norm(x, gain, bias, eps=1e-5):
    """Per-row standardization (population variance) followed by affine gain/bias."""
    x, gain, bias = constant(x), constant(gain), constant(bias)
    if x.ndim != 2 or x.shape[1] < 2:
        raise ShapeError(f"layer_norm: need a 2-D operand with width >= 2, got {x.shape}")
    n = x.shape[1]
    if gain.shape != (n,) or bias.shape != (n,):
        raise ShapeError(
            f"layer_norm: gain/bias must have shape ({n},), got {gain.shape} and {bias.shape}"
        )
    mu = x.data.mean(axis=1, keepdims=True)
    var = x.data.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = _result(xhat * gain.data + bias.data, (x, gain, bias), "layer_norm")
    if out.requires_grad:
        def _bwd():
            g = out.grad
            gh = g * gain.data
            # d/dx of (x - mu) / sqrt(var + eps) with population statistics
            _accum(x, inv * (gh - gh.mean(axis=1, keepdims=True)
                             - xhat * (gh * xhat).mean(axis=1, keepdims=True)))
            _accum(gain, (g * xhat).sum(axis=0))
            _accum(bias, g.sum(axis=0))
        out._backward = _bwd
    return out


def gelu(x):
    """Gaussian-error linear unit (exact erf form; smooth everywhere)."""
    x = constant(x)
    e = erf(x.data * _INV_SQRT2)
    out = _result(0.5 * x.data * (1.0 + e), (x,), "gelu")
    if out.requires_grad:
        def _bwd():
            pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT2PI
            _accum(x, out.grad * (0.5 * (1.0 + e) + x.data * pdf))
        out._backward = _bwd
    return out


def sigmoid(x):
    x = constant(x)
    s = expit(x.data)
    out = _result(s, (x,), "sigmoid")
    if out.requires_grad:
        def _bwd():
            _accum(x, out.grad * s * (1.0 - s))
        out._backward = _bwd
    return out


def dropout(x, rate, rng, training):
    """Inverted dropout; identity when not training or rate == 0."""
    if not 0.0 <= rate < 1.0:
        raise ContractError(f"dropout rate must be in [0, 1), got {rate}")
    x = constant(x)
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ContractError("dropout in training mode needs an rng")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    out = _result(x.data * keep, (x,), "dropout")
    if out.requires_grad:
        def _bwd():
            _accum(x, out.grad * keep)
        out._backward = _bwd
    return out


def concat_rows(tensors):
    """Vertical concatenation of 2-D tensors with equal widths."""
    tensors = [constant(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat_rows: nothing to concatenate")
    width = tensors[0].shape[1] if tensors[0].ndim == 2 else None
    if width is None or any(t.ndim != 2 or t.shape[1] != width for t in tensors):
        raise ShapeError(f"concat_rows: widths differ: {[t.shape for t in tensors]}")
    out = _result(np.vstack([t.data for t in tensors]), tuple(tensors), "concat_rows")
    if out.requires_grad:
        offsets = np.cumsum([0] + [t.shape[0] for t in tensors])
        def _bwd():
            for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
                _accum(t, out.grad[lo:hi])
        out._backward = _bwd
    return out


def concat_cols(tensors):
    """Horizontal concatenation of 2-D tensors with equal row counts."""
    tensors = [constant(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat_cols: nothing to concatenate")
    rows = tensors[0].shape[0] if tensors[0].ndim == 2 else None
    if rows is None or any(t.ndim != 2 or t.shape[0] != rows for t in tensors):
        raise ShapeError(f"concat_cols: row counts differ: {[t.shape for t in tensors]}")
    out = _result(np.hstack([t.data for t in tensors]), tuple(tensors), "concat_cols")
    if out.requires_grad:
        offsets = np.cumsum([0] + [t.shape[1] for t in tensors])
        def _bwd():
            for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
                _accum(t, out.grad[:, lo:hi])
        out._backward = _bwd
    return out


def slice_cols(a, start, stop):
    a = constant(a)
    if a.ndim != 2 or not 0 <= start < stop <= a.shape[1]:
        raise ShapeError(f"slice_cols: [{start}:{stop}] invalid for shape {a.shape}")
    out = _result(a.data[:, start:stop].copy(), (a,), "slice_cols")
    if out.requires_grad:
        def _bwd():
            if a.requires_grad:
                a.grad[:, start:stop] += out.grad
        out._backward = _bwd
    return out


def take_rows(a, indices):
    """Gather rows by index; adjoints scatter-add back (duplicates allowed)."""
    a = constant(a)
    idx = np.asarray(indices, dtype=np.intp)
    if a.ndim != 2 or idx.ndim != 1:
        raise ShapeError(f"take_rows: need a 2-D tensor and 1-D indices, got {a.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise ShapeError(f"take_rows: index out of range for {a.shape[0]} rows")
    out = _result(a.data[idx], (a,), "take_rows")
    if out.requires_grad:
        def _bwd():
            if a.requires_grad:
                np.add.at(a.grad, idx, out.grad)
        out._backward = _bwd
    return out


def sum_all(a):
    a = constant(a)
    out = _result(a.data.sum(), (a,), "sum_all")
    if out.requires_grad:
        def _bwd():
            _accum(a, np.full_like(a.data, out.grad))
        out._backward = _bwd
    return out


def mean_all(a):
    a = constant(a)
    out = _result(a.data.mean(), (a,), "mean_all")
    if out.requires_grad:
        inv = 1.0 / a.data.size
        def _bwd():
            _accum(a, np.full_like(a.data, out.grad * inv))
        out._backward = _bwd
    return out


def bce_with_logits(logits, targets):
    """Per-cell binary cross-entropy of sigmoid(logits) against 0/1 targets.

    Computed in the numerically safe form max(z,0) - z*t + log1p(exp(-|z|));
    the adjoint is sigmoid(z) - t.
    """
    logits = constant(logits)
    t = np.asarray(targets, dtype=np.float64)
    if t.shape != logits.shape:
        raise ShapeError(f"bce_with_logits: target shape {t.shape} != logit shape {logits.shape}")
    z = logits.data
    cell = np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))
    out = _result(cell, (logits,), "bce_with_logits")
    if out.requires_grad:
        def _bwd():
            _accum(logits, out.grad * (expit(z) - t))
        out._backward = _bwd
    return out


def grad_check(f, params, eps=1e-5, samples=20, rng=None):
    """Max relative error between analytic and central-difference gradients.

    `f` must rebuild and return the scalar loss from the current parameter
    values (dropout off, smooth activations). Up to `samples` coordinates are
    probed per parameter; the error is |analytic - fd| / max(1, |fd|).
    """
    if rng is None:
        rng = np.random.default_rng(0)
    loss = f()
    backward(loss)
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]
    worst = 0.0
    for p, g in zip(params, analytic):
        size = p.data.size
        coords = rng.choice(size, size=min(samples, size), replace=False)
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + eps
            fp = float(f().data)
            flat[c] = orig - eps
            fm = float(f().data)
            flat[c] = orig
            fd = (fp - fm) / (2.0 * eps)
            rel = abs(gflat[c] - fd) / max(1.0, abs(fd))
            worst = max(worst, rel)
    return worst
