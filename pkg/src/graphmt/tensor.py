"""Dense float64 tensors with reverse-mode differentiation on an explicit tape.

Forward arithmetic is plain numpy. While a :class:`Tape` is active, every
primitive that touches a gradient-tracking tensor records a backward closure;
``Tape.backward`` replays those closures in reverse execution order and
accumulates (+=) into ``Tensor.grad``, so parameter sharing just works.
Tensors are float64 throughout; nothing here knows about the model.
"""

from __future__ import annotations

import threading

import numpy as np

from .errors import ConfigError, DataError

_TAPES = threading.local()


def _tape_stack():
    stack = getattr(_TAPES, "stack", None)
    if stack is None:
        stack = []
        _TAPES.stack = stack
    return stack


def active_tape():
    """The innermost Tape currently recording, or None."""
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Ordered record of executed differentiable operations.

    Use as a context manager around the forward pass, then call
    :meth:`backward` once on the scalar loss. A tape is single use.
    """

    def __init__(self):
        self._backward_ops = []
        self._consumed = False

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        stack = _tape_stack()
        if not stack or stack[-1] is not self:
            raise RuntimeError("tape stack corrupted: exiting a tape that is not innermost")
        stack.pop()
        return False

    def record(self, backward_fn):
        self._backward_ops.append(backward_fn)

    def backward(self, loss):
        """Populate grads of every requires_grad tensor reachable from loss."""
        if self._consumed:
            raise RuntimeError("tape already consumed; build a new tape for another backward pass")
        if loss.data.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not loss.requires_grad:
            raise ValueError("loss does not track gradients; was it computed under this tape?")
        self._consumed = True
        loss.grad[...] = 1.0
        for fn in reversed(self._backward_ops):
            fn()


class Tensor:
    """Dense n-dimensional float64 array with optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if self.requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data.reshape(()))

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, shape):
        return reshape(self, shape)

    def transpose(self, axes):
        return transpose(self, axes)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(_as_tensor(other), _MINUS_ONE))

    def __rsub__(self, other):
        return add(_as_tensor(other), mul(self, _MINUS_ONE))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, _MINUS_ONE)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not supported; multiply by a reciprocal")
        return mul(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)


def parameter(data):
    """A gradient-tracking tensor (model weight)."""
    return Tensor(data, requires_grad=True)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


_MINUS_ONE = Tensor(-1.0)


def _result(data, *inputs):
    track = active_tape() is not None and any(t.requires_grad for t in inputs)
    return Tensor(data, requires_grad=track)


def _unbroadcast(grad, shape):
    """Sum grad over axes that were broadcast so it matches the operand shape."""
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = _result(a.data + b.data, a, b)
    if out.requires_grad:
        def backward(a=a, b=b, out=out):
            if a.requires_grad:
                a.grad += _unbroadcast(out.grad, a.data.shape)
            if b.requires_grad:
                b.grad += _unbroadcast(out.grad, b.data.shape)
        active_tape().record(backward)
    return out


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = _result(a.data * b.data, a, b)
    if out.requires_grad:
        def backward(a=a, b=b, out=out):
            if a.requires_grad:
                a.grad += _unbroadcast(out.grad * b.data, a.data.shape)
            if b.requires_grad:
                b.grad += _unbroadcast(out.grad * a.data, b.data.shape)
        active_tape().record(backward)
    return out


def matmul(a, b):
    """Matrix product with broadcast batch dimensions.

    Backward accumulates dL/da = dL/dc . b^T and dL/db = a^T . dL/dc.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2 or a.data.shape[-1] != b.data.shape[-2]:
        raise ValueError(f"matmul dimension mismatch: {a.data.shape} x {b.data.shape}")
    try:
        data = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise ValueError(f"matmul dimension mismatch: {a.data.shape} x {b.data.shape}") from exc
    out = _result(data, a, b)
    if out.requires_grad:
        def backward(a=a, b=b, out=out):
            g = out.grad
            if a.requires_grad:
                a.grad += _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.data.shape)
            if b.requires_grad:
                b.grad += _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.data.shape)
        active_tape().record(backward)
    return out


def reshape(x, shape):
    x = _as_tensor(x)
    out = _result(x.data.reshape(shape), x)
    if out.requires_grad:
        def backward(x=x, out=out):
            x.grad += out.grad.reshape(x.data.shape)
        active_tape().record(backward)
    return out


def transpose(x, axes):
    x = _as_tensor(x)
    out = _result(np.transpose(x.data, axes), x)
    if out.requires_grad:
        inverse = np.argsort(axes)

        def backward(x=x, out=out, inverse=inverse):
            x.grad += np.transpose(out.grad, inverse)
        active_tape().record(backward)
    return out


def reduce_sum(x, axis=None, keepdims=False):
    x = _as_tensor(x)
    out = _result(x.data.sum(axis=axis, keepdims=keepdims), x)
    if out.requires_grad:
        def backward(x=x, out=out, axis=axis, keepdims=keepdims):
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            x.grad += g
        active_tape().record(backward)
    return out


def reduce_mean(x, axis=None, keepdims=False):
    x = _as_tensor(x)
    count = x.data.size if axis is None else np.prod(
        [x.data.shape[i] for i in (axis if isinstance(axis, tuple) else (axis,))])
    return mul(reduce_sum(x, axis=axis, keepdims=keepdims), 1.0 / float(count))


def softmax(x, axis=-1, mask=None):
    """Max-shifted softmax along ``axis``; optional boolean keep-mask.

    Masked entries get exactly zero weight. A slice with no unmasked entries
    is a DataError (there is nothing to attend to).
    """
    x = _as_tensor(x)
    z = x.data
    if z.shape[axis] == 0:
        raise DataError("softmax over an empty axis")
    if mask is not None:
        keep = np.broadcast_to(np.asarray(mask, dtype=bool), z.shape)
        if not keep.any(axis=axis).all():
            raise DataError("softmax: a slice has every entry masked")
        z = np.where(keep, z, -np.inf)
    m = z.max(axis=axis, keepdims=True)
    e = np.exp(z - m)
    p = e / e.sum(axis=axis, keepdims=True)
    out = _result(p, x)
    if out.requires_grad:
        def backward(x=x, out=out, axis=axis):
            g = out.grad
            p = out.data
            dot = (g * p).sum(axis=axis, keepdims=True)
            x.grad += p * (g - dot)
        active_tape().record(backward)
    return out


def log_softmax(x, axis=-1):
    x = _as_tensor(x)
    z = x.data
    m = z.max(axis=axis, keepdims=True)
    shifted = z - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = _result(shifted - lse, x)
    if out.requires_grad:
        def backward(x=x, out=out, axis=axis):
            g = out.grad
            p = np.exp(out.data)
            x.grad += g - p * g.sum(axis=axis, keepdims=True)
        active_tape().record(backward)
    return out


def sigmoid(x):
    x = _as_tensor(x)
    z = x.data
    data = np.empty_like(z)
    pos = z >= 0
    data[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    data[~pos] = ez / (1.0 + ez)
    out = _result(data, x)
    if out.requires_grad:
        def backward(x=x, out=out):
            y = out.data
            x.grad += out.grad * y * (1.0 - y)
        active_tape().record(backward)
    return out


def relu(x):
    x = _as_tensor(x)
    out = _result(np.maximum(x.data, 0.0), x)
    if out.requires_grad:
        def backward(x=x, out=out):
            x.grad += out.grad * (x.data > 0.0)
        active_tape().record(backward)
    return out


def layer_norm(x, gain, bias, eps=1e-6):
    """Zero mean, unit variance over the last dimension, then gain*xhat + bias."""
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    if gain.data.shape != x.data.shape[-1:] or bias.data.shape != x.data.shape[-1:]:
        raise ValueError(
            f"layer_norm gain/bias {gain.data.shape}/{bias.data.shape} "
            f"must match last dim of {x.data.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = _result(gain.data * xhat + bias.data, x, gain, bias)
    if out.requires_grad:
        def backward(x=x, gain=gain, bias=bias, out=out, inv=inv, xhat=xhat):
            g = out.grad
            if gain.requires_grad:
                gain.grad += (g * xhat).sum(axis=tuple(range(g.ndim - 1)))
            if bias.requires_grad:
                bias.grad += g.sum(axis=tuple(range(g.ndim - 1)))
            if x.requires_grad:
                d = x.data.shape[-1]
                dxhat = g * gain.data
                term = (dxhat.sum(axis=-1, keepdims=True)
                        + xhat * (dxhat * xhat).sum(axis=-1, keepdims=True))
                x.grad += inv * (dxhat - term / d)
        active_tape().record(backward)
    return out


def dropout(x, p, mode, rng=None):
    """Inverted dropout: train mode zeroes with prob p and scales by 1/(1-p).

    Eval mode (and p=0) is exactly the identity map.
    """
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must be in [0, 1), got {p}")
    if mode not in ("train", "eval"):
        raise ValueError(f"dropout mode must be 'train' or 'eval', got {mode!r}")
    x = _as_tensor(x)
    if mode == "eval" or p == 0.0:
        return x
    if rng is None:
        raise ValueError("train-mode dropout needs an explicit rng")
    keep = (rng.random(x.data.shape) >= p) / (1.0 - p)
    out = _result(x.data * keep, x)
    if out.requires_grad:
        def backward(x=x, out=out, keep=keep):
            x.grad += out.grad * keep
        active_tape().record(backward)
    return out


def index_rows(x, indices):
    """Gather rows: out[i] = x[indices[i]]. Backward scatter-adds."""
    x = _as_tensor(x)
    idx = np.asarray(indices, dtype=np.intp)
    out = _result(x.data[idx], x)
    if out.requires_grad:
        def backward(x=x, out=out, idx=idx):
            np.add.at(x.grad, idx, out.grad)
        active_tape().record(backward)
    return out


def segment_sum(x, segment_ids, num_segments):
    """Sum rows of x into segments: out[s] = sum of x[i] with segment_ids[i] == s.

    Segments with no members are zero rows.
    """
    x = _as_tensor(x)
    idx = np.asarray(segment_ids, dtype=np.intp)
    data = np.zeros((num_segments,) + x.data.shape[1:], dtype=np.float64)
    np.add.at(data, idx, x.data)
    out = _result(data, x)
    if out.requires_grad:
        def backward(x=x, out=out, idx=idx):
            x.grad += out.grad[idx]
        active_tape().record(backward)
    return out


def take_along_last(x, indices):
    """Pick one entry per row along the last axis: out[..., ] = x[..., idx[...]]."""
    x = _as_tensor(x)
    idx = np.asarray(indices, dtype=np.intp)
    if idx.shape != x.data.shape[:-1]:
        raise ValueError(f"index shape {idx.shape} must match {x.data.shape[:-1]}")
    out = _result(np.take_along_axis(x.data, idx[..., None], axis=-1)[..., 0], x)
    if out.requires_grad:
        def backward(x=x, out=out, idx=idx):
            scat = np.zeros_like(x.grad)
            np.put_along_axis(scat, idx[..., None], out.grad[..., None], axis=-1)
            x.grad += scat
        active_tape().record(backward)
    return out


def pad_stack(tensors, length=None):
    """Stack variable-length [t_i, ...] tensors into [B, T, ...] with zero padding."""
    if not tensors:
        raise ValueError("pad_stack needs at least one tensor")
    tensors = [_as_tensor(t) for t in tensors]
    rest = tensors[0].data.shape[1:]
    lengths = [t.data.shape[0] for t in tensors]
    tmax = max(lengths) if length is None else int(length)
    data = np.zeros((len(tensors), tmax) + rest, dtype=np.float64)
    for b, t in enumerate(tensors):
        data[b, : lengths[b]] = t.data
    out = _result(data, *tensors)
    if out.requires_grad:
        def backward(tensors=tensors, out=out, lengths=lengths):
            for b, t in enumerate(tensors):
                if t.requires_grad:
                    t.grad += out.grad[b, : lengths[b]]
        active_tape().record(backward)
    return out


def zero_grads(tensors):
    for t in tensors:
        if t.requires_grad:
            t.grad[...] = 0.0
