"""Reverse-mode automatic differentiation on float64 numpy arrays.

A Tape records every primitive op executed while it is active (it is a context
manager). Ops are recorded in execution order, so walking the record backwards
visits each node exactly once in reverse topological order. Tensors created
while no tape is active behave as plain arrays, which is how sampling runs the
same forward code without paying for gradient bookkeeping.
"""

from __future__ import annotations

import numpy as np

# Most negative finite float64. Used as the pre-softmax fill for masked
# attention scores: exp(MASK_FILL - rowmax) underflows to exactly 0.0, so
# masked positions get bitwise-zero attention weight and bitwise-zero gradient.
MASK_FILL = -np.finfo(np.float64).max

_ACTIVE_TAPE = None


class Tensor:
    """A float64 array plus a gradient slot."""

    __slots__ = ("data", "grad")

    def __init__(self, data):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    def accumulate(self, g):
        if self.grad is None:
            self.grad = g.copy() if isinstance(g, np.ndarray) else np.asarray(g)
        else:
            self.grad = self.grad + g

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Execution-order record of ops, replayed backwards for gradients."""

    def __init__(self):
        self._ops = []

    def __enter__(self):
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise RuntimeError("a tape is already active")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, *exc):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        return False

    def record(self, out, backward):
        self._ops.append((out, backward))

    def backward(self, seed: Tensor):
        """Accumulate gradients of a scalar seed into every upstream tensor."""
        if seed.data.size != 1:
            raise ValueError(f"backward needs a scalar, got shape {seed.data.shape}")
        seed.accumulate(np.ones_like(seed.data))
        for out, backward in reversed(self._ops):
            g = out.grad
            if g is None:
                continue
            backward(g)


def _record(out, backward):
    if _ACTIVE_TAPE is not None:
        _ACTIVE_TAPE.record(out, backward)
    return out


# ---------------------------------------------------------------------------
# primitive ops


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.shape != b.data.shape:
        raise ValueError(f"add shape mismatch: {a.data.shape} vs {b.data.shape}")
    out = Tensor(a.data + b.data)

    def backward(g):
        a.accumulate(g)
        b.accumulate(g)

    return _record(out, backward)


def neg(a):
    out = Tensor(-a.data)

    def backward(g):
        a.accumulate(-g)

    return _record(out, backward)


def scale(a, s: float):
    out = Tensor(a.data * s)

    def backward(g):
        a.accumulate(g * s)

    return _record(out, backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.shape != b.data.shape:
        raise ValueError(f"mul shape mismatch: {a.data.shape} vs {b.data.shape}")
    out = Tensor(a.data * b.data)

    def backward(g):
        a.accumulate(g * b.data)
        b.accumulate(g * a.data)

    return _record(out, backward)


def mul_const(a, c) -> Tensor:
    """Elementwise product with a constant array (no gradient into c).

    The constant broadcasts against a, e.g. a loss grid (B, P) times a
    validity mask (B, P) or (B, 1). Gradient is g * c reduced back to a's
    shape, and a zero in c kills the gradient at that position exactly.
    """
    c = np.asarray(c, dtype=np.float64)
    out = Tensor(a.data * c)

    def backward(g):
        ga = g * c
        a.accumulate(_unbroadcast(ga, a.data.shape))

    return _record(out, backward)


def _unbroadcast(g, shape):
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def matmul(a, b):
    """a @ b. b may be 2-D (shared weights) or match a's leading dims."""
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data @ b.data)

    def backward(g):
        if b.data.ndim == 2:
            a.accumulate(g @ b.data.T)
            k = a.data.shape[-1]
            n = g.shape[-1]
            b.accumulate(a.data.reshape(-1, k).T @ g.reshape(-1, n))
        else:
            a.accumulate(g @ np.swapaxes(b.data, -1, -2))
            b.accumulate(np.swapaxes(a.data, -1, -2) @ g)

    return _record(out, backward)


def transpose(a, axes):
    axes = tuple(axes)
    out = Tensor(a.data.transpose(axes))
    inv = tuple(np.argsort(axes))

    def backward(g):
        a.accumulate(g.transpose(inv))

    return _record(out, backward)


def reshape(a, shape):
    out = Tensor(a.data.reshape(shape))
    orig = a.data.shape

    def backward(g):
        a.accumulate(g.reshape(orig))

    return _record(out, backward)


def concat(parts, axis):
    parts = [as_tensor(p) for p in parts]
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis))
    sizes = [p.data.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for p, piece in zip(parts, np.split(g, splits, axis=axis)):
            p.accumulate(piece)

    return _record(out, backward)


def narrow(a, axis, start, length):
    """Slice `length` entries starting at `start` along `axis`."""
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = Tensor(a.data[idx])
    shape = a.data.shape

    def backward(g):
        full = np.zeros(shape)
        full[idx] = g
        a.accumulate(full)

    return _record(out, backward)


def softmax(a):
    """Softmax over the last axis, stabilised by max subtraction."""
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(s)

    def backward(g):
        dot = (g * s).sum(axis=-1, keepdims=True)
        a.accumulate(s * (g - dot))

    return _record(out, backward)


def log_softmax(a):
    z = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = Tensor(z - lse)
    s = np.exp(z - lse)

    def backward(g):
        a.accumulate(g - s * g.sum(axis=-1, keepdims=True))

    return _record(out, backward)


def gather_rows(w, idx):
    """Embedding lookup: rows of a 2-D table by integer index array."""
    idx = np.asarray(idx)
    out = Tensor(w.data[idx])
    n, d = w.data.shape

    def backward(g):
        gw = np.zeros((n, d))
        np.add.at(gw, idx.reshape(-1), g.reshape(-1, d))
        w.accumulate(gw)

    return _record(out, backward)


def take_rows(a, idx):
    """Select (possibly repeated or reordered) rows along axis 0."""
    idx = np.asarray(idx)
    out = Tensor(a.data[idx])
    shape = a.data.shape

    def backward(g):
        ga = np.zeros(shape)
        np.add.at(ga, idx, g)
        a.accumulate(ga)

    return _record(out, backward)


def gather_positions(a, idx):
    """Per-row gather along axis 1: out[b, i] = a[b, idx[b, i]]."""
    idx = np.asarray(idx)
    rows = np.arange(a.data.shape[0])[:, None]
    out = Tensor(a.data[rows, idx])
    shape = a.data.shape

    def backward(g):
        ga = np.zeros(shape)
        np.add.at(ga, (rows, idx), g)
        a.accumulate(ga)

    return _record(out, backward)


def take_along_last(a, idx):
    """out[...] = a[..., idx[...]]: one entry per row of the last axis."""
    idx = np.asarray(idx)
    out = Tensor(np.take_along_axis(a.data, idx[..., None], axis=-1)[..., 0])
    shape = a.data.shape

    def backward(g):
        ga = np.zeros(shape)
        np.put_along_axis(ga, idx[..., None], g[..., None], axis=-1)
        a.accumulate(ga)

    return _record(out, backward)


def masked_fill(a, mask, value):
    """Replace entries where mask is True with a constant. Masked entries
    get exactly zero gradient."""
    mask = np.asarray(mask, dtype=bool)
    out = Tensor(np.where(mask, value, a.data))

    def backward(g):
        a.accumulate(_unbroadcast(np.where(mask, 0.0, g), a.data.shape))

    return _record(out, backward)


def sum_axis(a, axis):
    out = Tensor(a.data.sum(axis=axis))
    n = a.data.shape[axis]

    def backward(g):
        a.accumulate(np.repeat(np.expand_dims(g, axis), n, axis=axis))

    return _record(out, backward)


def sum_all(a):
    out = Tensor(a.data.sum())
    shape = a.data.shape

    def backward(g):
        a.accumulate(np.broadcast_to(g, shape))

    return _record(out, backward)


def mean_all(a):
    return scale(sum_all(a), 1.0 / a.data.size)


def broadcast_rows(v, n):
    """Tile a (d,) vector into (n, d); gradient sums over the rows."""
    out = Tensor(np.broadcast_to(v.data, (n,) + v.data.shape).copy())

    def backward(g):
        v.accumulate(g.sum(axis=0))

    return _record(out, backward)


def add_seq(a, p):
    """Add a (L, d) table to every batch row of a (B, L, d) tensor."""
    out = Tensor(a.data + p.data)

    def backward(g):
        a.accumulate(g)
        p.accumulate(g.sum(axis=0))

    return _record(out, backward)


def add_bias(a, b):
    """Add a (d,) bias to (..., d); bias gradient sums the leading axes."""
    out = Tensor(a.data + b.data)

    def backward(g):
        a.accumulate(g)
        b.accumulate(g.reshape(-1, g.shape[-1]).sum(axis=0))

    return _record(out, backward)


def layer_norm(a, gain, bias, eps=1e-5):
    """Normalise the last axis to zero mean and unit variance, then apply
    elementwise gain and bias."""
    mu = a.data.mean(axis=-1, keepdims=True)
    var = a.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (a.data - mu) * inv
    out = Tensor(xhat * gain.data + bias.data)
    d = a.data.shape[-1]

    def backward(g):
        gain.accumulate((g * xhat).reshape(-1, d).sum(axis=0))
        bias.accumulate(g.reshape(-1, d).sum(axis=0))
        gx = g * gain.data
        a.accumulate(inv * (gx - gx.mean(axis=-1, keepdims=True)
                            - xhat * (gx * xhat).mean(axis=-1, keepdims=True)))

    return _record(out, backward)


def stack_columns(parts):
    """Stack a list of (B, d) tensors into (B, n, d)."""
    cols = [reshape(p, (p.data.shape[0], 1, p.data.shape[1])) for p in parts]
    return concat(cols, axis=1)
