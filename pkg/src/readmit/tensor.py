"""Dense tensors with reverse-mode automatic differentiation.

A small numpy-backed engine: every operation builds a node that remembers
its parents and a backward closure.  Calling ``Tensor.backward()`` on a
scalar output walks the graph in reverse topological order and accumulates
gradients into every tensor created with ``requires_grad=True``.

Conventions:
  * arrays are float64 by default (float32 is kept if passed in);
  * graphs are built per forward pass and discarded after backward;
  * repeated ``backward()`` calls accumulate into leaf ``grad`` buffers
    until ``zero_grad()`` is called;
  * broadcasting is deliberately restricted: learnable operands broadcast
    only as 1-D bias vectors over rows; arbitrary broadcasting is allowed
    only for non-learnable constants (``add_const`` / ``mul_const``).
"""

import math

import numpy as np
from scipy.special import erf

# Finite stand-in for -inf in attention masks: exp(MASK_NEG - max) underflows
# to exactly 0 while keeping every forward value finite.
MASK_NEG = -1e30

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


class ShapeError(ValueError):
    """Operand shapes do not satisfy an operation's contract."""


def _fmt(shape):
    return "x".join(str(d) for d in shape) if shape else "scalar"


class Tensor:
    """A dense array plus optional gradient bookkeeping."""

    __slots__ = ("data", "requires_grad", "grad", "_backward", "_parents")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._backward = None
        self._parents = ()

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def sum(self):
        return sum_all(self)

    def mean(self):
        return mean_all(self)

    def backward(self):
        """Reverse-mode gradient accumulation from a scalar output.

        Gradients add into existing ``grad`` buffers, so repeated calls
        without ``zero_grad()`` accumulate.
        """
        if self.data.size != 1:
            raise ValueError(
                f"backward() requires a scalar output, got shape {_fmt(self.shape)}"
            )
        order = _toposort(self)
        _accumulate(self, np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None:
                node._backward()

    def __repr__(self):
        return f"Tensor(shape={_fmt(self.shape)}, requires_grad={self.requires_grad})"

    # Convenience operators used by model code.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)


def _toposort(root):
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def _accumulate(t, g):
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype)
    else:
        t.grad += g


def _result(data, parents, backward):
    out = Tensor(data)
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward
    return out


# ---------------------------------------------------------------------------
# binary operations


def matmul(a, b):
    """Matrix product. Supports (m,k)@(k,n), (B,m,k)@(k,n) and (B,m,k)@(B,k,n)."""
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(
            f"matmul needs 2-D or 3-D operands, got {_fmt(a.shape)} and {_fmt(b.shape)}"
        )
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(
            f"matmul inner dimensions disagree: {_fmt(a.shape)} @ {_fmt(b.shape)}"
        )
    if a.data.ndim == 2 and b.data.ndim == 3:
        raise ShapeError(
            f"matmul does not broadcast a 2-D left operand over a batched right "
            f"operand: {_fmt(a.shape)} @ {_fmt(b.shape)}"
        )
    batched_times_shared = a.data.ndim == 3 and b.data.ndim == 2
    if batched_times_shared:
        # one flat GEMM instead of a batched matmul plus reduction
        B, m, k = a.data.shape
        out_data = (a.data.reshape(B * m, k) @ b.data).reshape(B, m, -1)
    else:
        out_data = a.data @ b.data

    def backward():
        g = out.grad
        if batched_times_shared:
            B, m, k = a.data.shape
            n = b.data.shape[1]
            gf = g.reshape(B * m, n)
            if a.requires_grad:
                _accumulate(a, (gf @ b.data.T).reshape(B, m, k))
            if b.requires_grad:
                _accumulate(b, a.data.reshape(B * m, k).T @ gf)
            return
        if a.requires_grad:
            _accumulate(a, g @ np.swapaxes(b.data, -1, -2))
        if b.requires_grad:
            _accumulate(b, np.swapaxes(a.data, -1, -2) @ g)

    out = _result(out_data, (a, b), backward)
    return out


def add(a, b):
    """Elementwise sum; ``b`` may be a 1-D bias broadcast over rows."""
    if a.shape == b.shape:
        bias = False
    elif b.data.ndim == 1 and a.data.ndim >= 1 and a.shape[-1] == b.shape[0]:
        bias = True
    else:
        raise ShapeError(f"add shapes incompatible: {_fmt(a.shape)} + {_fmt(b.shape)}")

    def backward():
        g = out.grad
        if a.requires_grad:
            _accumulate(a, g)
        if b.requires_grad:
            _accumulate(b, g.reshape(-1, b.shape[0]).sum(axis=0) if bias else g)

    out = _result(a.data + b.data, (a, b), backward)
    return out


def sub(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"sub shapes differ: {_fmt(a.shape)} - {_fmt(b.shape)}")

    def backward():
        g = out.grad
        if a.requires_grad:
            _accumulate(a, g)
        if b.requires_grad:
            _accumulate(b, -g)

    out = _result(a.data - b.data, (a, b), backward)
    return out


def mul(a, b):
    """Elementwise product of same-shape tensors."""
    if a.shape != b.shape:
        raise ShapeError(f"mul shapes differ: {_fmt(a.shape)} * {_fmt(b.shape)}")

    def backward():
        g = out.grad
        if a.requires_grad:
            _accumulate(a, g * b.data)
        if b.requires_grad:
            _accumulate(b, g * a.data)

    out = _result(a.data * b.data, (a, b), backward)
    return out


def scale(a, s):
    s = float(s)

    def backward():
        if a.requires_grad:
            _accumulate(a, out.grad * s)

    out = _result(a.data * s, (a,), backward)
    return out


def add_const(a, c):
    """Add a non-learnable constant; numpy broadcasting onto ``a`` allowed."""
    c = np.asarray(c, dtype=a.data.dtype)
    if np.broadcast_shapes(a.shape, c.shape) != a.shape:
        raise ShapeError(
            f"constant of shape {_fmt(c.shape)} does not broadcast onto {_fmt(a.shape)}"
        )

    def backward():
        if a.requires_grad:
            _accumulate(a, out.grad)

    out = _result(a.data + c, (a,), backward)
    return out


def mul_const(a, c):
    """Multiply by a non-learnable constant; broadcasting onto ``a`` allowed."""
    c = np.asarray(c, dtype=a.data.dtype)
    if np.broadcast_shapes(a.shape, c.shape) != a.shape:
        raise ShapeError(
            f"constant of shape {_fmt(c.shape)} does not broadcast onto {_fmt(a.shape)}"
        )

    def backward():
        if a.requires_grad:
            _accumulate(a, out.grad * c)

    out = _result(a.data * c, (a,), backward)
    return out


# ---------------------------------------------------------------------------
# elementwise operations


def neg(a):
    return scale(a, -1.0)


def texp(a):
    out_data = np.exp(a.data)

    def backward():
        if a.requires_grad:
            _accumulate(a, out.grad * out_data)

    out = _result(out_data, (a,), backward)
    return out


def tlog(a):
    def backward():
        if a.requires_grad:
            _accumulate(a, out.grad / a.data)

    out = _result(np.log(a.data), (a,), backward)
    return out


def tanh(a):
    out_data = np.tanh(a.data)

    def backward():
        if a.requires_grad:
            _accumulate(a, out.grad * (1.0 - out_data * out_data))

    out = _result(out_data, (a,), backward)
    return out


def relu(a):
    def backward():
        if a.requires_grad:
            _accumulate(a, out.grad * (a.data > 0))

    out = _result(np.maximum(a.data, 0.0), (a,), backward)
    return out


def _sigmoid_np(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a):
    """Elementwise logistic function, stable for large |input|."""
    out_data = _sigmoid_np(a.data)

    def backward():
        if a.requires_grad:
            _accumulate(a, out.grad * out_data * (1.0 - out_data))

    out = _result(out_data, (a,), backward)
    return out


def gelu(a):
    """Exact (erf-based) GELU."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    out_data = x * cdf

    def backward():
        if a.requires_grad:
            pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
            _accumulate(a, out.grad * (cdf + x * pdf))

    out = _result(out_data, (a,), backward)
    return out


def pow_const(a, p):
    """Elementwise power with a constant exponent; p == 0 yields ones."""
    p = float(p)
    if p == 0.0:
        out_data = np.ones_like(a.data)

        def backward():
            if a.requires_grad:
                _accumulate(a, np.zeros_like(a.data))

    else:
        out_data = np.power(a.data, p)

        def backward():
            if a.requires_grad:
                _accumulate(a, out.grad * p * np.power(a.data, p - 1.0))

    out = _result(out_data, (a,), backward)
    return out


# ---------------------------------------------------------------------------
# reductions and structural operations


def sum_all(a):
    def backward():
        if a.requires_grad:
            _accumulate(a, np.full_like(a.data, float(out.grad)))

    out = _result(np.asarray(a.data.sum()), (a,), backward)
    return out


def mean_all(a):
    n = a.data.size

    def backward():
        if a.requires_grad:
            _accumulate(a, np.full_like(a.data, float(out.grad) / n))

    out = _result(np.asarray(a.data.mean()), (a,), backward)
    return out


def reshape(a, shape):
    def backward():
        if a.requires_grad:
            _accumulate(a, out.grad.reshape(a.shape))

    out = _result(a.data.reshape(shape), (a,), backward)
    return out


def transpose_last2(a):
    if a.data.ndim < 2:
        raise ShapeError(f"transpose_last2 needs ndim >= 2, got {_fmt(a.shape)}")

    def backward():
        if a.requires_grad:
            _accumulate(a, np.swapaxes(out.grad, -1, -2))

    out = _result(np.swapaxes(a.data, -1, -2), (a,), backward)
    return out


def slice_last(a, lo, hi):
    """Slice along the last axis; gradient scatters back with zero padding."""
    def backward():
        if a.requires_grad:
            g = np.zeros_like(a.data)
            g[..., lo:hi] = out.grad
            _accumulate(a, g)

    out = _result(a.data[..., lo:hi], (a,), backward)
    return out


def slice_steps(a, lo, hi):
    """Slice along the second-to-last axis (sequence steps)."""
    if a.data.ndim < 2:
        raise ShapeError(f"slice_steps needs ndim >= 2, got {_fmt(a.shape)}")

    def backward():
        if a.requires_grad:
            g = np.zeros_like(a.data)
            g[..., lo:hi, :] = out.grad
            _accumulate(a, g)

    out = _result(a.data[..., lo:hi, :], (a,), backward)
    return out


def concat(tensors, axis=-1):
    """Concatenate along the last or second-to-last axis."""
    if axis not in (-1, -2):
        raise ShapeError(f"concat supports axis -1 or -2, got {axis}")
    tensors = list(tensors)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward():
        g = out.grad
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                if axis == -1:
                    _accumulate(t, g[..., lo:hi])
                else:
                    _accumulate(t, g[..., lo:hi, :])

    out = _result(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)
    return out


def softmax(a, axis=-1):
    """Softmax along ``axis``; max-subtraction keeps it stable."""
    if a.data.ndim == 0 or a.data.shape[axis] == 0:
        raise ShapeError(f"softmax over empty axis {axis} of shape {_fmt(a.shape)}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward():
        g = out.grad
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        if a.requires_grad:
            _accumulate(a, (g - dot) * out_data)

    out = _result(out_data, (a,), backward)
    return out


def layer_norm(x, gain, bias, eps=1e-5):
    """Normalize the last axis to zero mean / unit variance, then scale and shift."""
    d = x.data.shape[-1] if x.data.ndim else 0
    if d == 0:
        raise ShapeError("layer_norm over an empty last axis")
    if eps <= 0:
        raise ValueError("layer_norm eps must be positive")
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(
            f"layer_norm gain/bias must have shape ({d},), got "
            f"{_fmt(gain.shape)} and {_fmt(bias.shape)}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    var = ((x.data - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out_data = xhat * gain.data + bias.data

    def backward():
        g = out.grad
        if gain.requires_grad:
            _accumulate(gain, (g * xhat).reshape(-1, d).sum(axis=0))
        if bias.requires_grad:
            _accumulate(bias, g.reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            gy = g * gain.data
            m1 = gy.mean(axis=-1, keepdims=True)
            m2 = (gy * xhat).mean(axis=-1, keepdims=True)
            _accumulate(x, inv * (gy - m1 - xhat * m2))

    out = _result(out_data, (x, gain, bias), backward)
    return out


def bce_with_logits(logits, targets):
    """Per-element binary cross-entropy from raw logits (log-sum-exp form).

    ``targets`` is a plain array (already label-smoothed if desired); the
    gradient flows to the logits only: d/dz = sigmoid(z) - t.
    """
    t = np.asarray(targets, dtype=logits.data.dtype)
    if t.shape != logits.shape:
        raise ShapeError(
            f"bce_with_logits shapes differ: {_fmt(logits.shape)} vs {_fmt(t.shape)}"
        )
    z = logits.data
    out_data = np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))

    def backward():
        if logits.requires_grad:
            _accumulate(logits, out.grad * (_sigmoid_np(z) - t))

    out = _result(out_data, (logits,), backward)
    return out


def dropout(a, p, rng):
    """Inverted dropout with an explicit generator; caller skips it in eval mode."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    if p == 0.0:
        return a
    keep = (rng.random(a.shape) >= p).astype(a.data.dtype) / (1.0 - p)
    return mul_const(a, keep)


# ---------------------------------------------------------------------------
# gradient verification


def grad_check(fn, x, eps=1e-5):
    """Compare analytic gradients of a scalar-valued ``fn`` against central differences.

    Returns the max over elements of |a - n| / max(|a|, |n|, 1e-8).  ``fn``
    must rebuild its graph on every call (it is re-evaluated 2 * x.size times).
    """
    if eps <= 0:
        raise ValueError("grad_check eps must be positive")
    x.requires_grad = True
    x.zero_grad()
    out = fn(x)
    out.backward()
    analytic = x.grad.copy()

    flat = x.data.reshape(-1)
    numeric = np.zeros(flat.size, dtype=np.float64)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(fn(x).data)
        flat[i] = orig - eps
        fm = float(fn(x).data)
        flat[i] = orig
        numeric[i] = (fp - fm) / (2.0 * eps)
    numeric = numeric.reshape(x.data.shape)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))
