"""Dense tensors with tape-based reverse-mode differentiation.

A Tensor wraps a numpy array and remembers how it was produced; backward()
walks the recorded graph in reverse topological order and accumulates
gradients into every reachable tensor that has requires_grad set.  The graph
is rebuilt on every forward pass (dynamic tape).
"""

from __future__ import annotations

import contextlib

import numpy as np

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference / frozen models)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum gradient g down to `shape` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        if isinstance(data, np.ndarray):
            if data.dtype not in (np.float32, np.float64):
                data = data.astype(np.float64)
            self.data = data
        else:
            self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward = _backward

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def zeros(shape, dtype=np.float64, requires_grad=False):
        return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- graph plumbing --------------------------------------------------------

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g


def _make(data, parents, backward):
    """Create an op result; records the tape edge only when needed."""
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward)
    return Tensor(data)


def backward(loss: Tensor):
    """Reverse pass from a scalar loss; fills .grad on reachable tensors."""
    if loss.data.size != 1:
        raise ValueError(f"backward() needs a scalar, got shape {loss.data.shape}")
    # iterative topo sort (graphs from long scans can be deep)
    order = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited and p.requires_grad:
                stack.append((p, False))
    loss._accumulate(np.ones_like(loss.data))
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# -- arithmetic ----------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data + b.data

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.data.shape))

    return _make(out_data, (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data - b.data

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(-_unbroadcast(g, b.data.shape))

    return _make(out_data, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data * b.data

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _make(out_data, (a, b), bw)


def scale(a: Tensor, c: float) -> Tensor:
    def bw(g):
        a._accumulate(g * c)

    return _make(a.data * c, (a,), bw)


def neg(a: Tensor) -> Tensor:
    return scale(a, -1.0)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")
    out_data = a.data @ b.data

    def bw(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return _make(out_data, (a, b), bw)


# -- shape ops -----------------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)

    def bw(g):
        a._accumulate(g.reshape(a.data.shape))

    return _make(a.data.reshape(shape), (a,), bw)


def permute(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def bw(g):
        a._accumulate(g.transpose(inv))

    return _make(a.data.transpose(axes), (a,), bw)


def flip(a: Tensor, axis: int) -> Tensor:
    def bw(g):
        a._accumulate(np.flip(g, axis=axis))

    return _make(np.flip(a.data, axis=axis), (a,), bw)


def concat(tensors, axis: int) -> Tensor:
    tensors = list(tensors)
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    splits = np.cumsum([t.data.shape[axis] for t in tensors])[:-1]

    def bw(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            if t.requires_grad:
                t._accumulate(piece)

    return _make(out_data, tuple(tensors), bw)


def sum_(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.data.shape))
        else:
            axes = (axis,) if np.isscalar(axis) else tuple(axis)
            if not keepdims:
                g = np.expand_dims(g, tuple(sorted(ax % a.data.ndim for ax in axes)))
            a._accumulate(np.broadcast_to(g, a.data.shape))

    return _make(out_data, (a,), bw)


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    if axis is None:
        n = a.data.size
    else:
        axes = (axis,) if np.isscalar(axis) else tuple(axis)
        n = int(np.prod([a.data.shape[ax] for ax in axes]))
    return scale(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


# -- elementwise nonlinearities --------------------------------------------------


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def bw(g):
        a._accumulate(g * out_data)

    return _make(out_data, (a,), bw)


def abs_(a: Tensor) -> Tensor:
    def bw(g):
        a._accumulate(g * np.sign(a.data))

    return _make(np.abs(a.data), (a,), bw)


def sigmoid(a: Tensor) -> Tensor:
    out_data = _sigmoid(a.data)

    def bw(g):
        a._accumulate(g * out_data * (1.0 - out_data))

    return _make(out_data, (a,), bw)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def silu(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)
    out_data = a.data * s

    def bw(g):
        a._accumulate(g * (s + a.data * s * (1.0 - s)))

    return _make(out_data, (a,), bw)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def bw(g):
        a._accumulate(g * mask)

    return _make(a.data * mask, (a,), bw)


def softplus(a: Tensor) -> Tensor:
    # log(1+e^x), stable as max(x,0)+log1p(e^-|x|)
    x = a.data
    out_data = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    s = _sigmoid(x)

    def bw(g):
        a._accumulate(g * s)

    return _make(out_data, (a,), bw)


def softmax_lastaxis(a: Tensor) -> Tensor:
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        dot = (g * out_data).sum(axis=-1, keepdims=True)
        a._accumulate(out_data * (g - dot))

    return _make(out_data, (a,), bw)


def layernorm(a: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis (population variance), then affine."""
    d = a.data.shape[-1]
    if d == 0:
        raise ValueError("layernorm: last axis has zero extent")
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out_data = xhat * gamma.data + beta.data

    def bw(g):
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).reshape(-1, d).sum(axis=0))
        if beta.requires_grad:
            beta._accumulate(g.reshape(-1, d).sum(axis=0))
        if a.requires_grad:
            gx = g * gamma.data
            a._accumulate(inv * (gx - gx.mean(axis=-1, keepdims=True)
                                 - xhat * (gx * xhat).mean(axis=-1, keepdims=True)))

    return _make(out_data, (a, gamma, beta), bw)


# -- spatial ops -----------------------------------------------------------------


def conv2d(x: Tensor, w: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation over [B,Cin,H,W] with kernel [Cout,Cin,k,k]."""
    B, Cin, H, W = x.data.shape
    Cout, Cin_w, k, k2 = w.data.shape
    if k != k2:
        raise ValueError(f"conv2d: non-square kernel {w.data.shape}")
    if Cin != Cin_w:
        raise ValueError(f"conv2d: channel mismatch, input {x.data.shape} vs kernel {w.data.shape}")
    s, p = stride, padding
    Ho = (H + 2 * p - k) // s + 1
    Wo = (W + 2 * p - k) // s + 1
    if Ho < 1 or Wo < 1:
        raise ValueError(f"conv2d: non-positive output extent {Ho}x{Wo} for input {H}x{W}, k={k}, s={s}, p={p}")

    if p:
        xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)))
    else:
        xp = x.data
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s]
    # win: [B,Cin,Ho,Wo,k,k]
    if xp.dtype == np.float64:
        # reference path: accumulate in (cin, ki, kj) order so the result is
        # bit-identical to the naive nested-loop definition
        out_data = np.zeros((B, Cout, Ho, Wo), dtype=xp.dtype)
        for c in range(Cin):
            for i in range(k):
                for j in range(k):
                    out_data += xp[:, None, c, i:i + s * Ho:s, j:j + s * Wo:s] \
                        * w.data[None, :, c, i, j, None, None]
    else:
        out_data = np.einsum("oikl,bihwkl->bohw", w.data, win, optimize=True)
    if bias is not None:
        out_data = out_data + bias.data[None, :, None, None]

    def bw(g):
        if w.requires_grad:
            w._accumulate(np.einsum("bohw,bihwkl->oikl", g, win, optimize=True))
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    # every output (y,xo) read xp[.., i+s*y, j+s*xo]
                    contrib = np.einsum("bohw,oi->bihw", g, w.data[:, :, i, j], optimize=True)
                    gxp[:, :, i:i + s * Ho:s, j:j + s * Wo:s] += contrib
            x._accumulate(gxp[:, :, p:p + H, p:p + W] if p else gxp)

    parents = (x, w) if bias is None else (x, w, bias)
    return _make(out_data, parents, bw)


def upsample_nearest2x(x: Tensor) -> Tensor:
    """[B,C,H,W] -> [B,C,2H,2W] by replicating each pixel into a 2x2 block."""
    out_data = x.data.repeat(2, axis=2).repeat(2, axis=3)

    def bw(g):
        B, C, H2, W2 = g.shape
        x._accumulate(g.reshape(B, C, H2 // 2, 2, W2 // 2, 2).sum(axis=(3, 5)))

    return _make(out_data, (x,), bw)


# -- composite losses / layers ----------------------------------------------------


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x[..., Din] @ w[Din, Dout] (+ b)."""
    lead = x.data.shape[:-1]
    out = matmul(reshape(x, (-1, x.data.shape[-1])), w)
    if b is not None:
        out = add(out, b)
    return reshape(out, lead + (w.data.shape[1],))


def mse_loss(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError(f"mse_loss shape mismatch: {a.data.shape} vs {b.data.shape}")
    d = sub(a, b)
    return mean(mul(d, d))


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-softmax at the label index; logits [B,C]."""
    labels = np.asarray(labels)
    B, C = logits.data.shape
    if labels.shape != (B,):
        raise ValueError(f"cross_entropy: labels shape {labels.shape} vs batch {B}")
    if labels.min() < 0 or labels.max() >= C:
        raise ValueError(f"cross_entropy: label out of range [0,{C})")
    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1))
    out_data = np.mean(lse - shifted[np.arange(B), labels])
    probs = np.exp(shifted) / np.exp(shifted).sum(axis=-1, keepdims=True)

    def bw(g):
        grad = probs.copy()
        grad[np.arange(B), labels] -= 1.0
        logits._accumulate(g * grad / B)

    return _make(out_data, (logits,), bw)
