"""A small reverse-mode automatic differentiation engine over numpy arrays.

Every op records its parents and a closure mapping the output gradient to
parent gradients. ``Tensor.backward`` walks the graph in reverse
topological order. Heavy layers (convolutions, the GRU, layer norm, FFTs)
are fused ops with hand-written backward passes.
"""

from __future__ import annotations

import contextlib
import os

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_DEBUG = bool(os.environ.get("HOMOSYNTH_DEBUG"))
_GRAD_ENABLED = True


def set_debug(flag: bool):
    """Toggle the finite-value assertion run after every forward op."""
    global _DEBUG
    _DEBUG = bool(flag)


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind in "iub":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order = _topological(self)
        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # operator sugar
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)


def _topological(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if isinstance(like, Tensor) else None
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data, parents, backward):
    if _DEBUG and not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite value produced in forward pass")
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# elementwise arithmetic


def add(a, b):
    a, b = as_tensor(a, b), as_tensor(b, a)
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b):
    a, b = as_tensor(a, b), as_tensor(b, a)
    return _make(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b):
    a, b = as_tensor(a, b), as_tensor(b, a)
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a, b):
    a, b = as_tensor(a, b), as_tensor(b, a)
    out = a.data / b.data
    return _make(
        out,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * out / b.data, b.shape),
        ),
    )


def neg(a):
    return _make(-a.data, (a,), lambda g: (-g,))


def power(a, exponent: float):
    data = a.data**exponent
    return _make(data, (a,), lambda g: (g * exponent * a.data ** (exponent - 1),))


def exp(a):
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a):
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a):
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * 0.5 / out,))


def sin(a):
    return _make(np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),))


def cos(a):
    return _make(np.cos(a.data), (a,), lambda g: (-g * np.sin(a.data),))


def tanh(a):
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a):
    out = _sigmoid(a.data)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def elu(a):
    x = a.data
    neg_part = np.expm1(np.minimum(x, 0.0))
    out = np.where(x > 0, x, neg_part)
    return _make(out, (a,), lambda g: (g * np.where(x > 0, 1.0, neg_part + 1.0),))


def clamp_min(a, floor: float):
    """max(a, floor); the gradient is zero where the floor is active."""
    mask = a.data > floor
    return _make(np.where(mask, a.data, floor), (a,), lambda g: (g * mask,))


# reductions and shape ops


def tsum(a, axis=None, keepdims=False):
    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), backward)


def mean(a, axis=None, keepdims=False):
    count = a.data.size / np.sum(a.data, axis=axis, keepdims=keepdims).size
    return tsum(a, axis, keepdims) * (1.0 / count)


def reshape(a, shape):
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None):
    inverse = None if axes is None else np.argsort(axes)
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),))


def getitem(a, index):
    fancy = any(
        isinstance(i, (list, np.ndarray)) for i in (index if isinstance(index, tuple) else (index,))
    )

    def backward(g):
        full = np.zeros_like(a.data)
        if fancy:
            np.add.at(full, index, g)
        else:
            full[index] = g
        return (full,)

    return _make(a.data[index], (a,), backward)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return _make(
        np.concatenate([t.data for t in tensors], axis=axis),
        tensors,
        lambda g: tuple(np.split(g, splits, axis=axis)),
    )


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    return _make(
        np.stack([t.data for t in tensors], axis=axis),
        tensors,
        lambda g: tuple(np.moveaxis(g, axis, 0)),
    )


def matmul(a, b):
    a, b = as_tensor(a, b), as_tensor(b, a)

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(a.data @ b.data, (a, b), backward)


# fused layers


def causal_softmax(scores):
    """Row softmax of a (T, T) score matrix where row t sees columns 0..t."""
    s = scores.data
    n = s.shape[-1]
    allowed = np.tril(np.ones((s.shape[-2], n), dtype=bool))
    masked = np.where(allowed, s, -np.inf)
    shifted = masked - masked.max(axis=-1, keepdims=True)
    e = np.where(allowed, np.exp(shifted), 0.0)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (out * (g - np.sum(g * out, axis=-1, keepdims=True)),)

    return _make(out, (scores,), backward)


def normalize(a, axes, eps=1e-5):
    """Zero-mean unit-variance normalization over ``axes`` (no affine part)."""
    x = a.data
    mu = x.mean(axis=axes, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def backward(g):
        gm = g.mean(axis=axes, keepdims=True)
        gxm = (g * xhat).mean(axis=axes, keepdims=True)
        return (inv * (g - gm - xhat * gxm),)

    return _make(xhat, (a,), backward)


def _conv_windows(xp, kt, kf, sf):
    win = sliding_window_view(xp, (kt, kf), axis=(1, 2))
    return win[:, :, ::sf]


def _conv_forward(xp, w, sf):
    """Valid cross-correlation of xp (C, Tp, F) with w (O, C, kt, kf), freq stride sf."""
    kt, kf = w.shape[2:]
    win = _conv_windows(xp, kt, kf, sf)
    out = np.tensordot(win, w, axes=([0, 3, 4], [1, 2, 3]))
    return np.ascontiguousarray(np.moveaxis(out, -1, 0))


def _conv_adjoint(gy, w, sf, padded_shape):
    """Adjoint of :func:`_conv_forward` with respect to its input."""
    kt, kf = w.shape[2:]
    n_t, n_f = gy.shape[1:]
    cols = np.tensordot(w, gy, axes=([0], [0]))
    gx = np.zeros(padded_shape, dtype=gy.dtype)
    f_span = sf * (n_f - 1) + 1
    for a in range(kt):
        for b in range(kf):
            gx[:, a : a + n_t, b : b + f_span : sf] += cols[:, a, b]
    return gx


def _conv_weight_grad(xp, gy, kt, kf, sf):
    win = _conv_windows(xp, kt, kf, sf)
    return np.tensordot(gy, win, axes=([1, 2], [1, 2]))


def conv_output_size(n_freq, kernel_f, stride_f):
    return (n_freq - kernel_f) // stride_f + 1


def conv2d(x, weight, bias=None, stride=(1, 2), time_pad=None):
    """2-D cross-correlation over (time, freq) maps.

    x: (C_in, T, F); weight: (C_out, C_in, kt, kf). Time is zero-padded by
    ``time_pad = (front, back)`` (default causal: kt - 1 in front) and the
    frequency axis is not padded. Only unit time stride is supported.
    """
    st, sf = stride
    if st != 1:
        raise ValueError("only unit time stride is supported")
    kt, kf = weight.shape[2:]
    front, back = time_pad if time_pad is not None else (kt - 1, 0)
    if front + back != kt - 1:
        raise ValueError(f"time padding {front}+{back} must total kt-1 = {kt - 1}")
    if x.shape[0] != weight.shape[1]:
        raise ValueError(f"input has {x.shape[0]} channels, weight expects {weight.shape[1]}")
    if x.shape[2] < kf:
        raise ValueError(f"kernel width {kf} exceeds {x.shape[2]} frequency bins")
    xp = np.pad(x.data, ((0, 0), (front, back), (0, 0)))
    out = _conv_forward(xp, weight.data, sf)
    if bias is not None:
        out = out + bias.data[:, None, None]
    n_t = x.shape[1]

    def backward(g):
        gxp = _conv_adjoint(g, weight.data, sf, xp.shape) if x.requires_grad else None
        gx = None if gxp is None else gxp[:, front : front + n_t]
        gw = _conv_weight_grad(xp, g, kt, kf, sf) if weight.requires_grad else None
        gb = g.sum(axis=(1, 2)) if bias is not None else None
        return gx, gw, gb

    parents = (x, weight) + ((bias,) if bias is not None else (as_tensor(0.0),))
    return _make(out, parents, backward)


def conv_transpose2d(y, weight, bias=None, stride=(1, 2), time_pad=None, out_freq=None):
    """Transposed convolution, the exact adjoint of :func:`conv2d`.

    y: (C_in, T, F'); weight: (C_in, C_out, kt, kf), i.e. the weight of the
    conv2d it inverts. ``out_freq`` picks the output width when several
    widths map to F' under the forward convolution; the default is the
    smallest. With the default ``time_pad = (0, kt - 1)`` the op is causal.
    """
    st, sf = stride
    if st != 1:
        raise ValueError("only unit time stride is supported")
    kt, kf = weight.shape[2:]
    front, back = time_pad if time_pad is not None else (0, kt - 1)
    if front + back != kt - 1:
        raise ValueError(f"time padding {front}+{back} must total kt-1 = {kt - 1}")
    if y.shape[0] != weight.shape[0]:
        raise ValueError(f"input has {y.shape[0]} channels, weight expects {weight.shape[0]}")
    n_t, n_f = y.shape[1:]
    min_freq = (n_f - 1) * sf + kf
    out_freq = min_freq if out_freq is None else out_freq
    if conv_output_size(out_freq, kf, sf) != n_f:
        raise ValueError(f"output width {out_freq} is not compatible with input width {n_f}")
    padded_shape = (weight.shape[1], n_t + kt - 1, out_freq)
    xp = _conv_adjoint(y.data, weight.data, sf, padded_shape)
    out = xp[:, front : front + n_t]
    if bias is not None:
        out = out + bias.data[:, None, None]

    def backward(g):
        gp = np.pad(g, ((0, 0), (front, back), (0, 0)))
        gy = _conv_forward(gp, weight.data, sf) if y.requires_grad else None
        gw = _conv_weight_grad(gp, y.data, kt, kf, sf) if weight.requires_grad else None
        gb = g.sum(axis=(1, 2)) if bias is not None else None
        return gy, gw, gb

    parents = (y, weight) + ((bias,) if bias is not None else (as_tensor(0.0),))
    return _make(np.ascontiguousarray(out), parents, backward)


def gru(x, w_ih, w_hh, b_ih, b_hh):
    """Unidirectional GRU over x (T, D) from a zero state; returns (T, H).

    Gates are packed as [reset, update, candidate] along the last axis of
    the (D, 3H) and (H, 3H) weights.
    """
    n_t = x.shape[0]
    H = w_hh.shape[0]
    W_hh = w_hh.data
    gi = x.data @ w_ih.data + b_ih.data
    dtype = gi.dtype
    hs = np.zeros((n_t + 1, H), dtype=dtype)
    r_all = np.empty((n_t, H), dtype=dtype)
    z_all = np.empty((n_t, H), dtype=dtype)
    n_all = np.empty((n_t, H), dtype=dtype)
    ghn_all = np.empty((n_t, H), dtype=dtype)
    for t in range(n_t):
        h = hs[t]
        gh = h @ W_hh + b_hh.data
        r = _sigmoid(gi[t, :H] + gh[:H])
        z = _sigmoid(gi[t, H : 2 * H] + gh[H : 2 * H])
        n = np.tanh(gi[t, 2 * H :] + r * gh[2 * H :])
        hs[t + 1] = (1.0 - z) * n + z * h
        r_all[t], z_all[t], n_all[t], ghn_all[t] = r, z, n, gh[2 * H :]

    def backward(g):
        dgi = np.empty((n_t, 3 * H), dtype=dtype)
        dgh = np.empty((n_t, 3 * H), dtype=dtype)
        dh = np.zeros(H, dtype=dtype)
        for t in range(n_t - 1, -1, -1):
            dh = dh + g[t]
            r, z, n = r_all[t], z_all[t], n_all[t]
            dn_pre = dh * (1.0 - z) * (1.0 - n * n)
            dz_pre = dh * (hs[t] - n) * z * (1.0 - z)
            dr_pre = dn_pre * ghn_all[t] * r * (1.0 - r)
            dgi[t, :H], dgi[t, H : 2 * H], dgi[t, 2 * H :] = dr_pre, dz_pre, dn_pre
            dgh[t, :H], dgh[t, H : 2 * H], dgh[t, 2 * H :] = dr_pre, dz_pre, dn_pre * r
            dh = dh * z + dgh[t] @ W_hh.T
        return (
            dgi @ w_ih.data.T,
            x.data.T @ dgi,
            hs[:-1].T @ dgh,
            dgi.sum(axis=0),
            dgh.sum(axis=0),
        )

    return _make(hs[1:].copy(), (x, w_ih, w_hh, b_ih, b_hh), backward)


def rfft(x):
    """Half-spectrum DFT along the last axis; returns (2, ..., F) = (real, imag)."""
    L = x.shape[-1]
    X = np.fft.rfft(x.data, axis=-1)
    out = np.stack([X.real, X.imag]).astype(x.dtype, copy=False)
    n_bins = X.shape[-1]

    def backward(g):
        G = np.zeros(g.shape[1:-1] + (L,), dtype=np.complex128)
        G[..., :n_bins] = g[0] + 1j * g[1]
        return ((np.fft.ifft(G, axis=-1).real * L).astype(x.dtype, copy=False),)

    return _make(out, (x,), backward)


def irfft(z, n: int):
    """Real inverse DFT of a (2, ..., F) half spectrum to length ``n``."""
    F = z.shape[-1]
    X = z.data[0] + 1j * z.data[1]
    out = np.fft.irfft(X, n=n, axis=-1).astype(z.dtype, copy=False)
    weight = np.full(F, 2.0 / n)
    weight[0] = 1.0 / n
    if n % 2 == 0:
        weight[-1] = 1.0 / n

    def backward(g):
        G = np.fft.rfft(g, axis=-1) * weight
        G[..., 0] = G[..., 0].real
        if n % 2 == 0:
            G[..., -1] = G[..., -1].real
        return (np.stack([G.real, G.imag]).astype(z.dtype, copy=False),)

    return _make(out, (z,), backward)


def overlap_add(frames, hop: int):
    """Sum (T, L) frames at stride ``hop`` into one signal of length L + (T-1) hop."""
    n_t, L = frames.shape
    idx = np.arange(L)[None, :] + hop * np.arange(n_t)[:, None]
    out = np.zeros(L + (n_t - 1) * hop, dtype=frames.dtype)
    for t in range(n_t):
        out[t * hop : t * hop + L] += frames.data[t]
    return _make(out, (frames,), lambda g: (g[idx],))
