"""Parameterised layers built on the autodiff engine."""

from __future__ import annotations

import math

import numpy as np

from . import autograd as ag
from .autograd import Tensor


class Module:
    """Holds parameters as Tensor attributes and sub-modules as attributes or lists."""

    def named_parameters(self, prefix=""):
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def num_parameters(self):
        return sum(p.data.size for p in self.parameters())

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _uniform(rng, shape, fan_in, dtype):
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


def _zeros(shape, dtype):
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def _ones(shape, dtype):
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=True)


class Linear(Module):
    def __init__(self, d_in, d_out, rng, dtype=np.float32, bias=True):
        self.weight = _uniform(rng, (d_in, d_out), d_in, dtype)
        self.bias = _uniform(rng, (d_out,), d_in, dtype) if bias else None

    def forward(self, x):
        y = x @ self.weight
        return y if self.bias is None else y + self.bias


class LayerNorm(Module):
    """Normalises over ``axes`` with a per-feature gain and bias of shape ``shape``."""

    def __init__(self, shape, axes, dtype=np.float32):
        self.gain = _ones(shape, dtype)
        self.bias = _zeros(shape, dtype)
        self.axes = axes

    def forward(self, x):
        return ag.normalize(x, self.axes) * self.gain + self.bias


class Conv2d(Module):
    def __init__(self, c_in, c_out, kernel, stride, rng, dtype=np.float32):
        kt, kf = kernel
        fan_in = c_in * kt * kf
        self.weight = _uniform(rng, (c_out, c_in, kt, kf), fan_in, dtype)
        self.bias = _uniform(rng, (c_out,), fan_in, dtype)
        self.stride = tuple(stride)

    def forward(self, x):
        return ag.conv2d(x, self.weight, self.bias, self.stride)


class ConvTranspose2d(Module):
    def __init__(self, c_in, c_out, kernel, stride, rng, dtype=np.float32):
        kt, kf = kernel
        fan_in = c_in * kt * kf
        self.weight = _uniform(rng, (c_in, c_out, kt, kf), fan_in, dtype)
        self.bias = _uniform(rng, (c_out,), fan_in, dtype)
        self.stride = tuple(stride)

    def forward(self, y, out_freq=None):
        return ag.conv_transpose2d(y, self.weight, self.bias, self.stride, out_freq=out_freq)


class GRU(Module):
    def __init__(self, d_in, hidden, rng, dtype=np.float32):
        self.w_ih = _uniform(rng, (d_in, 3 * hidden), hidden, dtype)
        self.w_hh = _uniform(rng, (hidden, 3 * hidden), hidden, dtype)
        self.b_ih = _uniform(rng, (3 * hidden,), hidden, dtype)
        self.b_hh = _uniform(rng, (3 * hidden,), hidden, dtype)
        self.hidden = hidden

    def forward(self, x):
        return ag.gru(x, self.w_ih, self.w_hh, self.b_ih, self.b_hh)


class CausalSelfAttention(Module):
    """Single-head scaled dot-product attention; frame t attends to frames 0..t.

    The key projection has no bias: a key bias only shifts each score row by
    a constant, which the softmax removes.
    """

    def __init__(self, dim, rng, dtype=np.float32):
        self.query = Linear(dim, dim, rng, dtype)
        self.key = Linear(dim, dim, rng, dtype, bias=False)
        self.value = Linear(dim, dim, rng, dtype)
        self.out = Linear(dim, dim, rng, dtype)
        self.scale = 1.0 / math.sqrt(dim)

    def weights(self, x):
        scores = (self.query(x) @ self.key(x).T) * self.scale
        return ag.causal_softmax(scores)

    def forward(self, x):
        return self.out(self.weights(x) @ self.value(x))


class ARNBlock(Module):
    """Attentive recurrent block: GRU, then attention and feedforward sublayers.

    Both sublayers are pre-normalised and wrapped in residual connections;
    the feedforward expands to twice the hidden size.
    """

    def __init__(self, d_in, hidden, rng, dtype=np.float32):
        self.rnn = GRU(d_in, hidden, rng, dtype)
        self.attn_norm = LayerNorm((hidden,), axes=-1, dtype=dtype)
        self.attn = CausalSelfAttention(hidden, rng, dtype)
        self.ff_norm = LayerNorm((hidden,), axes=-1, dtype=dtype)
        self.ff_in = Linear(hidden, 2 * hidden, rng, dtype)
        self.ff_out = Linear(2 * hidden, hidden, rng, dtype)

    def forward(self, x):
        h = self.rnn(x)
        h = h + self.attn(self.attn_norm(h))
        return h + self.ff_out(ag.elu(self.ff_in(self.ff_norm(h))))
