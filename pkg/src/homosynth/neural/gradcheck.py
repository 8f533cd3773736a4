"""Central finite-difference gradient checking."""

from __future__ import annotations

import numpy as np

from .autograd import Tensor


def gradcheck(f, params, h=1e-4, floor=1e-8):
    """Largest relative error between backprop and central differences.

    ``f`` maps the list of parameter tensors to a scalar Tensor. Every
    entry of every parameter is perturbed by +-h in place; the relative
    error is |analytic - numeric| / max(|analytic|, |numeric|, floor).
    """
    params = list(params)
    for p in params:
        p.grad = None
    out = f(params)
    if not np.isfinite(out.data).all():
        raise FloatingPointError("gradcheck: function value is not finite")
    out.backward()
    worst = 0.0
    for p in params:
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = _value(f, params)
            flat[i] = orig - h
            f_minus = _value(f, params)
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = analytic.reshape(-1)[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            worst = max(worst, err)
    return worst


def _value(f, params):
    value = float(f(params).data)
    if not np.isfinite(value):
        raise FloatingPointError("gradcheck: function value is not finite")
    return value


def double_tensor(x, requires_grad=True):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=requires_grad)
