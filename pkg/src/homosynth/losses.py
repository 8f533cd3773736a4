"""SI-SNR, compressed magnitude and RI losses, and their weighted sum.

Every loss accepts either plain arrays (returns a float) or autodiff
tensors (returns a scalar Tensor). Spectra are ComplexSpectrum objects,
complex arrays of shape (T, F), or real (2, T, F) stacks of (real, imag).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .neural import autograd as ag
from .neural.autograd import Tensor
from .signal import ComplexSpectrum

MAG_FLOOR = 1e-10


@dataclass
class LossConfig:
    p: float = 0.5
    sisnr_eps: float = 1e-8
    w_ri: float = 1.0
    w_mag: float = 1.0
    w_sisnr: float = 1.0

    @property
    def weights(self):
        return (self.w_ri, self.w_mag, self.w_sisnr)


def _as_stack(spec, dtype=None):
    """Return a (2, T, F) Tensor for any accepted spectrum form."""
    if isinstance(spec, Tensor):
        return spec
    if isinstance(spec, ComplexSpectrum):
        spec = spec.frames
    spec = np.asarray(spec)
    if np.iscomplexobj(spec) or spec.ndim == 2:
        spec = np.stack([spec.real, spec.imag])
    return Tensor(spec if dtype is None else spec.astype(dtype))


def _wrap(value, tensors_in):
    return value if tensors_in else float(value.data)


def _dtype_of(*args):
    for a in args:
        if isinstance(a, Tensor):
            return a.dtype
    return np.float64


def si_snr(estimate, reference, eps: float = 1e-8):
    """Scale-invariant SNR in dB (higher is better)."""
    tensors_in = isinstance(estimate, Tensor) or isinstance(reference, Tensor)
    dtype = _dtype_of(estimate, reference)
    est = estimate if isinstance(estimate, Tensor) else Tensor(np.asarray(estimate, dtype=dtype))
    ref = reference if isinstance(reference, Tensor) else Tensor(np.asarray(reference, dtype=dtype))
    if est.shape != ref.shape:
        raise ValueError(f"length mismatch: {est.shape} vs {ref.shape}")
    ref_energy = (ref * ref).sum()
    if float(ref_energy.data) == 0.0:
        raise ValueError("reference signal is identically zero")
    target = ref * ((est * ref).sum() / ref_energy)
    noise = est - target
    ratio = ((target * target).sum() + eps) / ((noise * noise).sum() + eps)
    return _wrap(ag.log(ratio) * (10.0 / math.log(10.0)), tensors_in)


def _magnitude(z):
    return ag.sqrt(ag.clamp_min(z[0] * z[0] + z[1] * z[1], MAG_FLOOR**2))


def _check_dims(a, b):
    if a.shape != b.shape:
        raise ValueError(f"spectrum dimensions differ: {a.shape[1:]} vs {b.shape[1:]}")


def mag_loss(S, S_hat, p: float = 0.5):
    """(1/T) sum_t sum_f (|S|^p - |S_hat|^p)^2."""
    if p <= 0:
        raise ValueError(f"compression exponent must be positive, got {p}")
    tensors_in = isinstance(S, Tensor) or isinstance(S_hat, Tensor)
    dtype = _dtype_of(S, S_hat)
    ref, est = _as_stack(S, dtype), _as_stack(S_hat, dtype)
    _check_dims(ref, est)
    diff = _magnitude(ref) ** p - _magnitude(est) ** p
    return _wrap((diff * diff).sum() * (1.0 / ref.shape[1]), tensors_in)


def ri_loss(S, S_hat, p: float = 0.5):
    """(1/T) sum_t sum_f | |S|^p e^{j theta_S} - |S_hat|^p e^{j theta_S_hat} |^2."""
    if p <= 0:
        raise ValueError(f"compression exponent must be positive, got {p}")
    tensors_in = isinstance(S, Tensor) or isinstance(S_hat, Tensor)
    dtype = _dtype_of(S, S_hat)
    ref, est = _as_stack(S, dtype), _as_stack(S_hat, dtype)
    _check_dims(ref, est)
    ref_scale = _magnitude(ref) ** (p - 1.0)
    est_scale = _magnitude(est) ** (p - 1.0)
    d_re = ref[0] * ref_scale - est[0] * est_scale
    d_im = ref[1] * ref_scale - est[1] * est_scale
    return _wrap((d_re * d_re + d_im * d_im).sum() * (1.0 / ref.shape[1]), tensors_in)


def combined_loss(est_wave, ref_wave, est_spec, ref_spec, cfg: LossConfig = None):
    """w_ri * RI + w_mag * mag - w_sisnr * SI-SNR, as a scalar Tensor.

    The SI-SNR term is negated so that lowering the total raises SI-SNR.
    """
    cfg = cfg or LossConfig()
    dtype = _dtype_of(est_wave, est_spec)
    if not isinstance(est_wave, Tensor):
        est_wave = Tensor(np.asarray(est_wave, dtype=dtype))
    ri = ri_loss(ref_spec, _as_stack(est_spec, dtype), cfg.p)
    mag = mag_loss(ref_spec, _as_stack(est_spec, dtype), cfg.p)
    if not isinstance(ref_wave, Tensor):
        ref_wave = np.asarray(ref_wave, dtype=dtype)
    snr = si_snr(est_wave, ref_wave, cfg.sisnr_eps)
    return ri * cfg.w_ri + mag * cfg.w_mag - snr * cfg.w_sisnr
