"""The full enhancement chain: analysis, liftering, two CARNs, recomposition."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import homomorphic as hm
from ..neural import autograd as ag
from ..neural.autograd import Tensor
from ..neural.networks import CARN, LifterNetwork
from ..signal import AudioClip, ComplexSpectrum, hann_window, inverse_norm, stft
from .config import SystemConfig


class EnhancementModel:
    """Trainable parts of the system.

    ``lifter`` is None in traditional mode. A CARN left as None acts as the
    identity map, which turns the model into a pure analysis/resynthesis
    scaffold.
    """

    def __init__(self, cfg: SystemConfig, lifter=None, carn_e=None, carn_v=None):
        self.cfg = cfg
        self.lifter = lifter
        self.carn_e = carn_e
        self.carn_v = carn_v

    @property
    def parts(self):
        return {"lifter": self.lifter, "carn_e": self.carn_e, "carn_v": self.carn_v}

    def named_parameters(self):
        for part_name, part in self.parts.items():
            if part is not None:
                yield from part.named_parameters(part_name + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    @property
    def dtype(self):
        params = self.parameters()
        return params[0].dtype if params else np.dtype(np.float64)

    def state_arrays(self):
        return {name: p.data for name, p in self.named_parameters()}

    def load_arrays(self, arrays: dict):
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(arrays))
        extra = sorted(set(arrays) - set(own))
        if missing or extra:
            raise ValueError(f"parameter sets differ: missing {missing[:3]}, unexpected {extra[:3]}")
        for name, param in own.items():
            value = np.asarray(arrays[name])
            if value.shape != param.data.shape:
                raise ValueError(
                    f"shape mismatch for array {name!r}: checkpoint {value.shape}, "
                    f"model {param.data.shape}"
                )
            param.data = value.astype(param.data.dtype).copy()


def build_model(cfg: SystemConfig, seed=None, dtype=np.float32, identity_carns=False):
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    lifter = None
    if cfg.lifter_mode == "intelligent":
        lifter = LifterNetwork(cfg.win_len, cfg.lifter_hidden, rng, dtype)
    if identity_carns:
        return EnhancementModel(cfg, lifter)
    carn_e = CARN(cfg.n_bins, cfg.carn, rng, dtype)
    carn_v = CARN(cfg.n_bins, cfg.carn, rng, dtype)
    return EnhancementModel(cfg, lifter, carn_e, carn_v)


@dataclass
class ForwardGraph:
    wave: Tensor
    spectrum: Tensor
    mask: Tensor
    cepstrum: hm.Cepstrum
    excitation_in: Tensor
    vocal_in: Tensor
    excitation_out: Tensor
    vocal_out: Tensor


def _synthesize(cep: Tensor, delay, sign, dft_size, dtype):
    """exp(DFT(cep)) as a (2, T, F) stack, with linear phase and sign re-applied."""
    log_spec = ag.rfft(cep)
    mag = ag.exp(log_spec[0])
    re, im = mag * ag.cos(log_spec[1]), mag * ag.sin(log_spec[1])
    if delay is None:
        return ag.stack([re, im])
    phase = hm.linear_phase_term(delay, log_spec.shape[-1], dft_size)
    rot_re = (sign[:, None] * np.cos(phase)).astype(dtype)
    rot_im = (sign[:, None] * np.sin(phase)).astype(dtype)
    return ag.stack([re * rot_re - im * rot_im, re * rot_im + im * rot_re])


def _complex_mul(a: Tensor, b: Tensor) -> Tensor:
    return ag.stack([a[0] * b[0] - a[1] * b[1], a[0] * b[1] + a[1] * b[0]])


def synthesis_graph(spec: Tensor, win_len: int, hop: int, out_len: int) -> Tensor:
    """Differentiable ISTFT: weighted overlap-add with sum-of-squares normalisation."""
    dtype = spec.dtype
    n_frames = spec.shape[1]
    frames = ag.irfft(spec, win_len) * hann_window(win_len).astype(dtype)
    y = ag.overlap_add(frames, hop)
    return (y * inverse_norm(n_frames, win_len, hop).astype(dtype))[:out_len]


def edge_pad(cfg: SystemConfig) -> int:
    """Zeros added at each end so every real sample lies in the steady-state overlap region."""
    return cfg.win_len - cfg.hop


def analysis_spectrum(samples, cfg: SystemConfig) -> ComplexSpectrum:
    """STFT of the edge-padded signal; the pipeline and its loss targets share this framing."""
    samples = samples.samples if isinstance(samples, AudioClip) else np.asarray(samples)
    pad = edge_pad(cfg)
    return stft(np.pad(samples, (pad, pad)), cfg.win_len, cfg.hop)


def forward_graph(samples, model: EnhancementModel, cfg: SystemConfig = None) -> ForwardGraph:
    """Build the autodiff graph from noisy samples to the enhanced waveform."""
    cfg = cfg or model.cfg
    dtype = model.dtype
    samples = samples.samples if isinstance(samples, AudioClip) else np.asarray(samples)
    spec = analysis_spectrum(samples, cfg)
    cep = hm.cepstrum_analyze(spec)
    cep_t = Tensor(cep.frames.astype(dtype))
    if cfg.lifter_mode == "intelligent":
        if model.lifter is None:
            raise ValueError("intelligent lifter mode needs a lifter network")
        mask = model.lifter(cep_t)
    else:
        binary = hm.traditional_mask(cep, cfg.lifter_N, cfg.lifter_one_sided)
        mask = Tensor(binary.values.astype(dtype))
    excitation_cep = mask * cep_t
    vocal_cep = (1.0 - mask) * cep_t
    excitation_in = _synthesize(excitation_cep, None, None, cfg.win_len, dtype)
    vocal_in = _synthesize(vocal_cep, cep.linear_phase, cep.sign, cfg.win_len, dtype)
    excitation_out = excitation_in if model.carn_e is None else model.carn_e(excitation_in)
    vocal_out = vocal_in if model.carn_v is None else model.carn_v(vocal_in)
    enhanced = _complex_mul(excitation_out, vocal_out)
    pad = edge_pad(cfg)
    wave = synthesis_graph(enhanced, cfg.win_len, cfg.hop, len(samples) + pad)[pad:]
    return ForwardGraph(
        wave, enhanced, mask, cep, excitation_in, vocal_in, excitation_out, vocal_out
    )


def _to_spectrum(stack: Tensor, cfg) -> ComplexSpectrum:
    data = stack.data.astype(np.float64)
    return ComplexSpectrum(data[0] + 1j * data[1], cfg.win_len, cfg.hop)


@dataclass
class ForwardResult:
    enhanced: AudioClip
    spectrum: ComplexSpectrum
    intermediates: dict


def forward(noisy: AudioClip, model: EnhancementModel, cfg: SystemConfig = None) -> ForwardResult:
    """Enhance one clip. Intermediates hold the mask, component cepstra and spectra."""
    cfg = cfg or model.cfg
    with ag.no_grad():
        g = forward_graph(noisy, model, cfg)
    mask = g.mask.data.astype(np.float64)
    cep = g.cepstrum
    excitation_cep = cep.with_frames(mask * cep.frames, carry_phase=False)
    vocal_cep = cep.with_frames((1.0 - mask) * cep.frames, carry_phase=True)
    intermediates = {
        "cepstrum": cep,
        "mask": mask,
        "excitation_cepstrum": excitation_cep,
        "vocal_cepstrum": vocal_cep,
        "excitation_spec": _to_spectrum(g.excitation_in, cfg),
        "vocal_spec": _to_spectrum(g.vocal_in, cfg),
        "excitation_estimate": _to_spectrum(g.excitation_out, cfg),
        "vocal_estimate": _to_spectrum(g.vocal_out, cfg),
    }
    enhanced = AudioClip(g.wave.data.astype(np.float64), noisy.sample_rate)
    return ForwardResult(enhanced, _to_spectrum(g.spectrum, cfg), intermediates)


def enhance_clip(noisy: AudioClip, model: EnhancementModel) -> AudioClip:
    return forward(noisy, model).enhanced
