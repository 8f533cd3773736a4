"""The lifter ARN and the convolutional attentive recurrent network (CARN)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .layers import ARNBlock, Conv2d, ConvTranspose2d, LayerNorm, Linear, Module


@dataclass
class CarnConfig:
    encoder_channels: list = field(default_factory=lambda: [16, 32, 43, 86, 172, 172])
    kernel: tuple = (3, 3)
    stride: tuple = (1, 2)
    arn_hidden: int = 516
    input_channels: int = 2
    arn_blocks: int = 2
    residual: bool = True

    def __post_init__(self):
        self.encoder_channels = [int(c) for c in self.encoder_channels]
        self.kernel = tuple(int(k) for k in self.kernel)
        self.stride = tuple(int(s) for s in self.stride)
        if not self.encoder_channels:
            raise ValueError("encoder_channels must not be empty")
        if self.stride[0] != 1:
            raise ValueError("time stride must be 1")

    def freq_sizes(self, n_freq):
        """Frequency width entering each encoder level, plus the bottleneck width."""
        sizes = [n_freq]
        for _ in self.encoder_channels:
            nxt = ag.conv_output_size(sizes[-1], self.kernel[1], self.stride[1])
            if nxt < 1:
                raise ValueError(
                    f"{n_freq} bins are too few for {len(self.encoder_channels)} encoder layers"
                )
            sizes.append(nxt)
        return sizes


class LifterNetwork(Module):
    """Predicts a (T, L) ratio mask in (0, 1) from a (T, L) cepstrum.

    With ``zero_init`` the output projection starts at zero, so the initial
    mask is 0.5 everywhere. A mask that varies erratically across quefrency
    gives component spectra with extreme dynamic range.
    """

    def __init__(self, dft_size, hidden, rng, dtype=np.float32, zero_init=True):
        self.arn = ARNBlock(dft_size, hidden, rng, dtype)
        self.proj = Linear(hidden, dft_size, rng, dtype)
        if zero_init:
            self.proj.weight.data[...] = 0.0
            self.proj.bias.data[...] = 0.0
        self.dft_size = dft_size

    def forward(self, cepstrum):
        if not isinstance(cepstrum, Tensor):
            cepstrum = Tensor(np.asarray(cepstrum, dtype=self.proj.weight.dtype))
        if cepstrum.shape[-1] != self.dft_size:
            raise ValueError(f"expected {self.dft_size} quefrency bins, got {cepstrum.shape[-1]}")
        mask = ag.sigmoid(self.proj(self.arn(cepstrum)))
        if not np.all(np.isfinite(mask.data)):
            raise FloatingPointError("lifter network produced non-finite activations")
        return mask


class CARN(Module):
    """Convolutional encoder/decoder with an ARN bottleneck and skip connections.

    Maps a (2, T, F) real/imag stack to a (2, T, F) spectrum estimate. With
    ``cfg.residual`` the estimate is the input plus the decoder output, and
    the last transposed convolution starts at zero so an untrained network
    passes its input through unchanged.
    """

    def __init__(self, n_freq, cfg: CarnConfig, rng, dtype=np.float32):
        self.cfg = cfg
        self.n_freq = n_freq
        self.freqs = cfg.freq_sizes(n_freq)
        channels = [cfg.input_channels] + cfg.encoder_channels
        self.encoder, self.enc_norms = [], []
        for i in range(len(cfg.encoder_channels)):
            self.encoder.append(Conv2d(channels[i], channels[i + 1], cfg.kernel, cfg.stride, rng, dtype))
            self.enc_norms.append(_channel_norm(channels[i + 1], dtype))
        flat = cfg.encoder_channels[-1] * self.freqs[-1]
        self.arns = [ARNBlock(flat, cfg.arn_hidden, rng, dtype)]
        for _ in range(cfg.arn_blocks - 1):
            self.arns.append(ARNBlock(cfg.arn_hidden, cfg.arn_hidden, rng, dtype))
        self.bottleneck_proj = (
            Linear(cfg.arn_hidden, flat, rng, dtype) if cfg.arn_hidden != flat else None
        )
        self.decoder, self.dec_norms = [], []
        for i in reversed(range(len(cfg.encoder_channels))):
            c_out = channels[i] if i > 0 else cfg.input_channels
            self.decoder.append(
                ConvTranspose2d(2 * channels[i + 1], c_out, cfg.kernel, cfg.stride, rng, dtype)
            )
            if i > 0:
                self.dec_norms.append(_channel_norm(c_out, dtype))
        if cfg.residual:
            last = self.decoder[-1]
            last.weight.data[...] = 0.0
            last.bias.data[...] = 0.0

    def forward(self, x):
        if x.shape[0] != self.cfg.input_channels or x.shape[2] != self.n_freq:
            raise ValueError(
                f"CARN built for ({self.cfg.input_channels}, T, {self.n_freq}), got {x.shape}"
            )
        x_in = x
        skips = []
        for conv, norm in zip(self.encoder, self.enc_norms):
            x = ag.elu(norm(conv(x)))
            skips.append(x)
        c, n_t, f = x.shape
        h = x.transpose(1, 0, 2).reshape(n_t, c * f)
        for arn in self.arns:
            h = arn(h)
        if self.bottleneck_proj is not None:
            h = self.bottleneck_proj(h)
        x = h.reshape(n_t, c, f).transpose(1, 0, 2)
        n_levels = len(self.decoder)
        for j, deconv in enumerate(self.decoder):
            level = n_levels - 1 - j
            x = deconv(ag.concat([x, skips[level]], axis=0), out_freq=self.freqs[level])
            if level > 0:
                x = ag.elu(self.dec_norms[j](x))
        return x + x_in if self.cfg.residual else x


def _channel_norm(channels, dtype):
    # per-frame normalisation over (channel, freq), per-channel affine
    return LayerNorm((channels, 1, 1), axes=(0, 2), dtype=dtype)


def carn_forward(spec, model: CARN):
    """Run a CARN on a ComplexSpectrum or a (2, T, F) tensor.

    A ComplexSpectrum in gives a ComplexSpectrum out; a tensor gives a tensor.
    """
    from ..signal import ComplexSpectrum

    if isinstance(spec, ComplexSpectrum):
        dtype = model.encoder[0].weight.dtype
        stacked = Tensor(np.stack([spec.frames.real, spec.frames.imag]).astype(dtype))
        with ag.no_grad():
            out = model(stacked).data
        return ComplexSpectrum(out[0] + 1j * out[1], spec.dft_size, spec.hop)
    return model(spec)

