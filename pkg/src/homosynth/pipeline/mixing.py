"""Noisy-mixture synthesis at a requested SNR."""

from __future__ import annotations

import numpy as np

from ..signal import AudioClip


def fit_length(x: np.ndarray, n: int) -> np.ndarray:
    """Loop or truncate ``x`` to exactly ``n`` samples."""
    if len(x) == 0:
        raise ValueError("cannot fit an empty signal")
    reps = -(-n // len(x))
    return np.tile(x, reps)[:n]


def reverberate(clean: np.ndarray, rir: np.ndarray) -> np.ndarray:
    """Direct convolution with a room impulse response, truncated to the input length."""
    return np.convolve(clean, rir)[: len(clean)]


def mix_at_snr(clean: AudioClip, noise: AudioClip, snr_db: float, rir: AudioClip = None) -> AudioClip:
    if clean.sample_rate != noise.sample_rate:
        raise ValueError(f"sample rates differ: {clean.sample_rate} vs {noise.sample_rate}")
    speech = clean.samples
    if rir is not None:
        if rir.sample_rate != clean.sample_rate:
            raise ValueError(f"RIR sample rate {rir.sample_rate} != {clean.sample_rate}")
        speech = reverberate(speech, rir.samples)
    n = fit_length(noise.samples, len(speech))
    p_speech = np.mean(speech**2)
    p_noise = np.mean(n**2)
    if p_speech == 0.0:
        raise ValueError("speech has zero power")
    if p_noise == 0.0:
        raise ValueError("noise has zero power")
    gain = np.sqrt(p_speech / (p_noise * 10.0 ** (snr_db / 10.0)))
    return AudioClip(speech + gain * n, clean.sample_rate)


def measured_snr(speech: np.ndarray, mixture: np.ndarray) -> float:
    noise = mixture - speech
    return 10.0 * np.log10(np.mean(speech**2) / np.mean(noise**2))
