"""Audio I/O, windowing, DFT and STFT/ISTFT with weighted overlap-add."""

from __future__ import annotations

import logging
import os
import wave
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)

SAMPLE_RATE = 16000


class AudioFormatError(ValueError):
    """Raised when a WAV file is not 16-bit PCM mono at 16 kHz."""


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError(f"expected mono samples, got shape {self.samples.shape}")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("samples contain NaN or Inf")

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class ComplexSpectrum:
    """Half-spectrum STFT frames, shape (T, F) with F = dft_size // 2 + 1."""

    frames: np.ndarray
    dft_size: int
    hop: int

    def __post_init__(self):
        self.frames = np.asarray(self.frames)
        if self.frames.ndim != 2:
            raise ValueError(f"frames must be 2-D (T, F), got shape {self.frames.shape}")
        if self.frames.shape[1] != num_bins(self.dft_size):
            raise ValueError(
                f"dft_size {self.dft_size} implies {num_bins(self.dft_size)} bins, "
                f"got {self.frames.shape[1]}"
            )
        if not np.all(np.isfinite(self.frames)):
            raise ValueError("spectrum contains NaN or Inf")

    @property
    def shape(self):
        return self.frames.shape


def num_bins(dft_size: int) -> int:
    return dft_size // 2 + 1


def read_wav(path) -> AudioClip:
    if not os.path.exists(path):
        raise FileNotFoundError(f"no such file: {path}")
    try:
        with wave.open(os.fspath(path), "rb") as w:
            channels = w.getnchannels()
            width = w.getsampwidth()
            rate = w.getframerate()
            raw = w.readframes(w.getnframes())
    except (wave.Error, EOFError) as exc:
        raise AudioFormatError(
            f"unsupported format in {path}: expected RIFF/WAVE 16-bit PCM ({exc})"
        ) from exc
    found = f"{channels} ch, {8 * width}-bit, {rate} Hz"
    if channels != 1 or width != 2 or rate != SAMPLE_RATE:
        raise AudioFormatError(
            f"unsupported format in {path}: expected 1 ch, 16-bit PCM, {SAMPLE_RATE} Hz; "
            f"found {found}"
        )
    pcm = np.frombuffer(raw, dtype="<i2")
    return AudioClip(pcm.astype(np.float64) / 32768.0, rate)


def write_wav(path, clip: AudioClip) -> int:
    """Write a clip as 16-bit PCM mono.

    Samples outside [-1, 1) saturate at the PCM limits. Returns the number
    of clipped samples (a warning is logged when it is nonzero).
    """
    scaled = np.round(clip.samples * 32768.0)
    n_clipped = int(np.count_nonzero((scaled > 32767) | (scaled < -32768)))
    if n_clipped:
        logger.warning("%d samples clipped while writing %s", n_clipped, path)
    pcm = np.clip(scaled, -32768, 32767).astype("<i2")
    with open(path, "wb") as fh, wave.open(fh, "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(clip.sample_rate)
        w.writeframes(pcm.tobytes())
    return n_clipped


def hann_window(length: int) -> np.ndarray:
    """Periodic Hann window, w[k] = 0.5 - 0.5 cos(2 pi k / length)."""
    if length < 2:
        raise ValueError(f"window length must be >= 2, got {length}")
    k = np.arange(length)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * k / length)


def dft(x) -> np.ndarray:
    """DFT of any length, X[z] = sum_n x[n] exp(-j 2 pi z n / L)."""
    x = np.asarray(x)
    if x.size == 0:
        raise ValueError("dft of an empty sequence")
    return np.fft.fft(x)


def idft(X) -> np.ndarray:
    X = np.asarray(X)
    if X.size == 0:
        raise ValueError("idft of an empty sequence")
    return np.fft.ifft(X)


def num_frames(n_samples: int, win_len: int, hop: int) -> int:
    if n_samples <= win_len:
        return 1
    return 1 + -(-(n_samples - win_len) // hop)


def frame_signal(x: np.ndarray, win_len: int, hop: int) -> np.ndarray:
    """Zero-pad the tail so the last frame is complete and return (T, win_len) frames."""
    n_frames = num_frames(len(x), win_len, hop)
    padded = np.zeros(win_len + (n_frames - 1) * hop, dtype=x.dtype)
    padded[: len(x)] = x
    idx = np.arange(win_len)[None, :] + hop * np.arange(n_frames)[:, None]
    return padded[idx]


def _check_geometry(win_len: int, hop: int):
    if hop <= 0:
        raise ValueError(f"hop must be positive, got {hop}")
    if hop > win_len:
        raise ValueError(f"hop {hop} exceeds window length {win_len}")


def stft(clip, win_len: int, hop: int) -> ComplexSpectrum:
    _check_geometry(win_len, hop)
    x = clip.samples if isinstance(clip, AudioClip) else np.asarray(clip, dtype=np.float64)
    frames = frame_signal(x, win_len, hop) * hann_window(win_len)
    return ComplexSpectrum(np.fft.rfft(frames, axis=-1), win_len, hop)


def ola_norm(n_frames: int, win_len: int, hop: int) -> np.ndarray:
    """Per-sample sum of squared synthesis windows over all frames."""
    w2 = hann_window(win_len) ** 2
    total = np.zeros(win_len + (n_frames - 1) * hop)
    for t in range(n_frames):
        total[t * hop : t * hop + win_len] += w2
    return total


def inverse_norm(n_frames: int, win_len: int, hop: int, floor: float = 0.1) -> np.ndarray:
    """Reciprocal of the per-sample window-energy normaliser.

    The normaliser is floored at ``floor`` times its peak. In the
    steady-state interior it is well above the floor, so
    reconstruction is unchanged there. Near the clip edges the raw sum
    tends to zero and would amplify any spectral modification without
    bound.
    """
    norm = ola_norm(n_frames, win_len, hop)
    return 1.0 / np.maximum(norm, floor * norm.max())


def overlap_add(frames: np.ndarray, hop: int) -> np.ndarray:
    n_frames, win_len = frames.shape
    out = np.zeros(win_len + (n_frames - 1) * hop, dtype=frames.dtype)
    for t in range(n_frames):
        out[t * hop : t * hop + win_len] += frames[t]
    return out


def istft(spec: ComplexSpectrum, win_len: int, hop: int, out_len: int) -> AudioClip:
    _check_geometry(win_len, hop)
    if spec.dft_size != win_len:
        raise ValueError(f"spectrum dft_size {spec.dft_size} != win_len {win_len}")
    n_frames = spec.frames.shape[0]
    span = win_len + (n_frames - 1) * hop
    if out_len > span:
        raise ValueError(f"out_len {out_len} exceeds reconstructable span {span}")
    window = hann_window(win_len)
    frames = np.fft.irfft(spec.frames, n=win_len, axis=-1) * window
    y = overlap_add(frames, hop) * inverse_norm(n_frames, win_len, hop)
    return AudioClip(y[:out_len])
