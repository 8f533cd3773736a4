"""Complex-cepstrum analysis, liftering and exponential-domain recomposition.

A frame spectrum S is split as log S = log E + log V. The cepstrum is the
inverse DFT of the phase-unwrapped complex log spectrum; after a linear-phase
slope (an integer delay) and a sign are removed, that log spectrum is
conjugate symmetric, so the cepstrum is real. Liftering splits the cepstrum
additively and each part is mapped back with exp(DFT(.)), so the product of
the two component spectra reproduces S.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .signal import ComplexSpectrum

MAG_FLOOR = 1e-10
IMAG_TOLERANCE = 1e-8
DEFAULT_QUEFRENCY_CUT = 29


@dataclass
class Cepstrum:
    """Per-frame real cepstra with the removed linear phase.

    ``linear_phase`` holds the integer delay d (samples) whose phase
    -2 pi k d / L was removed before the inverse DFT. ``sign`` is the
    removed overall sign (+1 or -1), needed when the DC bin is negative.
    ``floored`` counts magnitude bins raised to the floor during analysis.
    """

    frames: np.ndarray
    linear_phase: np.ndarray
    dft_size: int
    sign: np.ndarray = None
    hop: int = 0
    floored: int = 0
    imag_residue: float = 0.0

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        n_frames = self.frames.shape[0]
        if self.frames.ndim != 2 or self.frames.shape[1] != self.dft_size:
            raise ValueError(
                f"cepstrum frames must be (T, {self.dft_size}), got {self.frames.shape}"
            )
        self.linear_phase = np.asarray(self.linear_phase, dtype=np.int64).reshape(n_frames)
        if self.sign is None:
            self.sign = np.ones(n_frames)
        self.sign = np.asarray(self.sign, dtype=np.float64).reshape(n_frames)
        if not np.all(np.isfinite(self.frames)):
            raise ValueError("cepstrum contains NaN or Inf")

    @property
    def shape(self):
        return self.frames.shape

    def with_frames(self, frames, carry_phase: bool) -> "Cepstrum":
        """Same geometry, new values; the phase terms are kept or reset to neutral."""
        n = self.frames.shape[0]
        return Cepstrum(
            frames,
            self.linear_phase.copy() if carry_phase else np.zeros(n, dtype=np.int64),
            self.dft_size,
            self.sign.copy() if carry_phase else np.ones(n),
            self.hop,
        )


@dataclass
class LifterMask:
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if np.any(self.values < 0.0) or np.any(self.values > 1.0) or np.any(
            np.isnan(self.values)
        ):
            raise ValueError("lifter mask entries must lie in [0, 1]")


def full_spectrum(half: np.ndarray, dft_size: int) -> np.ndarray:
    """Rebuild the conjugate-symmetric full spectrum from a half spectrum."""
    n_tail = dft_size - half.shape[-1]
    tail = np.conj(half[..., 1 : 1 + n_tail][..., ::-1])
    return np.concatenate([half, tail], axis=-1)


def linear_phase_term(delay: np.ndarray, n_bins: int, dft_size: int) -> np.ndarray:
    """Phase -2 pi k d / L for each frame delay d, shape (T, n_bins)."""
    k = np.arange(n_bins)
    return -2.0 * np.pi * np.outer(delay, k) / dft_size


def cepstrum_analyze(spec: ComplexSpectrum) -> Cepstrum:
    X = np.asarray(spec.frames)
    if not np.all(np.isfinite(X)):
        raise ValueError("spectrum contains NaN or Inf")
    L = spec.dft_size
    F = X.shape[1]
    mag = np.abs(X)
    floored = int(np.count_nonzero(mag < MAG_FLOOR))
    log_mag = np.log(np.maximum(mag, MAG_FLOOR))

    phase = np.unwrap(np.angle(X), axis=-1)
    # a negative DC bin starts the unwrapped phase at pi; remove it as a sign
    sign_pi = np.round(phase[:, 0] / np.pi)
    phase = phase - np.pi * sign_pi[:, None]
    sign = np.where(np.mod(sign_pi, 2) == 0, 1.0, -1.0)
    if L % 2 == 0:
        delay = -np.round(phase[:, -1] / np.pi).astype(np.int64)
    else:
        # no Nyquist bin: extrapolate the slope to k = L/2
        delay = -np.round(phase[:, -1] * L / (2.0 * np.pi * (F - 1))).astype(np.int64)
    phase = phase - linear_phase_term(delay, F, L)

    log_half = log_mag + 1j * phase
    full = full_spectrum(log_half, L)
    cep = np.fft.ifft(full, axis=-1)
    residue = float(np.max(np.abs(cep.imag))) if cep.size else 0.0
    if residue > IMAG_TOLERANCE:
        raise ArithmeticError(
            f"cepstrum imaginary residue {residue:.3e} exceeds {IMAG_TOLERANCE:g}"
        )
    return Cepstrum(cep.real, delay, L, sign, spec.hop, floored, residue)


def cepstrum_synthesize(cep: Cepstrum) -> ComplexSpectrum:
    if not np.all(np.isfinite(cep.frames)):
        raise ValueError("cepstrum contains NaN or Inf")
    L = cep.dft_size
    log_half = np.fft.rfft(cep.frames, axis=-1)
    F = log_half.shape[1]
    phase = log_half.imag + linear_phase_term(cep.linear_phase, F, L)
    spec = cep.sign[:, None] * np.exp(log_half.real) * np.exp(1j * phase)
    return ComplexSpectrum(spec, L, cep.hop)


def vocal_region(dft_size: int, cut: int, one_sided: bool = False) -> np.ndarray:
    """Boolean quefrency mask of the low-quefrency (vocal tract) region.

    The symmetric region {n < N} u {n > L - N} keeps both ends of the
    cepstrum; ``one_sided`` keeps only n < N.
    """
    if not 1 <= cut <= dft_size // 2:
        raise ValueError(f"quefrency cut must be in [1, {dft_size // 2}], got {cut}")
    n = np.arange(dft_size)
    region = n < cut
    if not one_sided:
        region |= n > dft_size - cut
    return region


def lifter_traditional(cep: Cepstrum, N: int = DEFAULT_QUEFRENCY_CUT, one_sided: bool = False):
    """Binary liftering at quefrency N. Returns (vocal, excitation)."""
    region = vocal_region(cep.dft_size, N, one_sided)
    vocal = cep.frames.copy()
    vocal[:, ~region] = 0.0
    excitation = cep.frames - vocal
    return cep.with_frames(vocal, carry_phase=True), cep.with_frames(excitation, carry_phase=False)


def traditional_mask(cep: Cepstrum, N: int = DEFAULT_QUEFRENCY_CUT, one_sided: bool = False):
    """The excitation mask equivalent to :func:`lifter_traditional`."""
    region = vocal_region(cep.dft_size, N, one_sided)
    values = np.broadcast_to((~region).astype(np.float64), cep.shape).copy()
    return LifterMask(values)


def apply_mask_lifter(cep: Cepstrum, mask: LifterMask):
    """Ratio-mask liftering. Returns (excitation, vocal).

    The mask selects the excitation branch; the labels are nominal since
    nothing in the split fixes which branch is which. The vocal branch
    carries the stored linear phase and sign.
    """
    values = mask.values if isinstance(mask, LifterMask) else LifterMask(mask).values
    if values.shape != cep.shape:
        raise ValueError(f"mask shape {values.shape} != cepstrum shape {cep.shape}")
    excitation = values * cep.frames
    vocal = (1.0 - values) * cep.frames
    return cep.with_frames(excitation, carry_phase=False), cep.with_frames(vocal, carry_phase=True)


def recompose(excitation_spec: ComplexSpectrum, vocal_spec: ComplexSpectrum) -> ComplexSpectrum:
    if excitation_spec.shape != vocal_spec.shape:
        raise ValueError(
            f"component spectra differ in shape: {excitation_spec.shape} vs {vocal_spec.shape}"
        )
    return ComplexSpectrum(
        excitation_spec.frames * vocal_spec.frames, vocal_spec.dft_size, vocal_spec.hop
    )


def write_frames_csv(path, values: np.ndarray, prefix: str = "q"):
    """One row per frame with a ``frame,q0,q1,...`` header, 17 significant digits.

    Complex arrays are written as interleaved ``<prefix>k_re,<prefix>k_im`` columns.
    """
    values = np.asarray(values)
    is_complex = np.iscomplexobj(values)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        if is_complex:
            header = [f"{prefix}{k}_{part}" for k in range(values.shape[1]) for part in ("re", "im")]
        else:
            header = [f"{prefix}{k}" for k in range(values.shape[1])]
        writer.writerow(["frame"] + header)
        for t, row in enumerate(values):
            if is_complex:
                row = np.stack([row.real, row.imag], axis=-1).ravel()
            writer.writerow([t] + [format(float(v), ".17g") for v in row])


def read_frames_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row[1:]] for row in reader]
    data = np.array(rows, dtype=np.float64).reshape(len(rows), len(header) - 1)
    if header[1:] and header[1].endswith("_re"):
        return data[:, 0::2] + 1j * data[:, 1::2]
    return data
