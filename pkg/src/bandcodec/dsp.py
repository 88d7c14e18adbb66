"""Windowed STFT analysis and weighted overlap-add (WOLA) synthesis.

Frames are one-sided (bins ``0..N/2``). Synthesis uses the analysis window
again and divides by the overlap-added squared window, which makes
``istft(stft(x))`` exact up to rounding for any hop where that sum is
nonzero over the kept region.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .audio_io import AudioBuffer
from .errors import NumericError

__all__ = [
    "StftConfig",
    "Spectrogram",
    "ColaReport",
    "hann_window",
    "default_stft_config",
    "stft",
    "istft",
    "overlap_add_norm",
    "check_cola",
]

WOLA_FLOOR = 1e-8


def hann_window(n: int) -> np.ndarray:
    """Periodic Hann window, ``w[i] = 0.5 * (1 - cos(2*pi*i/n))``."""
    if n < 2:
        raise ValueError(f"window length must be >= 2, got {n}")
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(n) / n))


@dataclass(frozen=True, eq=False)
class StftConfig:
    fft_size: int
    hop: int
    window: np.ndarray = field(default=None, repr=False)
    center_padding: bool = True

    def __post_init__(self):
        if self.fft_size < 2 or self.fft_size % 2:
            raise ValueError(f"fft_size must be an even integer >= 2, got {self.fft_size}")
        if not 0 < self.hop <= self.fft_size:
            raise ValueError(f"hop must satisfy 0 < hop <= fft_size, got {self.hop}")
        window = hann_window(self.fft_size) if self.window is None else np.asarray(self.window, dtype=np.float64)
        if window.shape != (self.fft_size,):
            raise ValueError(f"window length {window.shape} does not match fft_size {self.fft_size}")
        if np.any(window < 0) or np.any(window > 1):
            raise ValueError("window values must lie in [0, 1]")
        object.__setattr__(self, "window", window)

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1


def default_stft_config() -> StftConfig:
    """Band-split analysis default: periodic Hann, N=1024, R=256, centered."""
    return StftConfig(1024, 256)


@dataclass(frozen=True, eq=False)
class Spectrogram:
    """One-sided STFT; ``frames[m, k]`` is frame ``m``, bin ``k``."""

    frames: np.ndarray
    config: StftConfig
    sample_rate: int
    original_length: int

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.complex128)
        if frames.ndim != 2 or frames.shape[1] != self.config.n_bins:
            raise ValueError(f"frames must have shape (M, {self.config.n_bins}), got {frames.shape}")
        if not np.all(np.isfinite(frames)):
            raise ValueError("spectrogram contains non-finite values")
        object.__setattr__(self, "frames", frames)

    def with_frames(self, frames: np.ndarray) -> "Spectrogram":
        return Spectrogram(frames, self.config, self.sample_rate, self.original_length)


def _frame_starts(n_frames: int, hop: int) -> np.ndarray:
    return np.arange(n_frames) * hop


def stft(x: AudioBuffer, cfg: StftConfig) -> Spectrogram:
    """Short-time Fourier transform of ``x``.

    With ``center_padding`` the signal is reflect-padded by ``N/2`` on both
    ends. Frame ``m`` covers padded samples ``[m*R, m*R + N)``.
    """
    n, hop = cfg.fft_size, cfg.hop
    signal = x.samples
    if cfg.center_padding:
        if len(signal) <= n // 2:
            raise ValueError(f"signal of {len(signal)} samples too short to reflect-pad by {n // 2}")
        signal = np.pad(signal, n // 2, mode="reflect")
    if len(signal) < n:
        raise ValueError(f"signal of {len(signal)} samples shorter than one frame ({n})")
    n_frames = (len(signal) - n) // hop + 1
    idx = _frame_starts(n_frames, hop)[:, None] + np.arange(n)
    frames = np.fft.rfft(signal[idx] * cfg.window, axis=1)
    return Spectrogram(frames, cfg, x.sample_rate, len(x.samples))


def overlap_add_norm(cfg: StftConfig, n_frames: int) -> np.ndarray:
    """``sum_m w^2[n - m*R]`` over the padded output span."""
    n, hop = cfg.fft_size, cfg.hop
    total = n + (n_frames - 1) * hop
    acc = np.zeros(total)
    w2 = cfg.window ** 2
    for start in _frame_starts(n_frames, hop):
        acc[start:start + n] += w2
    return acc


def istft(spec: Spectrogram) -> AudioBuffer:
    """Inverse STFT by weighted overlap-add.

    Each inverse-FFT frame is multiplied by the window, overlap-added, and
    divided pointwise by the overlap-added squared window (floored at 1e-8).
    The result is trimmed to ``spec.original_length``.

    Raises:
        NumericError: the squared-window sum vanishes inside the kept region,
            or the frames do not span the original length.
    """
    cfg = spec.config
    n, hop = cfg.fft_size, cfg.hop
    n_frames = spec.frames.shape[0]
    total = n + (n_frames - 1) * hop
    offset = n // 2 if cfg.center_padding else 0
    stop = offset + spec.original_length
    if stop > total:
        raise NumericError(f"{n_frames} frames cover {total} samples, need {stop}")

    time_frames = np.fft.irfft(spec.frames, n=n, axis=1) * cfg.window
    out = np.zeros(total)
    for m, start in enumerate(_frame_starts(n_frames, hop)):
        out[start:start + n] += time_frames[m]
    norm = overlap_add_norm(cfg, n_frames)[offset:stop]
    if np.any(norm < WOLA_FLOOR):
        bad = int(np.argmax(norm < WOLA_FLOOR))
        raise NumericError(f"zero overlap-add denominator at output sample {bad}")
    return AudioBuffer(out[offset:stop] / np.maximum(norm, WOLA_FLOOR), spec.sample_rate)


@dataclass(frozen=True)
class ColaReport:
    max_deviation: float
    level: float

    def ok(self, tol: float = 1e-10) -> bool:
        return self.max_deviation <= tol


def check_cola(cfg: StftConfig) -> ColaReport:
    """Measure how far ``sum_m w^2[n - m*R]`` is from constant.

    Evaluated over a steady-state span where every sample is covered by all
    frames that could reach it; the reported deviation is the maximum
    absolute distance from the median of that sum.
    """
    n, hop = cfg.fft_size, cfg.hop
    per = -(-n // hop)
    n_frames = 2 * per + 2
    acc = overlap_add_norm(cfg, n_frames)
    steady = acc[n:(n_frames - 1) * hop]
    level = float(np.median(steady))
    return ColaReport(float(np.max(np.abs(steady - level))), level)
