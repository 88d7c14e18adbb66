"""Multi-scale mel distance and multi-scale STFT distance.

Both compare log magnitudes, ``|log(a + eps) - log(b + eps)|`` averaged over
bins and frames, then averaged over scales. The mel variant projects
magnitudes onto an 80-filter triangular mel bank first.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .audio_io import AudioBuffer
from .dsp import StftConfig, stft

__all__ = [
    "MelFilterbank",
    "DistanceReport",
    "MEL_WINDOWS",
    "STFT_SCALES",
    "hz_to_mel",
    "mel_to_hz",
    "mel_filterbank",
    "mel_distance",
    "stft_distance",
    "distance_report",
]

MEL_WINDOWS = (64, 128, 256, 512, 1024, 2048)
STFT_SCALES = ((2048, 512), (512, 128))
LOG_FLOOR = 1e-5


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@dataclass(frozen=True, eq=False)
class MelFilterbank:
    weights: np.ndarray
    centers_hz: np.ndarray
    fmin: float
    fmax: float

    @property
    def n_mels(self) -> int:
        return self.weights.shape[0]


@lru_cache(maxsize=32)
def mel_filterbank(n_fft: int, sample_rate: int, n_mels: int = 80, fmin: float = 0.0, fmax=None) -> MelFilterbank:
    """Triangular filters with centres equally spaced in mel between fmin and fmax.

    At small FFT sizes the lowest filters can be narrower than one bin; such a
    filter would catch no bin at all, so it is given unit weight on the bin
    nearest its centre instead.
    """
    if n_fft < 64 or n_fft & (n_fft - 1):
        raise ValueError(f"n_fft must be a power of two >= 64, got {n_fft}")
    fmax = sample_rate / 2 if fmax is None else fmax
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    bins = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bins - lower) / (center - lower)
    falling = (upper - bins) / (upper - center)
    weights = np.maximum(0.0, np.minimum(rising, falling))
    for i in np.flatnonzero(weights.sum(axis=1) == 0):
        weights[i, int(np.argmin(np.abs(bins - edges[i + 1])))] = 1.0
    weights.setflags(write=False)
    return MelFilterbank(weights, edges[1:-1], fmin, fmax)


def _check_pair(x: AudioBuffer, y: AudioBuffer):
    if len(x) != len(y):
        raise ValueError(f"length mismatch: {len(x)} vs {len(y)} samples")
    if x.sample_rate != y.sample_rate:
        raise ValueError(f"sample rate mismatch: {x.sample_rate} vs {y.sample_rate}")


def _magnitude(x: AudioBuffer, win: int, hop: int) -> np.ndarray:
    return np.abs(stft(x, StftConfig(win, hop)).frames)


def _log_l1(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.mean(np.abs(np.log(a + LOG_FLOOR) - np.log(b + LOG_FLOOR))))


def mel_scale_distances(x: AudioBuffer, y: AudioBuffer, windows=MEL_WINDOWS, n_mels: int = 80) -> dict:
    _check_pair(x, y)
    out = {}
    for win in windows:
        fb = mel_filterbank(win, x.sample_rate, n_mels).weights
        hop = win // 4
        out[win] = _log_l1(_magnitude(x, win, hop) @ fb.T, _magnitude(y, win, hop) @ fb.T)
    return out


def stft_scale_distances(x: AudioBuffer, y: AudioBuffer, scales=STFT_SCALES) -> dict:
    _check_pair(x, y)
    return {(win, hop): _log_l1(_magnitude(x, win, hop), _magnitude(y, win, hop)) for win, hop in scales}


def mel_distance(x: AudioBuffer, y: AudioBuffer) -> float:
    """Mean over Hann windows 64..2048 (hop = window/4) of the log-mel L1 distance."""
    return float(np.mean(list(mel_scale_distances(x, y).values())))


def stft_distance(x: AudioBuffer, y: AudioBuffer) -> float:
    """Mean over (2048, 512) and (512, 128) Hann STFTs of the log-magnitude L1 distance."""
    return float(np.mean(list(stft_scale_distances(x, y).values())))


@dataclass(frozen=True)
class DistanceReport:
    mel_distance: float
    stft_distance: float
    mel_per_scale: dict = field(default_factory=dict)
    stft_per_scale: dict = field(default_factory=dict)


def distance_report(x: AudioBuffer, y: AudioBuffer) -> DistanceReport:
    mel = mel_scale_distances(x, y)
    lin = stft_scale_distances(x, y)
    return DistanceReport(float(np.mean(list(mel.values()))), float(np.mean(list(lin.values()))), mel, lin)
