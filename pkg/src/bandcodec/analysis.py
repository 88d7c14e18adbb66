"""Codebook-utilization entropy and average spectral energy profiles."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from typing import List, Sequence, Union

import numpy as np

from ._io import atomic_output
from .audio_io import AudioBuffer
from .dsp import StftConfig, stft

__all__ = [
    "IndexHistogram",
    "UtilizationReport",
    "EnergyProfile",
    "SilentInputWarning",
    "entropy_bits",
    "single_utilization",
    "joint_utilization",
    "utilization_report",
    "normalize_loudness",
    "energy_profile",
    "write_profile_csv",
]


class SilentInputWarning(UserWarning):
    """Raised (as a warning) when asked to normalize an all-zero signal."""


@dataclass(frozen=True, eq=False)
class IndexHistogram:
    counts: np.ndarray
    total: int

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim != 1 or np.any(counts < 0):
            raise ValueError("counts must be a 1-D non-negative vector")
        if int(counts.sum()) != self.total:
            raise ValueError(f"counts sum to {counts.sum()}, total is {self.total}")
        object.__setattr__(self, "counts", counts)

    @classmethod
    def from_indices(cls, indices, k: int) -> "IndexHistogram":
        idx = np.asarray(indices, dtype=np.int64).ravel()
        if idx.size and (idx.min() < 0 or idx.max() >= k):
            raise ValueError(f"index out of range for K={k}")
        return cls(np.bincount(idx, minlength=k), int(idx.size))

    @property
    def k(self) -> int:
        return self.counts.shape[0]


def entropy_bits(counts) -> float:
    """Shannon entropy in bits of the empirical distribution ``counts / sum``."""
    c = np.asarray(counts, dtype=np.float64)
    c = c[c > 0]
    p = c / c.sum()
    return float(-np.sum(p * np.log2(p)))


def single_utilization(h: IndexHistogram) -> float:
    """``H(c) / log2(K)``."""
    if h.k < 2:
        raise ValueError("utilization needs K >= 2")
    if h.total <= 0:
        raise ValueError("histogram is empty")
    return entropy_bits(h.counts) / np.log2(h.k)


def _joint_entropy(first: np.ndarray, second: np.ndarray, k_second: int) -> float:
    # sparse: only observed pairs are counted, never a K x K table
    keys = first * np.int64(k_second) + second
    _, counts = np.unique(keys, return_counts=True)
    return entropy_bits(counts)


def joint_utilization(pairs, k: Union[int, Sequence[int]]) -> float:
    """``H(c_i, c_{i+1}) / (log2 K_i + log2 K_{i+1})``.

    Args:
        pairs: ``(N, 2)`` array of index pairs.
        k: Codebook size, or a ``(K_i, K_{i+1})`` pair when they differ. With
            one size the denominator is the usual ``2 log2 K``.
    """
    p = np.asarray(pairs, dtype=np.int64)
    if p.ndim != 2 or p.shape[1] != 2 or p.shape[0] == 0:
        raise ValueError("pairs must be a non-empty (N, 2) array")
    k1, k2 = (k, k) if np.isscalar(k) else tuple(k)
    if min(k1, k2) < 2:
        raise ValueError("utilization needs K >= 2")
    if p.min() < 0 or p[:, 0].max() >= k1 or p[:, 1].max() >= k2:
        raise ValueError("pair index out of codebook range")
    return _joint_entropy(p[:, 0], p[:, 1], k2) / (np.log2(k1) + np.log2(k2))


@dataclass(frozen=True)
class UtilizationReport:
    per_layer: List[float]
    pairwise: List[float]
    k: List[int]
    frames: int

    def lines(self) -> List[str]:
        out = [f"frames: {self.frames}", f"layers: {len(self.per_layer)}"]
        for i, (u, k) in enumerate(zip(self.per_layer, self.k), 1):
            out.append(f"layer{i}.K: {k}")
            out.append(f"layer{i}.utilization: {u:.6f}")
        for i, u in enumerate(self.pairwise, 1):
            out.append(f"pair{i}-{i + 1}.joint_utilization: {u:.6f}")
        return out


def utilization_report(streams, k: Union[int, Sequence[int]]) -> UtilizationReport:
    """Per-layer utilization plus joint utilization of each adjacent pair.

    Args:
        streams: One index sequence per layer, all of equal length.
        k: Shared codebook size or one size per layer.
    """
    layers = [np.asarray(s, dtype=np.int64).ravel() for s in streams]
    if not layers:
        raise ValueError("no layers given")
    if len({len(s) for s in layers}) != 1:
        raise ValueError("all layers must have the same number of frames")
    ks = [int(k)] * len(layers) if np.isscalar(k) else [int(v) for v in k]
    if len(ks) != len(layers):
        raise ValueError(f"{len(ks)} codebook sizes for {len(layers)} layers")
    per_layer = [single_utilization(IndexHistogram.from_indices(s, kk)) for s, kk in zip(layers, ks)]
    pairwise = [
        joint_utilization(np.stack([layers[i], layers[i + 1]], axis=1), (ks[i], ks[i + 1]))
        for i in range(len(layers) - 1)
    ]
    return UtilizationReport(per_layer, pairwise, ks, len(layers[0]))


def normalize_loudness(x: AudioBuffer, target_db: float = -23.0) -> AudioBuffer:
    """Scale ``x`` so that ``20*log10(rms)`` equals ``target_db``.

    Plain RMS in dBFS, not gated BS.1770 loudness. Silent input is returned
    unchanged and a :class:`SilentInputWarning` is emitted.
    """
    rms = float(np.sqrt(np.mean(x.samples ** 2))) if len(x) else 0.0
    if rms == 0.0:
        warnings.warn("silent input left unnormalized", SilentInputWarning, stacklevel=2)
        return x
    gain = 10.0 ** (target_db / 20.0) / rms
    return AudioBuffer(x.samples * gain, x.sample_rate)


@dataclass(frozen=True, eq=False)
class EnergyProfile:
    per_bin: np.ndarray
    n_fft: int
    hop: int
    total_frames: int
    sample_rate: int

    @property
    def frequencies(self) -> np.ndarray:
        return np.arange(self.per_bin.shape[0]) * self.sample_rate / self.n_fft


def energy_profile(files: Sequence[AudioBuffer], n_fft: int = 2048, hop: int = 512,
                   normalize: bool = True, target_db: float = -23.0) -> EnergyProfile:
    """Frame-weighted mean power spectrum over a collection of clips.

    Every clip is loudness-normalized first (unless ``normalize`` is off),
    then ``|X(f, t)|^2`` is summed over all frames of all clips and divided
    by the total frame count, so longer clips weigh more.
    """
    if not files:
        raise ValueError("no audio given")
    rates = {f.sample_rate for f in files}
    if len(rates) != 1:
        raise ValueError(f"clips have mixed sample rates {sorted(rates)}")
    cfg = StftConfig(n_fft, hop)
    acc = np.zeros(cfg.n_bins)
    frames = 0
    for clip in files:
        if normalize:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", SilentInputWarning)
                clip = normalize_loudness(clip, target_db)
        spec = stft(clip, cfg).frames
        acc += np.sum(np.abs(spec) ** 2, axis=0)
        frames += spec.shape[0]
    return EnergyProfile(acc / frames, n_fft, hop, frames, rates.pop())


def write_profile_csv(profile: EnergyProfile, path) -> None:
    """CSV with columns ``bin, frequency_hz, energy``."""
    with atomic_output(path) as tmp:
        with open(tmp, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["bin", "frequency_hz", "energy"])
            for i, (f, e) in enumerate(zip(profile.frequencies, profile.per_bin)):
                writer.writerow([i, f"{f:.6f}", repr(float(e))])
