"""Band decomposition by binary STFT masks, and merge by summation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ._parallel import ordered_map
from .audio_io import AudioBuffer
from .dsp import StftConfig, default_stft_config, istft, stft

__all__ = ["BandConfig", "BandMask", "BandSet", "PRESETS", "preset_config", "make_masks", "split_bands", "merge_bands", "band_energies"]

PRESETS = {
    "bands5": (0, 500, 2000, 4000, 8000, 12000),
    "bands3": (0, 2000, 4000, 12000),
    "bands2": (0, 2000, 12000),
}


@dataclass(frozen=True)
class BandConfig:
    """Ascending band edges ``f_0 = 0 < f_1 < ... < f_B`` in Hz."""

    boundaries: tuple
    name: Optional[str] = None

    def __post_init__(self):
        edges = tuple(float(f) for f in self.boundaries)
        if len(edges) < 2:
            raise ValueError("need at least two boundaries (one band)")
        if edges[0] != 0.0:
            raise ValueError(f"first boundary must be 0 Hz, got {edges[0]}")
        if any(b <= a for a, b in zip(edges, edges[1:])):
            raise ValueError(f"boundaries must be strictly ascending: {edges}")
        object.__setattr__(self, "boundaries", edges)

    @property
    def n_bands(self) -> int:
        return len(self.boundaries) - 1


def preset_config(name: str) -> BandConfig:
    """Return one of the named presets: ``bands5``, ``bands3`` or ``bands2``."""
    try:
        return BandConfig(PRESETS[name], name)
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


@dataclass(frozen=True, eq=False)
class BandMask:
    values: np.ndarray
    band_index: int


def make_masks(bc: BandConfig, cfg: StftConfig, fs: int) -> list:
    """Binary masks over one-sided bins, one per band.

    Bin ``k`` belongs to band ``b`` iff ``f_{b-1} <= k*fs/N < f_b``. When the
    top edge equals Nyquist, the Nyquist bin goes to the last band so the
    masks partition every bin. Bins above a lower top edge belong to no band.
    """
    nyquist = fs / 2
    if bc.boundaries[-1] > nyquist:
        raise ValueError(f"top boundary {bc.boundaries[-1]} Hz exceeds Nyquist {nyquist} Hz")
    n = cfg.fft_size
    # compare k*fs against f*N to keep the arithmetic exact for integer edges
    scaled = np.arange(cfg.n_bins, dtype=np.float64) * fs
    masks = []
    for b in range(bc.n_bands):
        lo, hi = bc.boundaries[b] * n, bc.boundaries[b + 1] * n
        values = (scaled >= lo) & (scaled < hi)
        masks.append(values)
    if bc.boundaries[-1] == nyquist:
        masks[-1][-1] = True
    return [BandMask(m.astype(np.uint8), b + 1) for b, m in enumerate(masks)]


@dataclass(frozen=True, eq=False)
class BandSet:
    """Band-limited waveforms ordered by band index."""

    bands: list

    def __post_init__(self):
        bands = list(self.bands)
        if not bands:
            raise ValueError("a band set needs at least one band")
        if len({len(b) for b in bands}) != 1:
            raise ValueError("all bands must have equal length")
        if len({b.sample_rate for b in bands}) != 1:
            raise ValueError("all bands must share one sample rate")
        object.__setattr__(self, "bands", bands)

    def __len__(self):
        return len(self.bands)

    def __iter__(self):
        return iter(self.bands)

    def __getitem__(self, i):
        return self.bands[i]


def split_bands(x: AudioBuffer, bc: BandConfig, cfg: Optional[StftConfig] = None) -> BandSet:
    """Split ``x`` into ``B`` waveforms, ``istft(stft(x) * M_b)`` each."""
    cfg = cfg or default_stft_config()
    spec = stft(x, cfg)
    masks = make_masks(bc, cfg, x.sample_rate)
    bands = ordered_map(lambda m: istft(spec.with_frames(spec.frames * m.values)), masks)
    return BandSet(bands)


def merge_bands(bs) -> AudioBuffer:
    """Pointwise sum of the band waveforms."""
    bands: Sequence[AudioBuffer] = bs.bands if isinstance(bs, BandSet) else BandSet(list(bs)).bands
    return AudioBuffer(np.sum([b.samples for b in bands], axis=0), bands[0].sample_rate)


def band_energies(x: AudioBuffer, bc: BandConfig, cfg: Optional[StftConfig] = None) -> np.ndarray:
    """Per-band share of the STFT-domain energy (two-sided, per Parseval).

    The masks are disjoint, so these add up to the energy of the whole
    spectrogram. Time-domain energies of the split waveforms do not add up
    exactly: overlap-add leaves small cross terms between neighbouring bands.
    """
    cfg = cfg or default_stft_config()
    power = np.abs(stft(x, cfg).frames) ** 2
    power[:, 1:cfg.n_bins - 1] *= 2
    per_bin = power.sum(axis=0) / cfg.fft_size
    return np.array([float(per_bin @ m.values) for m in make_masks(bc, cfg, x.sample_rate)])
