import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bandcodec.audio_io import AudioBuffer
from bandcodec.bandsplit import BandConfig, BandSet, band_energies, make_masks, merge_bands, preset_config, split_bands
from bandcodec.dsp import StftConfig, default_stft_config, istft, stft

from conftest import SR, noise, tone

PRESET_NAMES = ["bands5", "bands3", "bands2"]


class TestPresets:
    def test_bands5(self):
        bc = preset_config("bands5")
        assert bc.boundaries == (0, 500, 2000, 4000, 8000, 12000)
        assert bc.n_bands == 5

    def test_bands3(self):
        assert preset_config("bands3").boundaries == (0, 2000, 4000, 12000)

    def test_bands2(self):
        assert preset_config("bands2").boundaries == (0, 2000, 12000)

    def test_unknown(self):
        with pytest.raises(ValueError):
            preset_config("bands7")

    @pytest.mark.parametrize("edges", [(100, 2000), (0,), (0, 2000, 2000), (0, 3000, 2000)])
    def test_invalid_config(self, edges):
        with pytest.raises(ValueError):
            BandConfig(edges)


class TestMasks:
    def test_tiny_fft_by_hand(self):
        cfg = StftConfig(8, 2)
        masks = make_masks(preset_config("bands2"), cfg, 24000)
        assert masks[0].values.tolist() == [1, 0, 0, 0, 0]
        assert masks[1].values.tolist() == [0, 1, 1, 1, 1]
        assert [m.band_index for m in masks] == [1, 2]

    def test_first_band_bins_bands5(self):
        masks = make_masks(preset_config("bands5"), default_stft_config(), 24000)
        assert np.flatnonzero(masks[0].values).tolist() == list(range(22))

    def test_boundary_bin_goes_up(self):
        # bin 2 of N=8 at 8 kHz sits exactly on 2000 Hz
        masks = make_masks(BandConfig((0, 2000, 4000)), StftConfig(8, 2), 8000)
        assert masks[0].values.tolist() == [1, 1, 0, 0, 0]
        assert masks[1].values.tolist() == [0, 0, 1, 1, 1]

    @pytest.mark.parametrize("name", PRESET_NAMES)
    @pytest.mark.parametrize("n_fft", [8, 64, 1024, 2048])
    def test_partition_of_unity(self, name, n_fft):
        masks = make_masks(preset_config(name), StftConfig(n_fft, n_fft // 4), 24000)
        assert np.array_equal(np.sum([m.values for m in masks], axis=0), np.ones(n_fft // 2 + 1))

    def test_above_nyquist_rejected(self):
        with pytest.raises(ValueError):
            make_masks(preset_config("bands3"), default_stft_config(), 16000)

    def test_lower_top_edge_leaves_bins_unassigned(self):
        masks = make_masks(preset_config("bands2"), StftConfig(8, 2), 48000)
        total = np.sum([m.values for m in masks], axis=0)
        # bins at 0, 6, 12, 18, 24 kHz; only the first two are below 12 kHz
        assert total.tolist() == [1, 1, 0, 0, 0]


def energy(x):
    return float(np.sum(x.samples ** 2))


class TestSplit:
    def test_sine_lands_in_first_band(self):
        x = tone(1000)
        bands = split_bands(x, preset_config("bands3"))
        total = energy(x)
        assert energy(bands[0]) / total >= 0.999
        assert energy(bands[1]) / total <= 1e-3
        assert energy(bands[2]) / total <= 1e-3

    def test_silence(self):
        bands = split_bands(AudioBuffer(np.zeros(SR), SR), preset_config("bands5"))
        assert len(bands) == 5
        assert all(np.all(b.samples == 0) for b in bands)

    def test_white_noise_share(self, rng):
        x = noise(rng)
        bands = split_bands(x, preset_config("bands2"))
        share = energy(bands[0]) / energy(x)
        assert share == pytest.approx(2000 / 12000, rel=0.2)

    @pytest.mark.parametrize("name", PRESET_NAMES)
    def test_energy_additivity(self, rng, name):
        x = noise(rng)
        cfg = default_stft_config()
        per_band = band_energies(x, preset_config(name), cfg)
        whole = band_energies(x, BandConfig((0, 12000)), cfg)
        assert per_band.sum() == pytest.approx(whole[0], rel=1e-9)
        # and the whole-spectrum figure is the window-weighted signal energy
        padded = np.pad(x.samples, 512, mode="reflect")
        weight = np.zeros(len(padded))
        n_frames = (len(padded) - 1024) // 256 + 1
        for m in range(n_frames):
            weight[m * 256:m * 256 + 1024] += cfg.window ** 2
        assert whole[0] == pytest.approx(np.sum(padded ** 2 * weight), rel=1e-9)

    def test_time_domain_energy_nearly_additive(self, rng):
        x = noise(rng)
        bands = split_bands(x, preset_config("bands5"))
        assert sum(energy(b) for b in bands) == pytest.approx(energy(x), rel=1e-2)

    def test_lengths_and_rates(self, rng):
        x = noise(rng, 7777)
        bands = split_bands(x, preset_config("bands5"))
        assert all(len(b) == 7777 and b.sample_rate == SR for b in bands)

    def test_linear(self, rng):
        a, b = noise(rng, 5000), noise(rng, 5000)
        bc = preset_config("bands3")
        mixed = split_bands(AudioBuffer(0.3 * a.samples + 2.0 * b.samples, SR), bc)
        for m, ba, bb in zip(mixed, split_bands(a, bc), split_bands(b, bc)):
            np.testing.assert_allclose(m.samples, 0.3 * ba.samples + 2.0 * bb.samples, atol=1e-12)


class TestMerge:
    @pytest.mark.parametrize("name", PRESET_NAMES)
    def test_perfect_reconstruction(self, rng, name):
        x = noise(rng)
        y = merge_bands(split_bands(x, preset_config(name)))
        assert np.max(np.abs(y.samples - x.samples)) <= 1e-6

    def test_single_band_is_stft_round_trip(self, rng):
        x = noise(rng, 5000)
        bands = split_bands(x, BandConfig((0, 12000)))
        np.testing.assert_array_equal(bands[0].samples, istft(stft(x, default_stft_config())).samples)
        assert np.max(np.abs(merge_bands(bands).samples - x.samples)) <= 1e-10

    def test_copies(self, rng):
        x = noise(rng, 100)
        merged = merge_bands(BandSet([AudioBuffer(x.samples / 4, SR)] * 4))
        np.testing.assert_allclose(merged.samples, x.samples, atol=1e-15)

    def test_mismatched_lengths(self):
        with pytest.raises(ValueError):
            merge_bands([AudioBuffer(np.zeros(3), SR), AudioBuffer(np.zeros(4), SR)])

    def test_mismatched_rates(self):
        with pytest.raises(ValueError):
            merge_bands([AudioBuffer(np.zeros(3), SR), AudioBuffer(np.zeros(3), 16000)])

    def test_empty(self):
        with pytest.raises(ValueError):
            merge_bands([])

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1), st.sampled_from(PRESET_NAMES), st.sampled_from([(1024, 256), (512, 128), (256, 64), (1024, 512)]),
           st.floats(1e-3, 1e3))
    def test_reconstruction_property(self, seed, name, nh, scale):
        n, hop = nh
        x = AudioBuffer(scale * np.random.default_rng(seed).standard_normal(4000), SR)
        y = merge_bands(split_bands(x, preset_config(name), StftConfig(n, hop)))
        assert np.max(np.abs(y.samples - x.samples)) <= 1e-6 * max(1.0, scale)
