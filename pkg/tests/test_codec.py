from fractions import Fraction

import numpy as np
import pytest

from bandcodec.audio_io import AudioBuffer
from bandcodec.bandsplit import preset_config
from bandcodec.codec import (
    BandCodecModel,
    CodecConfig,
    bitrate,
    decode,
    encode,
    format_bitrate,
    gradient_check,
    init_model,
    load_model,
    model_from_bytes,
    model_to_bytes,
    save_model,
    train,
)
from bandcodec.errors import CorruptDataError, FormatError, TrainingError
from bandcodec.quantizer import effective_entries, nearest_code
from bandcodec.tokens import TokenStream

from conftest import SR, noise


def sinusoid_dataset(seed=0, n=4, seconds=1.0):
    r = np.random.default_rng(seed)
    t = np.arange(int(seconds * SR)) / SR
    return [AudioBuffer(r.uniform(0.3, 0.8) * np.sin(2 * np.pi * r.uniform(100, 6000) * t + r.uniform(0, 2 * np.pi)), SR)
            for _ in range(n)]


def snr_db(ref, est):
    return 10 * np.log10(np.sum(ref ** 2) / np.sum((ref - est) ** 2))


def small_cfg(**kw):
    base = dict(band_config=preset_config("bands2"), per_band_bits=(4, 4), latent_dim=8, epochs=3, seed=0)
    base.update(kw)
    return CodecConfig(**base)


@pytest.fixture(scope="module")
def trained():
    data = sinusoid_dataset()
    cfg = CodecConfig(band_config=preset_config("bands2"), per_band_bits=(6, 6), latent_dim=32, epochs=200, seed=0)
    model, history = train(data, cfg)
    return data, model, history


class TestConfig:
    def test_defaults(self):
        cfg = CodecConfig()
        assert cfg.frame_len == 320 and cfg.latent_dim == 64
        assert cfg.per_band_bits == (17, 17, 17)
        assert cfg.token_rate == 75
        assert cfg.commit_lambda == 0.25

    @pytest.mark.parametrize("bits", [(0, 4), (18, 4), (4,)])
    def test_bad_bits(self, bits):
        with pytest.raises(ValueError):
            CodecConfig(preset_config("bands2"), bits)


class TestBitrate:
    def test_two_band(self):
        assert bitrate(CodecConfig(preset_config("bands2"), (17, 17))) == 2550

    def test_three_band(self):
        cfg = CodecConfig(preset_config("bands3"), (17, 17, 17))
        assert bitrate(cfg) == 3825
        assert format_bitrate(bitrate(cfg)) == "3825 bps (3.83 kbps)"

    def test_five_band(self):
        assert bitrate(CodecConfig(preset_config("bands5"), (10,) * 5)) == 3750

    def test_fractional_rate(self):
        cfg = CodecConfig(preset_config("bands2"), (1, 1), frame_len=7)
        assert bitrate(cfg) == Fraction(2 * 24000, 7)


class TestEncode:
    def test_tokens_per_second(self):
        model = init_model(CodecConfig(preset_config("bands3"), (8, 8, 8), latent_dim=16))
        t = encode(noise(np.random.default_rng(0)), model)
        assert t.indices.shape == (3, 75)
        assert t.bits_per_band == (8, 8, 8)
        assert t.original_length == SR

    @pytest.mark.parametrize("n", [640, 641, 959, 960, 10000])
    def test_frame_count(self, n):
        model = init_model(small_cfg())
        x = AudioBuffer(np.random.default_rng(n).standard_normal(n), SR)
        assert encode(x, model).frame_count == -(-n // 320)

    def test_shorter_than_padding(self):
        with pytest.raises(ValueError, match="too short"):
            encode(AudioBuffer(np.ones(300), SR), init_model(small_cfg()))

    def test_silence_is_constant(self):
        model = init_model(small_cfg())
        t = encode(AudioBuffer(np.zeros(SR), SR), model)
        for b, p in enumerate(model.bands):
            expected = nearest_code(np.zeros(8), effective_entries(p.codebook))
            assert set(t.indices[b].tolist()) == {expected}

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            encode(AudioBuffer(np.zeros(0), SR), init_model(small_cfg()))

    def test_rate_mismatch(self):
        with pytest.raises(ValueError):
            encode(AudioBuffer(np.zeros(2000), 16000), init_model(small_cfg()))


class TestDecode:
    def test_length_preserved(self, rng):
        model = init_model(small_cfg())
        x = noise(rng, 5555)
        assert len(decode(encode(x, model), model)) == 5555

    def test_zero_decoder_is_silent(self, rng):
        model = init_model(small_cfg())
        for p in model.bands:
            p.decoder[:] = 0
        assert np.all(decode(encode(noise(rng), model), model).samples == 0)

    def test_out_of_range_index(self):
        model = init_model(small_cfg())
        t = TokenStream((4, 4), SR, 320, [[0], [16]])
        with pytest.raises(CorruptDataError):
            decode(t, model)

    def test_band_count_mismatch(self):
        model = init_model(small_cfg())
        with pytest.raises(CorruptDataError):
            decode(TokenStream((4,), SR, 320, [[0]]), model)

    def test_sum_of_bands(self, rng):
        model = init_model(small_cfg())
        t = encode(noise(rng, 3200), model)
        parts = []
        for b, p in enumerate(model.bands):
            parts.append((effective_entries(p.codebook)[t.indices[b]] @ p.decoder).ravel())
        np.testing.assert_allclose(decode(t, model).samples, np.sum(parts, axis=0)[:3200], atol=1e-12)


class TestTrain:
    def test_zero_epochs(self):
        model, history = train(sinusoid_dataset(n=1), small_cfg(epochs=0))
        assert len(history) == 0
        assert isinstance(model, BandCodecModel)

    def test_empty_dataset(self):
        with pytest.raises(ValueError):
            train([], small_cfg())

    def test_loss_decreases(self):
        _, history = train(sinusoid_dataset(), small_cfg(per_band_bits=(6, 6), latent_dim=32, epochs=50))
        assert history.total[49] < history.total[0]
        assert len(history.reconstruction) == len(history.commitment) == len(history.usage) == 50

    def test_reaches_snr(self, trained):
        data, model, history = trained
        ref = np.concatenate([x.samples for x in data])
        est = np.concatenate([decode(encode(x, model), model).samples for x in data])
        assert snr_db(ref, est) >= 10.0
        assert history.total[-1] <= 0.5 * history.total[0]

    def test_token_idempotence_after_training(self, trained):
        data, model, _ = trained
        for x in data:
            t = encode(x, model)
            assert np.array_equal(encode(decode(t, model), model).indices, t.indices)

    def test_deterministic(self):
        cfg = small_cfg(epochs=5)
        data = sinusoid_dataset(n=2)
        (m1, h1), (m2, h2) = train(data, cfg), train(data, cfg)
        assert h1.total == h2.total
        assert model_to_bytes(m1) == model_to_bytes(m2)

    def test_no_commitment_keeps_codebook(self):
        data = sinusoid_dataset(n=2)
        cfg = small_cfg(epochs=10, commit_weight=0.0, commit_lambda=0.0)
        model, _ = train(data, cfg)
        initial, _ = train(data, small_cfg(epochs=0, commit_weight=0.0, commit_lambda=0.0))
        for a, b in zip(model.bands, initial.bands):
            np.testing.assert_array_equal(a.codebook.base.entries, b.codebook.base.entries)
            np.testing.assert_array_equal(a.codebook.transform, b.codebook.transform)
            assert not np.array_equal(a.decoder, b.decoder)

    def test_freeze_base(self):
        data = sinusoid_dataset(n=2)
        model, _ = train(data, small_cfg(epochs=10, freeze_base=True))
        initial, _ = train(data, small_cfg(epochs=0, freeze_base=True))
        for a, b in zip(model.bands, initial.bands):
            np.testing.assert_array_equal(a.codebook.base.entries, b.codebook.base.entries)
            assert not np.array_equal(a.codebook.transform, b.codebook.transform)

    def test_plain_vq_keeps_identity(self):
        model, _ = train(sinusoid_dataset(n=2), small_cfg(epochs=5, simvq=False))
        for p in model.bands:
            np.testing.assert_array_equal(p.codebook.transform, np.eye(8))

    def test_divergence_names_epoch(self):
        with pytest.raises(TrainingError, match="epoch"):
            train(sinusoid_dataset(n=2), small_cfg(epochs=100, learn_rate=5.0))

    def test_codebook_initialised_on_latents(self):
        data = sinusoid_dataset(n=4)
        cfg = small_cfg(epochs=0, per_band_bits=(2, 2))
        model, _ = train(data, cfg)
        assert all(p.codebook.size == 4 for p in model.bands)


class TestGradientCheck:
    def test_reconstruction_only(self):
        model, _ = train(sinusoid_dataset(n=1), small_cfg(epochs=2, commit_weight=0.0))
        rep = gradient_check(model, sinusoid_dataset(seed=1, n=1)[0], eps=1e-5)
        assert rep.max_rel_err < 1e-6
        assert rep.checked > 0

    def test_full_loss(self):
        model, _ = train(sinusoid_dataset(n=1), small_cfg(epochs=2))
        rep = gradient_check(model, sinusoid_dataset(seed=1, n=1)[0], eps=1e-5)
        assert rep.max_rel_err < 1e-4
        assert set(rep.per_block) == {f"band{b}.{k}" for b in (1, 2) for k in ("encoder", "decoder", "codebook", "transform")}

    def test_eps_stability(self):
        model, _ = train(sinusoid_dataset(n=1), small_cfg(epochs=2))
        x = sinusoid_dataset(seed=1, n=1)[0]
        a = gradient_check(model, x, eps=1e-5).passed()
        b = gradient_check(model, x, eps=1e-6).passed()
        assert a == b

    def test_detects_wrong_gradient(self, monkeypatch):
        import bandcodec.codec as codec_mod

        model, _ = train(sinusoid_dataset(n=1), small_cfg(epochs=2))
        real = codec_mod._forward_backward

        def broken(*args, **kwargs):
            rec, commit, idx, grads = real(*args, **kwargs)
            grads["decoder"] = grads["decoder"] * 1.01
            return rec, commit, idx, grads

        monkeypatch.setattr(codec_mod, "_forward_backward", broken)
        assert gradient_check(model, sinusoid_dataset(seed=1, n=1)[0]).max_rel_err > 1e-3

    def test_eps_range(self):
        with pytest.raises(ValueError):
            gradient_check(init_model(small_cfg()), sinusoid_dataset(n=1)[0], eps=1e-2)


class TestModelFile:
    def test_round_trip(self, tmp_path):
        model, _ = train(sinusoid_dataset(n=1), small_cfg(epochs=2))
        save_model(model, tmp_path / "m.bscm")
        back = load_model(tmp_path / "m.bscm")
        assert back.config == model.config
        assert model_to_bytes(back) == model_to_bytes(model)
        x = sinusoid_dataset(seed=3, n=1)[0]
        assert np.array_equal(encode(x, back).indices, encode(x, model).indices)

    def test_magic(self):
        model, _ = train(sinusoid_dataset(n=1), small_cfg(epochs=0))
        data = model_to_bytes(model)
        assert data[:4] == b"BSCM"
        with pytest.raises(FormatError):
            model_from_bytes(b"XXXX" + data[4:])

    def test_truncated(self):
        model, _ = train(sinusoid_dataset(n=1), small_cfg(epochs=0))
        with pytest.raises(CorruptDataError):
            model_from_bytes(model_to_bytes(model)[:-3])

    def test_vq_round_trip(self):
        model, _ = train(sinusoid_dataset(n=1), small_cfg(epochs=1, simvq=False))
        back = model_from_bytes(model_to_bytes(model))
        assert not back.config.simvq
        assert model_to_bytes(back) == model_to_bytes(model)
