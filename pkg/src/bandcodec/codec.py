"""Toy per-band codec: linear frame encoder, SimVQ, linear frame decoder.

Every band owns its own encoder matrix ``E`` (frame_len x D), decoder
matrix ``G`` (D x frame_len) and codebook; nothing is shared across bands.
Frames are non-overlapping, so 320-sample frames at 24 kHz give 75 tokens
per second per band.

Training is full-batch gradient descent on, per band,

    mean_m |x_hat_m - x_m|^2 + beta * mean_m (|sg[z_m] - q_m W|^2 + lam |z_m - sg[q_m W]|^2)

with the straight-through estimator routing the reconstruction gradient at
``z_q`` straight into ``z``. The first commitment term reaches only the
codebook and ``W``; the second reaches only the encoder.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction
from typing import List, Optional, Sequence

import numpy as np

from ._io import write_bytes_atomic
from ._parallel import ordered_map
from .audio_io import AudioBuffer
from .bandsplit import BandConfig, preset_config, split_bands
from .errors import CorruptDataError, FormatError, TrainingError
from .quantizer import (
    DEFAULT_LAMBDA,
    Codebook,
    SimVQCodebook,
    codebook_from_bytes,
    codebook_to_bytes,
    effective_entries,
    kmeans_init,
    nearest_codes,
)
from .tokens import TokenStream

__all__ = [
    "CodecConfig",
    "BandParams",
    "BandCodecModel",
    "TrainLog",
    "GradCheckReport",
    "init_model",
    "encode",
    "decode",
    "train",
    "gradient_check",
    "bitrate",
    "format_bitrate",
    "model_to_bytes",
    "model_from_bytes",
    "save_model",
    "load_model",
]

log = logging.getLogger(__name__)

MODEL_MAGIC = b"BSCM"
MODEL_VERSION = 1
MAX_BITS = 17


@dataclass(frozen=True)
class CodecConfig:
    """Hyperparameters of the toy codec.

    ``per_band_bits`` sets the codebook size ``K = 2**bits`` of each band.
    ``commit_weight`` scales the whole commitment loss and ``commit_lambda``
    balances its two terms.
    """

    band_config: BandConfig = field(default_factory=lambda: preset_config("bands3"))
    per_band_bits: tuple = None
    frame_len: int = 320
    latent_dim: int = 64
    sample_rate: int = 24000
    seed: int = 0
    learn_rate: float = 0.02
    epochs: int = 100
    commit_weight: float = 1.0
    commit_lambda: float = DEFAULT_LAMBDA
    simvq: bool = True
    freeze_base: bool = False
    kmeans_iters: int = 10

    def __post_init__(self):
        bits = self.per_band_bits
        if bits is None:
            bits = (MAX_BITS,) * self.band_config.n_bands
        bits = tuple(int(b) for b in bits)
        if len(bits) != self.band_config.n_bands:
            raise ValueError(f"{len(bits)} bit widths for {self.band_config.n_bands} bands")
        if any(not 1 <= b <= MAX_BITS for b in bits):
            raise ValueError(f"per-band bits must be in 1..{MAX_BITS}, got {bits}")
        object.__setattr__(self, "per_band_bits", bits)
        if self.frame_len < 1 or self.latent_dim < 1 or self.sample_rate < 1:
            raise ValueError("frame_len, latent_dim and sample_rate must be positive")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.commit_weight < 0 or self.commit_lambda < 0:
            raise ValueError("commitment weights must be >= 0")
        if self.band_config.boundaries[-1] > self.sample_rate / 2:
            raise ValueError("band edges exceed the Nyquist frequency of sample_rate")

    @property
    def n_bands(self) -> int:
        return self.band_config.n_bands

    @property
    def codebook_sizes(self) -> tuple:
        return tuple(2 ** b for b in self.per_band_bits)

    @property
    def token_rate(self) -> Fraction:
        return Fraction(self.sample_rate, self.frame_len)


@dataclass(eq=False)
class BandParams:
    encoder: np.ndarray
    decoder: np.ndarray
    codebook: SimVQCodebook


@dataclass(eq=False)
class BandCodecModel:
    config: CodecConfig
    bands: List[BandParams]

    def __post_init__(self):
        if len(self.bands) != self.config.n_bands:
            raise ValueError(f"{len(self.bands)} band parameter sets for {self.config.n_bands} bands")


@dataclass
class TrainLog:
    total: List[float] = field(default_factory=list)
    reconstruction: List[float] = field(default_factory=list)
    commitment: List[float] = field(default_factory=list)
    usage: List[tuple] = field(default_factory=list)

    def __len__(self):
        return len(self.total)


def bitrate(cfg: CodecConfig):
    """Token bitrate in bits per second: sum of per-band bits times frame rate.

    Returns an ``int`` when exact (always, for 320-sample frames at 24 kHz),
    otherwise a ``Fraction``.
    """
    bps = sum(cfg.per_band_bits) * cfg.token_rate
    return int(bps) if bps.denominator == 1 else bps


def format_bitrate(bps) -> str:
    kbps = (Decimal(bps.numerator) / Decimal(bps.denominator)) / 1000 if isinstance(bps, Fraction) else Decimal(bps) / 1000
    shown = f"{bps}" if not isinstance(bps, Fraction) else f"{float(bps):.3f}"
    return f"{shown} bps ({kbps.quantize(Decimal('0.01'), rounding=ROUND_HALF_UP)} kbps)"


# ---------------------------------------------------------------------------
# framing


def _frames(samples: np.ndarray, frame_len: int) -> np.ndarray:
    n_frames = -(-len(samples) // frame_len)
    padded = np.zeros(n_frames * frame_len)
    padded[: len(samples)] = samples
    return padded.reshape(n_frames, frame_len)


def _band_frames(x: AudioBuffer, cfg: CodecConfig) -> List[np.ndarray]:
    if x.sample_rate != cfg.sample_rate:
        raise ValueError(f"audio at {x.sample_rate} Hz, model expects {cfg.sample_rate} Hz")
    if len(x) == 0:
        raise ValueError("cannot encode empty audio")
    return [_frames(b.samples, cfg.frame_len) for b in split_bands(x, cfg.band_config)]


def _dataset_frames(dataset: Sequence[AudioBuffer], cfg: CodecConfig) -> List[np.ndarray]:
    per_item = [_band_frames(x, cfg) for x in dataset]
    return [np.concatenate([item[b] for item in per_item]) for b in range(cfg.n_bands)]


# ---------------------------------------------------------------------------
# model construction


def _init_codebook(latents: np.ndarray, k: int, cfg: CodecConfig, rng: np.random.Generator, seed: int) -> SimVQCodebook:
    distinct = np.unique(latents, axis=0)
    if len(distinct) >= k:
        centroids = kmeans_init(latents, k, seed, cfg.kmeans_iters).entries
    else:
        # fewer distinct latents than codes: keep them all, jitter copies for the rest
        spread = float(np.std(latents)) or 1.0
        extra = distinct[rng.integers(len(distinct), size=k - len(distinct))]
        extra = extra + 0.01 * spread * rng.standard_normal(extra.shape)
        centroids = np.concatenate([distinct, extra])
    if cfg.simvq:
        w = np.eye(cfg.latent_dim) + 1e-3 * rng.standard_normal((cfg.latent_dim, cfg.latent_dim))
        # choose base entries so the effective entries start at the centroids
        base = np.linalg.solve(w.T, centroids.T).T
        return SimVQCodebook(Codebook(base), w, cfg.commit_lambda)
    return SimVQCodebook.plain(Codebook(centroids), cfg.commit_lambda)


def init_model(cfg: CodecConfig, band_frames: Optional[List[np.ndarray]] = None) -> BandCodecModel:
    """Seeded initial model.

    Encoders are Gaussian with variance ``1/frame_len``; decoders start as the
    scaled transpose of their encoder. With ``band_frames`` the codebooks are
    k-means fits of the initial latents, otherwise Gaussian.
    """
    rng = np.random.default_rng(cfg.seed)
    length, dim = cfg.frame_len, cfg.latent_dim
    bands = []
    for b, k in enumerate(cfg.codebook_sizes):
        enc = rng.standard_normal((length, dim)) / np.sqrt(length)
        dec = enc.T * (length / (length + dim))
        if band_frames is not None:
            cb = _init_codebook(band_frames[b] @ enc, k, cfg, rng, cfg.seed + b)
        else:
            base = Codebook(rng.standard_normal((k, dim)))
            if cfg.simvq:
                cb = SimVQCodebook(base, np.eye(dim) + 1e-3 * rng.standard_normal((dim, dim)), cfg.commit_lambda)
            else:
                cb = SimVQCodebook.plain(base, cfg.commit_lambda)
        bands.append(BandParams(enc, dec, cb))
    return BandCodecModel(cfg, bands)


# ---------------------------------------------------------------------------
# encode / decode


def _check_indices(idx: np.ndarray, k: int, band: int):
    if idx.size and (idx.min() < 0 or idx.max() >= k):
        raise CorruptDataError(f"band {band + 1}: token index out of range for codebook of size {k}")


def encode(x: AudioBuffer, model: BandCodecModel) -> TokenStream:
    """Split, frame, project and quantize ``x``; one index per frame per band."""
    cfg = model.config
    frames = _band_frames(x, cfg)

    def one(b):
        p = model.bands[b]
        return nearest_codes(frames[b] @ p.encoder, effective_entries(p.codebook))

    indices = np.stack(ordered_map(one, range(cfg.n_bands)))
    return TokenStream(cfg.per_band_bits, cfg.sample_rate, len(x), indices)


def decode(t: TokenStream, model: BandCodecModel) -> AudioBuffer:
    """Look up, synthesize and sum every band; trim to the stored length.

    Raises:
        CorruptDataError: band count/rate mismatch or an out-of-range index.
    """
    cfg = model.config
    if t.band_count != cfg.n_bands:
        raise CorruptDataError(f"stream has {t.band_count} bands, model has {cfg.n_bands}")
    if t.sample_rate != cfg.sample_rate:
        raise CorruptDataError(f"stream at {t.sample_rate} Hz, model at {cfg.sample_rate} Hz")
    if t.frame_count * cfg.frame_len < t.original_length:
        raise CorruptDataError("stream too short for its declared length")
    out = np.zeros(t.frame_count * cfg.frame_len)
    for b, p in enumerate(model.bands):
        _check_indices(t.indices[b], p.codebook.size, b)
        out += (effective_entries(p.codebook)[t.indices[b]] @ p.decoder).ravel()
    return AudioBuffer(out[: t.original_length], cfg.sample_rate)


# ---------------------------------------------------------------------------
# loss and gradients


@dataclass
class _BandState:
    enc: np.ndarray
    dec: np.ndarray
    base: np.ndarray
    w: np.ndarray


def _forward_backward(frames, s: _BandState, beta, lam, idx=None):
    """Loss terms and routed gradients for one band.

    ``idx`` pins the code assignment; otherwise it is recomputed.
    """
    m = frames.shape[0]
    z = frames @ s.enc
    eff = s.base @ s.w
    if idx is None:
        idx = nearest_codes(z, eff)
    q = eff[idx]
    resid = q @ s.dec - frames
    diff = z - q
    rec = float(np.sum(resid ** 2)) / m
    gap = float(np.sum(diff ** 2)) / m
    commit = gap + lam * gap

    g_dec = (2.0 / m) * q.T @ resid
    # straight-through: reconstruction gradient at z_q goes to z unchanged
    g_z = (2.0 / m) * resid @ s.dec.T + beta * lam * (2.0 / m) * diff
    g_enc = frames.T @ g_z
    g_q = -beta * (2.0 / m) * diff
    g_w = s.base[idx].T @ g_q
    g_base = np.zeros_like(s.base)
    np.add.at(g_base, idx, g_q @ s.w.T)
    grads = {"encoder": g_enc, "decoder": g_dec, "transform": g_w, "codebook": g_base}
    return rec, commit, idx, grads


def _surrogate_terms(frames, s: _BandState, beta, lam, idx, z0, q0, block):
    """Weighted residuals whose summed squares have the routed gradient for ``block``.

    Stop-gradient arguments are frozen at their values at the base point
    (``z0``, ``q0``); the code assignment is held at ``idx``.
    """
    m = frames.shape[0]
    if block == "encoder":
        z = frames @ s.enc
        zq = z + (q0 - z0)
        return [(1.0 / m, zq @ s.dec - frames), (beta * lam / m, z - q0)]
    if block == "decoder":
        return [(1.0 / m, q0 @ s.dec - frames)]
    q = (s.base @ s.w)[idx]
    return [(beta / m, z0 - q)]


def _surrogate_loss(frames, s: _BandState, beta, lam, idx, z0, q0, block) -> float:
    return sum(w * float(np.sum(r ** 2)) for w, r in _surrogate_terms(frames, s, beta, lam, idx, z0, q0, block))


def _central_difference(plus, minus, h: float) -> float:
    # sum (r+^2 - r-^2) as (r+ - r-)(r+ + r-) elementwise: no cancellation between large totals
    return sum(w * float(np.sum((rp - rm) * (rp + rm))) for (w, rp), (_, rm) in zip(plus, minus)) / (2 * h)


def _state(p: BandParams) -> _BandState:
    return _BandState(p.encoder.copy(), p.decoder.copy(), p.codebook.base.entries.copy(), p.codebook.transform.copy())


def _params(s: _BandState, lam: float) -> BandParams:
    return BandParams(s.enc, s.dec, SimVQCodebook(Codebook(s.base), s.w, lam))


def _to_float32(s: _BandState) -> None:
    for name in ("enc", "dec", "base", "w"):
        setattr(s, name, getattr(s, name).astype(np.float32).astype(np.float64))


def train(dataset: Sequence[AudioBuffer], cfg: CodecConfig, on_epoch=None):
    """Fit a :class:`BandCodecModel` by full-batch gradient descent.

    Codebooks are k-means fits of the latents produced by the initial
    encoders. Parameters are rounded to float32 at the end so a model saved
    to disk and loaded back encodes identically.

    Args:
        dataset: Training clips at ``cfg.sample_rate``.
        cfg: Model and optimisation settings.
        on_epoch: Optional ``callback(epoch, log)`` after each epoch.

    Returns:
        tuple: ``(model, TrainLog)``; with ``epochs == 0`` the initialised
        model and an empty log.

    Raises:
        TrainingError: the loss became non-finite (message names the epoch).
    """
    if not dataset:
        raise ValueError("dataset is empty")
    band_frames = _dataset_frames(dataset, cfg)
    model = init_model(cfg, band_frames)
    states = [_state(p) for p in model.bands]
    beta, lam, lr = cfg.commit_weight, cfg.commit_lambda, cfg.learn_rate
    history = TrainLog()

    def step(b):
        s = states[b]
        rec, commit, idx, g = _forward_backward(band_frames[b], s, beta, lam)
        s.enc -= lr * g["encoder"]
        s.dec -= lr * g["decoder"]
        if cfg.simvq:
            s.w -= lr * g["transform"]
        if not cfg.freeze_base:
            s.base -= lr * g["codebook"]
        return rec, commit, len(np.unique(idx))

    for epoch in range(1, cfg.epochs + 1):
        with np.errstate(over="ignore", invalid="ignore"):
            results = ordered_map(step, range(cfg.n_bands))
        rec = sum(r[0] for r in results)
        commit = sum(r[1] for r in results)
        total = rec + beta * commit
        finite = np.isfinite(total) and all(
            np.all(np.isfinite(getattr(s, n))) for s in states for n in ("enc", "dec", "base", "w"))
        if not finite:
            raise TrainingError(f"training diverged at epoch {epoch} (loss {total})")
        history.total.append(total)
        history.reconstruction.append(rec)
        history.commitment.append(commit)
        history.usage.append(tuple(r[2] for r in results))
        log.debug("epoch %d loss %.6g rec %.6g commit %.6g", epoch, total, rec, commit)
        if on_epoch is not None:
            on_epoch(epoch, history)

    for s in states:
        _to_float32(s)
    return BandCodecModel(cfg, [_params(s, lam) for s in states]), history


def model_loss(model: BandCodecModel, x: AudioBuffer):
    """``(total, reconstruction, commitment)`` of the training objective on ``x``."""
    cfg = model.config
    rec = commit = 0.0
    for frames, p in zip(_band_frames(x, cfg), model.bands):
        r, c, _, _ = _forward_backward(frames, _state(p), cfg.commit_weight, cfg.commit_lambda)
        rec += r
        commit += c
    return rec + cfg.commit_weight * commit, rec, commit


# ---------------------------------------------------------------------------
# gradient check


@dataclass
class GradCheckReport:
    max_rel_err: float
    per_block: dict
    checked: int
    rejected: int

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_err < tol


_BLOCK_ATTR = {"encoder": "enc", "decoder": "dec", "transform": "w", "codebook": "base"}


GRADCHECK_FLOOR = 1e-3


def gradient_check(model: BandCodecModel, x: AudioBuffer, eps: float = 1e-5,
                   max_coords: Optional[int] = 64, seed: int = 0) -> GradCheckReport:
    """Compare routed analytic gradients with central finite differences.

    For each band and parameter block (encoder, decoder, transform,
    codebook) the analytic gradient is checked against
    ``(f(p + eps) - f(p - eps)) / (2 eps)`` of the loss terms that block is
    supposed to receive, with stop-gradient arguments and code assignments
    frozen. A coordinate whose perturbation would change the actual code
    assignment is retried at ``eps / 10`` and skipped if it still flips.

    Relative error per coordinate is ``|a - n| / max(|a|, |n|, floor)``, with
    ``floor`` 1e-3 of the block's largest analytic magnitude. Below that,
    both sides carry rounding error of the same order as the value itself.

    Args:
        max_coords: Coordinates sampled per block (``None`` = all).
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"eps must lie in [1e-7, 1e-3], got {eps}")
    cfg = model.config
    beta, lam = cfg.commit_weight, cfg.commit_lambda
    rng = np.random.default_rng(seed)
    blocks = ["encoder", "decoder", "codebook"] + (["transform"] if cfg.simvq else [])
    per_block, checked, rejected = {}, 0, 0

    for b, (frames, p) in enumerate(zip(_band_frames(x, cfg), model.bands)):
        s = _state(p)
        _, _, idx, grads = _forward_backward(frames, s, beta, lam)
        z0 = frames @ s.enc
        q0 = (s.base @ s.w)[idx]
        for block in blocks:
            if block == "codebook" and cfg.freeze_base:
                continue
            param = getattr(s, _BLOCK_ATTR[block])
            analytic = grads[block]
            flat = np.arange(param.size)
            if max_coords is not None and param.size > max_coords:
                flat = rng.choice(param.size, size=max_coords, replace=False)
            floor = GRADCHECK_FLOOR * max(float(np.max(np.abs(analytic))), 1e-300)
            worst = 0.0
            for i in flat:
                pos = np.unravel_index(i, param.shape)
                numeric = None
                for h in (eps, eps / 10):
                    orig = param[pos]
                    values, stable = [], True
                    for sign in (1.0, -1.0):
                        param[pos] = orig + sign * h
                        if block != "decoder" and not np.array_equal(
                                nearest_codes(frames @ s.enc, s.base @ s.w), idx):
                            stable = False
                        values.append(_surrogate_terms(frames, s, beta, lam, idx, z0, q0, block))
                    param[pos] = orig
                    if stable:
                        numeric = _central_difference(values[0], values[1], h)
                        break
                if numeric is None:
                    rejected += 1
                    continue
                a = analytic[pos]
                err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
                worst = max(worst, err)
                checked += 1
            per_block[f"band{b + 1}.{block}"] = worst
    return GradCheckReport(max(per_block.values(), default=0.0), per_block, checked, rejected)


# ---------------------------------------------------------------------------
# model file


def _pack_config(cfg: CodecConfig) -> bytes:
    bc = cfg.band_config
    name = (bc.name or "").encode("utf-8")
    flags = int(cfg.simvq) | (int(cfg.freeze_base) << 1)
    out = struct.pack("<IIIB", cfg.sample_rate, cfg.frame_len, cfg.latent_dim, bc.n_bands)
    out += struct.pack(f"<{bc.n_bands + 1}d", *bc.boundaries)
    out += bytes(cfg.per_band_bits)
    out += struct.pack("<QdIddBI", cfg.seed, cfg.learn_rate, cfg.epochs, cfg.commit_weight,
                       cfg.commit_lambda, flags, cfg.kmeans_iters)
    out += struct.pack("<B", len(name)) + name
    return out


def model_to_bytes(model: BandCodecModel) -> bytes:
    """``BSCM`` blob: magic, u16 version, config fields, then per band
    float32 ``E`` and ``G`` followed by a length-prefixed codebook blob."""
    cfg = model.config
    parts = [MODEL_MAGIC, struct.pack("<H", MODEL_VERSION), _pack_config(cfg)]
    for p in model.bands:
        parts.append(p.encoder.astype("<f4").tobytes())
        parts.append(p.decoder.astype("<f4").tobytes())
        blob = codebook_to_bytes(p.codebook if cfg.simvq else p.codebook.base)
        parts.append(struct.pack("<I", len(blob)) + blob)
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CorruptDataError("model file truncated")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def matrix(self, rows: int, cols: int) -> np.ndarray:
        return np.frombuffer(self.take(4 * rows * cols), "<f4").reshape(rows, cols).astype(np.float64)


def model_from_bytes(data: bytes) -> BandCodecModel:
    r = _Reader(data)
    if r.take(4) != MODEL_MAGIC:
        raise FormatError("bad model magic")
    (version,) = r.unpack("<H")
    if version != MODEL_VERSION:
        raise FormatError(f"unsupported model version {version}")
    rate, frame_len, dim, n_bands = r.unpack("<IIIB")
    edges = r.unpack(f"<{n_bands + 1}d")
    bits = tuple(r.take(n_bands))
    seed, lr, epochs, beta, lam, flags, km_iters = r.unpack("<QdIddBI")
    (name_len,) = r.unpack("<B")
    name = r.take(name_len).decode("utf-8") or None
    try:
        cfg = CodecConfig(BandConfig(edges, name), bits, frame_len, dim, rate, seed, lr, epochs, beta, lam,
                          bool(flags & 1), bool(flags & 2), km_iters)
    except ValueError as exc:
        raise CorruptDataError(f"invalid model config: {exc}") from exc
    bands = []
    for k in cfg.codebook_sizes:
        enc = r.matrix(frame_len, dim)
        dec = r.matrix(dim, frame_len)
        (blob_len,) = r.unpack("<I")
        cb = codebook_from_bytes(r.take(blob_len), lam)
        if isinstance(cb, Codebook):
            cb = SimVQCodebook.plain(cb, lam)
        if cb.size != k or cb.dim != dim:
            raise CorruptDataError(f"codebook shape {cb.size}x{cb.dim} does not match config")
        bands.append(BandParams(enc, dec, cb))
    if r.pos != len(data):
        raise CorruptDataError("trailing bytes after model")
    return BandCodecModel(cfg, bands)


def save_model(model: BandCodecModel, path) -> None:
    write_bytes_atomic(path, model_to_bytes(model))


def load_model(path) -> BandCodecModel:
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read())

