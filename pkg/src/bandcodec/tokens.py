"""Bit-packed token streams (``.bstk``).

Layout, all header integers little-endian::

    "BSTK" | u16 version | u8 B | u8 bits[B] | u32 frames | u32 sample_rate
    | u64 original_length | band 0 payload | ... | band B-1 payload

Each band payload packs its ``frames`` indices MSB-first at ``bits[b]``
bits apiece and is zero-padded to a whole byte.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from ._io import write_bytes_atomic
from .errors import CorruptDataError, FormatError, SerializationError

__all__ = ["TokenStream", "serialize", "deserialize", "save_tokens", "load_tokens", "payload_bits"]

MAGIC = b"BSTK"
VERSION = 1
_FIXED = struct.Struct("<4sHB")
_TAIL = struct.Struct("<IIQ")


@dataclass(frozen=True, eq=False)
class TokenStream:
    """Per-band code indices at a fixed frame rate."""

    bits_per_band: tuple
    sample_rate: int
    original_length: int
    indices: np.ndarray

    def __post_init__(self):
        bits = tuple(int(b) for b in self.bits_per_band)
        idx = np.asarray(self.indices, dtype=np.int64)
        if idx.ndim != 2:
            raise ValueError(f"indices must be a B x T matrix, got shape {idx.shape}")
        if len(bits) != idx.shape[0]:
            raise ValueError(f"{len(bits)} bit widths for {idx.shape[0]} bands")
        if any(not 1 <= b <= 32 for b in bits):
            raise ValueError(f"bit widths must be in 1..32, got {bits}")
        object.__setattr__(self, "bits_per_band", bits)
        object.__setattr__(self, "indices", idx)

    @property
    def band_count(self) -> int:
        return len(self.bits_per_band)

    @property
    def frame_count(self) -> int:
        return self.indices.shape[1]

    def __eq__(self, other):
        if not isinstance(other, TokenStream):
            return NotImplemented
        return (
            self.bits_per_band == other.bits_per_band
            and self.sample_rate == other.sample_rate
            and self.original_length == other.original_length
            and np.array_equal(self.indices, other.indices)
        )


def _band_bytes(frames: int, bits: int) -> int:
    return (frames * bits + 7) // 8


def payload_bits(t: TokenStream) -> int:
    """Payload size in bits including per-band byte padding."""
    return 8 * sum(_band_bytes(t.frame_count, b) for b in t.bits_per_band)


def serialize(t: TokenStream) -> bytes:
    """Encode a token stream as ``.bstk`` bytes.

    Raises:
        SerializationError: an index is negative or does not fit its band's
            bit width, or a header field overflows.
    """
    if t.band_count > 255:
        raise SerializationError(f"too many bands ({t.band_count})")
    if t.frame_count >= 2 ** 32 or t.sample_rate >= 2 ** 32 or not 0 <= t.original_length < 2 ** 64:
        raise SerializationError("header field out of range")
    out = [_FIXED.pack(MAGIC, VERSION, t.band_count), bytes(t.bits_per_band),
           _TAIL.pack(t.frame_count, t.sample_rate, t.original_length)]
    for b, bits in enumerate(t.bits_per_band):
        row = t.indices[b]
        if row.size and (row.min() < 0 or row.max() >= 2 ** bits):
            raise SerializationError(f"band {b}: index out of range for {bits} bits")
        shifts = np.arange(bits - 1, -1, -1, dtype=np.uint64)
        bitplane = (row.astype(np.uint64)[:, None] >> shifts) & np.uint64(1)
        out.append(np.packbits(bitplane.astype(np.uint8).ravel()).tobytes())
    return b"".join(out)


def deserialize(data: bytes) -> TokenStream:
    """Inverse of :func:`serialize`.

    Raises:
        FormatError: bad magic or version.
        CorruptDataError: truncated header or payload, or trailing bytes.
    """
    if len(data) < _FIXED.size:
        raise CorruptDataError("token header truncated")
    magic, version, n_bands = _FIXED.unpack_from(data)
    if magic != MAGIC:
        raise FormatError("bad token-stream magic")
    if version != VERSION:
        raise FormatError(f"unsupported token-stream version {version}")
    pos = _FIXED.size
    if len(data) < pos + n_bands + _TAIL.size:
        raise CorruptDataError("token header truncated")
    bits = tuple(data[pos:pos + n_bands])
    pos += n_bands
    frames, rate, length = _TAIL.unpack_from(data, pos)
    pos += _TAIL.size
    if any(not 1 <= b <= 32 for b in bits):
        raise CorruptDataError(f"invalid bit widths {bits}")

    indices = np.zeros((n_bands, frames), dtype=np.int64)
    for b, width in enumerate(bits):
        size = _band_bytes(frames, width)
        chunk = data[pos:pos + size]
        if len(chunk) < size:
            raise CorruptDataError(f"band {b} payload truncated ({len(chunk)} of {size} bytes)")
        pos += size
        flat = np.unpackbits(np.frombuffer(chunk, dtype=np.uint8))[: frames * width]
        weights = np.left_shift(np.uint64(1), np.arange(width - 1, -1, -1, dtype=np.uint64))
        indices[b] = (flat.reshape(frames, width).astype(np.uint64) @ weights).astype(np.int64)
    if pos != len(data):
        raise CorruptDataError(f"{len(data) - pos} trailing bytes after payload")
    try:
        return TokenStream(bits, rate, length, indices)
    except ValueError as exc:
        raise CorruptDataError(str(exc)) from exc


def save_tokens(t: TokenStream, path) -> None:
    write_bytes_atomic(path, serialize(t))


def load_tokens(path) -> TokenStream:
    with open(path, "rb") as fh:
        return deserialize(fh.read())
