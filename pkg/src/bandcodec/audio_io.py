"""Mono WAV reading/writing and a utility-grade linear resampler.

Only RIFF/WAVE little-endian files with PCM16 or IEEE float32 payloads are
supported. Stereo input is downmixed to mono by averaging channels.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from ._io import write_bytes_atomic
from .errors import CorruptDataError, FormatError

__all__ = ["AudioBuffer", "read_wav", "write_wav", "wav_bytes", "parse_wav", "resample_linear"]

_PCM = 0x0001
_IEEE_FLOAT = 0x0003
_EXTENSIBLE = 0xFFFE


@dataclass(frozen=True, eq=False)
class AudioBuffer:
    """Mono sample buffer.

    Samples are stored as float64 regardless of the on-disk encoding.
    """

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError(f"samples must be 1-D, got shape {samples.shape}")
        if int(self.sample_rate) != self.sample_rate or self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be a positive integer, got {self.sample_rate}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("samples contain NaN or Inf")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


def parse_wav(data: bytes) -> AudioBuffer:
    """Decode an in-memory WAV file. See :func:`read_wav`."""
    if len(data) < 12:
        raise CorruptDataError("file too short for a RIFF header")
    riff, _, wave = struct.unpack("<4sI4s", data[:12])
    if riff != b"RIFF" or wave != b"WAVE":
        raise FormatError("not a RIFF/WAVE file")

    fmt = None
    payload = None
    pos = 12
    while pos + 8 <= len(data):
        chunk_id, size = struct.unpack("<4sI", data[pos:pos + 8])
        body = data[pos + 8:pos + 8 + size]
        if len(body) < size:
            raise CorruptDataError(f"chunk {chunk_id!r} truncated ({len(body)} of {size} bytes)")
        if chunk_id == b"fmt ":
            if size < 16:
                raise CorruptDataError("fmt chunk too short")
            fmt = struct.unpack("<HHIIHH", body[:16])
            if fmt[0] == _EXTENSIBLE:
                if size < 40:
                    raise CorruptDataError("extensible fmt chunk too short")
                sub = struct.unpack("<H", body[24:26])[0]
                fmt = (sub,) + fmt[1:]
        elif chunk_id == b"data":
            payload = body
        pos += 8 + size + (size & 1)
    if fmt is None:
        raise CorruptDataError("missing fmt chunk")
    if payload is None:
        raise CorruptDataError("missing data chunk")

    tag, channels, rate, _, block_align, bits = fmt
    if channels not in (1, 2):
        raise FormatError(f"unsupported channel count {channels}")
    if tag == _PCM and bits == 16:
        dtype = np.dtype("<i2")
    elif tag == _IEEE_FLOAT and bits == 32:
        dtype = np.dtype("<f4")
    else:
        raise FormatError(f"unsupported encoding (format tag {tag:#06x}, {bits} bits)")
    if block_align != channels * dtype.itemsize:
        raise CorruptDataError(f"block_align {block_align} inconsistent with format")
    if len(payload) % block_align:
        raise CorruptDataError("data chunk is not a whole number of frames")

    frames = np.frombuffer(payload, dtype=dtype).reshape(-1, channels).astype(np.float64)
    if dtype.kind == "i":
        frames /= 32768.0
    samples = frames[:, 0] if channels == 1 else frames.mean(axis=1)
    if not np.all(np.isfinite(samples)):
        raise CorruptDataError("non-finite samples in float data")
    return AudioBuffer(samples, rate)


def read_wav(path) -> AudioBuffer:
    """Read a PCM16 or float32 WAV file as a mono buffer.

    PCM16 values are scaled by 1/32768; two channels are averaged.

    Raises:
        FormatError: not RIFF/WAVE, or an unsupported encoding.
        CorruptDataError: truncated or inconsistent chunks.
    """
    with open(path, "rb") as fh:
        return parse_wav(fh.read())


def wav_bytes(buffer: AudioBuffer, encoding: str = "float32") -> bytes:
    """Encode ``buffer`` as a mono WAV file image."""
    if len(buffer) == 0:
        raise ValueError("cannot write an empty buffer")
    if encoding == "pcm16":
        # round-to-nearest, clamp to [-1, 32767/32768]
        words = np.clip(np.rint(buffer.samples * 32768.0), -32768, 32767).astype("<i2")
        tag, width = _PCM, 2
    elif encoding == "float32":
        words = buffer.samples.astype("<f4")
        tag, width = _IEEE_FLOAT, 4
    else:
        raise ValueError(f"unknown encoding {encoding!r}; expected 'pcm16' or 'float32'")
    payload = words.tobytes()
    fmt = struct.pack("<HHIIHH", tag, 1, buffer.sample_rate, buffer.sample_rate * width, width, width * 8)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", len(payload)) + payload
    if len(payload) & 1:
        body += b"\x00"
    return b"RIFF" + struct.pack("<I", len(body)) + body


def write_wav(buffer: AudioBuffer, path, encoding: str = "float32") -> None:
    """Write ``buffer`` to ``path`` (``pcm16`` or ``float32``).

    The file is written to a temporary sibling and renamed into place, so a
    failed write never leaves a partial file behind.
    """
    write_bytes_atomic(path, wav_bytes(buffer, encoding))


def resample_linear(buffer: AudioBuffer, target_rate: int) -> AudioBuffer:
    """Resample by linear interpolation between neighbouring samples.

    Utility grade only (no anti-alias filtering). The output has
    ``round(len * target / source)`` samples; positions past the last input
    sample hold the final value.
    """
    if target_rate <= 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    if target_rate == buffer.sample_rate:
        return AudioBuffer(buffer.samples.copy(), buffer.sample_rate)
    n_in = len(buffer)
    n_out = (2 * n_in * target_rate + buffer.sample_rate) // (2 * buffer.sample_rate)
    if n_in == 0 or n_out == 0:
        return AudioBuffer(np.zeros(0), target_rate)
    positions = np.arange(n_out) * (buffer.sample_rate / target_rate)
    out = np.interp(positions, np.arange(n_in), buffer.samples)
    return AudioBuffer(out, target_rate)
