"""Exception hierarchy.

Argument errors use the builtin ``ValueError``; everything that stems from
bad *data* (files, token streams, training blow-ups) derives from
``BandCodecError`` so the CLI can map it to its data-error exit code.
"""


class BandCodecError(Exception):
    """Base class for data-level failures."""


class FormatError(BandCodecError):
    """Unsupported or unrecognized file/stream format."""


class CorruptDataError(BandCodecError):
    """Truncated or internally inconsistent data."""


class SerializationError(BandCodecError):
    """A value cannot be represented in the requested binary format."""


class NumericError(BandCodecError):
    """A numerical precondition failed (e.g. zero overlap-add denominator)."""


class TrainingError(BandCodecError):
    """Training diverged."""
