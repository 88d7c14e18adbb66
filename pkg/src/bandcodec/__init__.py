"""Band-split audio codec toolkit.

Spectral band decomposition with exact merge, SimVQ/VQ quantization, a toy
per-band linear codec trained with straight-through gradients, bit-packed
token files, spectral distance metrics and codebook-utilization analysis.
"""

from .audio_io import AudioBuffer, read_wav, resample_linear, write_wav
from .bandsplit import BandConfig, BandSet, make_masks, merge_bands, preset_config, split_bands
from .codec import BandCodecModel, CodecConfig, TrainLog, bitrate, decode, encode, train
from .dsp import Spectrogram, StftConfig, hann_window, istft, stft
from .errors import BandCodecError, CorruptDataError, FormatError, TrainingError
from .quantizer import Codebook, SimVQCodebook, nearest_code, quantize_st
from .tokens import TokenStream, deserialize, serialize

__version__ = "0.1.0"

__all__ = [
    "AudioBuffer",
    "BandCodecError",
    "BandCodecModel",
    "BandConfig",
    "BandSet",
    "Codebook",
    "CodecConfig",
    "CorruptDataError",
    "FormatError",
    "SimVQCodebook",
    "Spectrogram",
    "StftConfig",
    "TokenStream",
    "TrainLog",
    "TrainingError",
    "bitrate",
    "decode",
    "deserialize",
    "encode",
    "hann_window",
    "istft",
    "make_masks",
    "merge_bands",
    "nearest_code",
    "preset_config",
    "quantize_st",
    "read_wav",
    "resample_linear",
    "serialize",
    "split_bands",
    "stft",
    "train",
    "write_wav",
]
