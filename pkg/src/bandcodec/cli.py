"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import logging
import os
import re
import sys
import tempfile
from pathlib import Path

import numpy as np

from .analysis import energy_profile, utilization_report, write_profile_csv
from .audio_io import AudioBuffer, read_wav, resample_linear, wav_bytes
from .bandsplit import PRESETS, BandSet, merge_bands, preset_config, split_bands
from .codec import CodecConfig, bitrate, decode, encode, format_bitrate, load_model, save_model, train
from .dsp import StftConfig
from .errors import BandCodecError
from .metrics import distance_report
from .tokens import load_tokens, save_tokens

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2
OPERATING_RATE = 24000

log = logging.getLogger("bandcodec")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _bits(text: str):
    try:
        return tuple(int(b) for b in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _load_audio(path, rate=OPERATING_RATE) -> AudioBuffer:
    x = read_wav(path)
    if x.sample_rate != rate:
        log.info("resampling %s from %d Hz to %d Hz", path, x.sample_rate, rate)
        x = resample_linear(x, rate)
    return x


def _wav_files(directory) -> list:
    d = Path(directory)
    if not d.is_dir():
        raise UsageError(f"not a directory: {directory}")
    files = sorted(p for p in d.iterdir() if p.suffix.lower() == ".wav")
    if not files:
        raise BandCodecError(f"no .wav files in {directory}")
    return files


def _write_outputs(outputs) -> None:
    """Write ``[(path, bytes)]`` all-or-nothing: temps first, renames last.

    If a rename fails, files already moved into place are removed again.
    """
    staged, placed = [], []
    try:
        for path, data in outputs:
            if os.path.isdir(path):
                raise IsADirectoryError(f"output path is a directory: {path}")
            fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=os.path.dirname(os.path.abspath(path)))
            staged.append((tmp, path))
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
        for tmp, path in staged:
            os.replace(tmp, path)
            placed.append(path)
    except BaseException:
        for tmp, _ in staged:
            if os.path.exists(tmp):
                os.unlink(tmp)
        for path in placed:
            os.unlink(path)
        raise


def cmd_split(args) -> int:
    x = _load_audio(args.input, args.rate)
    cfg = StftConfig(args.fft_size, args.hop)
    bands = split_bands(x, preset_config(args.preset), cfg)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = Path(args.input).stem
    outputs = [(out_dir / f"{stem}.band{b}.wav", wav_bytes(band, args.encoding)) for b, band in enumerate(bands, 1)]
    _write_outputs(outputs)
    for path, _ in outputs:
        print(path)
    return EXIT_OK


def _band_number(path) -> int:
    m = re.search(r"\.band(\d+)\.wav$", str(path))
    return int(m.group(1)) if m else 0


def cmd_merge(args) -> int:
    paths = sorted(args.inputs, key=_band_number)
    merged = merge_bands(BandSet([read_wav(p) for p in paths]))
    _write_outputs([(args.output, wav_bytes(merged, args.encoding))])
    return EXIT_OK


def cmd_train(args) -> int:
    band_config = preset_config(args.preset)
    bits = args.bits or (17,) * band_config.n_bands
    try:
        cfg = CodecConfig(band_config, bits, frame_len=args.frame_len, latent_dim=args.latent_dim,
                          seed=args.seed, learn_rate=args.lr, epochs=args.epochs,
                          commit_weight=args.commit_weight, commit_lambda=args.commit_lambda,
                          simvq=not args.vq, freeze_base=args.freeze_base)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    data = [_load_audio(p, cfg.sample_rate) for p in _wav_files(args.data)]

    def report(epoch, history):
        if epoch == 1 or epoch % 10 == 0 or epoch == cfg.epochs:
            log.info("epoch %d loss %.6g", epoch, history.total[-1])

    model, history = train(data, cfg, on_epoch=report)
    save_model(model, args.output)
    if len(history):
        print(f"epochs: {len(history)}")
        print(f"final_loss: {history.total[-1]:.6f}")
    print(f"bitrate: {format_bitrate(bitrate(cfg))}")
    return EXIT_OK


def cmd_encode(args) -> int:
    model = load_model(args.model)
    tokens = encode(_load_audio(args.input, model.config.sample_rate), model)
    save_tokens(tokens, args.output)
    print(f"bands: {tokens.band_count}")
    print(f"frames: {tokens.frame_count}")
    return EXIT_OK


def cmd_decode(args) -> int:
    model = load_model(args.model)
    y = decode(load_tokens(args.input), model)
    _write_outputs([(args.output, wav_bytes(y, args.encoding))])
    return EXIT_OK


def cmd_metrics(args) -> int:
    ref, test = read_wav(args.reference), read_wav(args.test)
    if ref.sample_rate != test.sample_rate or len(ref) != len(test):
        raise BandCodecError("reference and test must have equal sample rate and length")
    rep = distance_report(ref, test)
    print(f"mel_distance: {rep.mel_distance:.6f}")
    print(f"stft_distance: {rep.stft_distance:.6f}")
    print(f"max_abs_diff: {np.max(np.abs(ref.samples - test.samples)):.3e}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    streams = [load_tokens(p) for p in args.inputs]
    bits = {s.bits_per_band for s in streams}
    if len(bits) != 1:
        raise BandCodecError("token files disagree on band layout")
    layout = bits.pop()
    layers = [np.concatenate([s.indices[b] for s in streams]) for b in range(len(layout))]
    rep = utilization_report(layers, [2 ** b for b in layout])
    print(f"files: {len(streams)}")
    for line in rep.lines():
        print(line)
    return EXIT_OK


def cmd_energy_profile(args) -> int:
    clips = [_load_audio(p) for p in _wav_files(args.directory)]
    prof = energy_profile(clips, args.n_fft, args.hop)
    write_profile_csv(prof, args.output)
    print(f"files: {len(clips)}")
    print(f"total_frames: {prof.total_frames}")
    print(f"peak_bin: {int(np.argmax(prof.per_bin))}")
    print(f"peak_hz: {prof.frequencies[int(np.argmax(prof.per_bin))]:.2f}")
    return EXIT_OK


def cmd_bitrate(args) -> int:
    band_config = preset_config(args.preset)
    bits = args.bits or (17,) * band_config.n_bands
    try:
        cfg = CodecConfig(band_config, bits, frame_len=args.frame_len)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    print(format_bitrate(bitrate(cfg)))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="bandcodec", description="Band-split codec toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    presets = sorted(PRESETS)

    s = sub.add_parser("split", help="split a WAV into band WAVs")
    s.add_argument("input")
    s.add_argument("--preset", choices=presets, default="bands3")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--fft-size", type=int, default=1024)
    s.add_argument("--hop", type=int, default=256)
    s.add_argument("--rate", type=int, default=OPERATING_RATE, help="operating sample rate")
    s.add_argument("--encoding", choices=["float32", "pcm16"], default="float32")
    s.set_defaults(func=cmd_split)

    s = sub.add_parser("merge", help="sum band WAVs back into one")
    s.add_argument("inputs", nargs="+")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--encoding", choices=["float32", "pcm16"], default="float32")
    s.set_defaults(func=cmd_merge)

    s = sub.add_parser("train", help="train the toy per-band codec")
    s.add_argument("--data", required=True, help="directory of WAV files")
    s.add_argument("--preset", choices=presets, default="bands3")
    s.add_argument("--bits", type=_bits, help="comma-separated bits per band")
    s.add_argument("--epochs", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--lr", type=float, default=0.02)
    s.add_argument("--latent-dim", type=int, default=64)
    s.add_argument("--frame-len", type=int, default=320)
    s.add_argument("--commit-weight", type=float, default=1.0)
    s.add_argument("--commit-lambda", type=float, default=0.25)
    s.add_argument("--vq", action="store_true", help="plain VQ instead of SimVQ")
    s.add_argument("--freeze-base", action="store_true", help="train only the SimVQ transform")
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("encode", help="WAV to .bstk tokens")
    s.add_argument("input")
    s.add_argument("-m", "--model", required=True)
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_encode)

    s = sub.add_parser("decode", help=".bstk tokens to WAV")
    s.add_argument("input")
    s.add_argument("-m", "--model", required=True)
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--encoding", choices=["float32", "pcm16"], default="float32")
    s.set_defaults(func=cmd_decode)

    s = sub.add_parser("metrics", help="mel and STFT distances between two WAVs")
    s.add_argument("reference")
    s.add_argument("test")
    s.set_defaults(func=cmd_metrics)

    s = sub.add_parser("analyze", help="codebook utilization of .bstk files")
    s.add_argument("inputs", nargs="+")
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("energy-profile", help="average power spectrum of a WAV directory")
    s.add_argument("directory")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--n-fft", type=int, default=2048)
    s.add_argument("--hop", type=int, default=512)
    s.set_defaults(func=cmd_energy_profile)

    s = sub.add_parser("bitrate", help="token bitrate of a configuration")
    s.add_argument("--preset", choices=presets, default="bands3")
    s.add_argument("--bits", type=_bits)
    s.add_argument("--frame-len", type=int, default=320)
    s.set_defaults(func=cmd_bitrate)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"bandcodec: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return exc.code or EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"bandcodec {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (BandCodecError, OSError, ValueError) as exc:
        print(f"bandcodec {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
