"""Command-line front end.

Settings are resolved as: command-line flag, then configuration file,
then built-in default. The seed additionally falls back to the
HOMOSYNTH_SEED environment variable before the default of 0.

Exit codes: 0 success, 1 usage or I/O error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import tempfile

import numpy as np

from . import homomorphic as hm
from .losses import si_snr
from .pipeline import (
    CheckpointError,
    ConfigError,
    NonFiniteLossError,
    SystemConfig,
    build_model,
    evaluate,
    forward,
    load_checkpoint,
    mix_at_snr,
    model_from_checkpoint,
    save_checkpoint,
    train,
)
from .pipeline.checkpoint import check_shapes
from .signal import AudioFormatError, read_wav, write_wav

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2

PRECEDENCE = (
    "settings precedence: command-line flag > --config file > HOMOSYNTH_SEED "
    "(seed only) > built-in default"
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _atomic(path, writer):
    """Run ``writer(tmp_path)`` and rename into place, so partial files never appear."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    os.close(fd)
    try:
        result = writer(tmp)
        os.replace(tmp, path)
        return result
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_text(path, text: str):
    def writer(tmp):
        with open(tmp, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)

    _atomic(path, writer)


def _resolve_config(args) -> SystemConfig:
    base = SystemConfig()
    file_data = {}
    if getattr(args, "config", None):
        if not os.path.exists(args.config):
            raise FileNotFoundError(f"no such file: {args.config}")
        with open(args.config, encoding="utf-8") as fh:
            try:
                file_data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{args.config}: not valid JSON: {exc}") from exc
        if not isinstance(file_data, dict):
            raise ConfigError(f"{args.config}: configuration must be a JSON object")
    overrides = dict(file_data)
    if "seed" not in overrides and os.environ.get("HOMOSYNTH_SEED"):
        try:
            overrides["seed"] = int(os.environ["HOMOSYNTH_SEED"])
        except ValueError as exc:
            raise ConfigError("HOMOSYNTH_SEED must be an integer") from exc
    for key in ("win_len", "hop", "lifter_mode", "lifter_N", "lr", "batch", "seed", "arn_hidden"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    if getattr(args, "encoder_channels", None):
        overrides["encoder_channels"] = [int(c) for c in args.encoder_channels.split(",")]
    return SystemConfig.from_dict(overrides, base)


def _add_config_flags(p):
    p.add_argument("--config", help="JSON configuration file")
    p.add_argument("--seed", type=int, help="random seed")
    p.add_argument("--win-len", dest="win_len", type=int, help="window length in samples")
    p.add_argument("--hop", type=int, help="frame shift in samples")
    p.add_argument("--lifter-mode", dest="lifter_mode", choices=("intelligent", "traditional"))
    p.add_argument("--lifter-N", dest="lifter_N", type=int, help="quefrency cut for traditional liftering")


def read_manifest(path):
    """Parse ``first<TAB>second`` lines; blank lines and ``#`` comments are skipped."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"no such file: {path}")
    pairs, errors = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 2 or not all(f.strip() for f in fields):
                errors.append(f"{path}:{lineno}: expected two tab-separated paths")
                continue
            pairs.append(tuple(f.strip() for f in fields))
    if errors:
        raise UsageError("malformed manifest\n" + "\n".join(errors))
    if not pairs:
        raise UsageError(f"{path}: manifest has no entries")
    return pairs


def cmd_decompose(args):
    cfg = _resolve_config(args)
    clip = read_wav(args.input)
    if args.checkpoint:
        ckpt = load_checkpoint(args.checkpoint)
        model = model_from_checkpoint(ckpt)
        model.carn_e = model.carn_v = None
        cfg = ckpt.config
    else:
        model = build_model(cfg, dtype=np.float64, identity_carns=True)
    result = forward(clip, model, cfg)
    inter = result.intermediates
    os.makedirs(args.out_dir, exist_ok=True)
    outputs = {
        "cepstrum.csv": inter["cepstrum"].frames,
        "mask.csv": inter["mask"],
        "excitation_cepstrum.csv": inter["excitation_cepstrum"].frames,
        "vocal_cepstrum.csv": inter["vocal_cepstrum"].frames,
        "excitation_spec.csv": inter["excitation_spec"].frames,
        "vocal_spec.csv": inter["vocal_spec"].frames,
    }
    for name, values in outputs.items():
        prefix = "f" if name.endswith("spec.csv") else "q"
        _atomic(os.path.join(args.out_dir, name),
                lambda tmp, v=values, pr=prefix: hm.write_frames_csv(tmp, v, prefix=pr))
    x, y = clip.samples, result.enhanced.samples
    denom = np.linalg.norm(x)
    error = np.linalg.norm(y - x) / denom if denom > 0 else 0.0
    print(f"identity round-trip relative error: {error:.3e}")
    return EXIT_OK


def cmd_enhance(args):
    ckpt = load_checkpoint(args.checkpoint)
    if args.config:
        check_shapes(ckpt, _resolve_config(args))
    model = model_from_checkpoint(ckpt)
    noisy = read_wav(args.input)
    enhanced = forward(noisy, model).enhanced
    _atomic(args.output, lambda tmp: write_wav(tmp, enhanced))
    if args.clean:
        clean = read_wav(args.clean)
        if len(clean) != len(noisy):
            raise UsageError(f"--clean has {len(clean)} samples, input has {len(noisy)}")
        print(f"noisy SI-SNR: {si_snr(noisy.samples, clean.samples):.3f} dB")
        print(f"enhanced SI-SNR: {si_snr(enhanced.samples, clean.samples):.3f} dB")
    return EXIT_OK


def cmd_train(args):
    cfg = _resolve_config(args)
    pairs = read_manifest(args.manifest)
    for clean, noise in pairs:
        for path in (clean, noise):
            if not os.path.exists(path):
                raise FileNotFoundError(f"no such file: {path}")
    rirs = [read_wav(p) for p in (args.rir or [])]
    result = train(
        pairs, cfg, steps=args.steps, epochs=args.epochs, rirs=rirs,
        dump_dir=os.path.dirname(os.path.abspath(args.output)),
    )
    loss_path = args.loss_csv or os.path.join(os.path.dirname(os.path.abspath(args.output)), "loss.csv")
    lines = ["step,loss"] + [f"{step},{format(loss, '.17g')}" for step, loss in result.losses]
    _write_text(loss_path, "\n".join(lines) + "\n")
    _atomic(args.output, lambda tmp: save_checkpoint(tmp, result.checkpoint))
    print(f"trained {len(result.losses)} steps; checkpoint {args.output}; losses {loss_path}")
    return EXIT_OK


def cmd_evaluate(args):
    ckpt = load_checkpoint(args.checkpoint)
    cfg = ckpt.config
    seed = args.seed if args.seed is not None else cfg.seed
    rng = np.random.default_rng(seed)
    pairs, names = [], []
    for first, second in read_manifest(args.manifest):
        if args.paired:
            pairs.append((read_wav(first), read_wav(second)))
        else:
            clean, noise = read_wav(first), read_wav(second)
            snr = args.snr if args.snr is not None else rng.uniform(*cfg.snr_range)
            pairs.append((mix_at_snr(clean, noise, snr), clean))
        names.append(os.path.basename(first))
    result = evaluate(ckpt, pairs, names)
    out = csv.writer(sys.stdout, lineterminator="\n")
    out.writerow(["clip", "noisy_sisnr", "enhanced_sisnr", "improvement"])
    for name, before, after, delta in result.rows:
        out.writerow([name, f"{before:.3f}", f"{after:.3f}", f"{delta:.3f}"])
    out.writerow(["mean", f"{result.mean_noisy:.3f}", f"{result.mean_enhanced:.3f}",
                  f"{result.mean_improvement:.3f}"])
    return EXIT_OK


def cmd_mix(args):
    clean, noise = read_wav(args.clean), read_wav(args.noise)
    rir = read_wav(args.rir) if args.rir else None
    mixed = mix_at_snr(clean, noise, args.snr, rir)
    clipped = _atomic(args.output, lambda tmp: write_wav(tmp, mixed))
    print(f"wrote {args.output} at {args.snr:g} dB SNR ({clipped} samples clipped)")
    return EXIT_OK


def build_parser():
    parser = _Parser(
        prog="homosynth",
        description="Speech enhancement by neural homomorphic synthesis.",
        epilog=PRECEDENCE,
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="verb", metavar="{decompose,enhance,train,evaluate,mix}",
                                parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("decompose", help="dump cepstra, mask and component spectra as CSV",
                       epilog=PRECEDENCE)
    p.add_argument("input", help="16 kHz mono 16-bit WAV")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--checkpoint", help="take the lifter network and config from a checkpoint")
    _add_config_flags(p)
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("enhance", help="enhance one WAV file", epilog=PRECEDENCE)
    p.add_argument("input")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--clean", help="clean reference; prints SI-SNR before and after")
    _add_config_flags(p)
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("train", help="train on a clean<TAB>noise manifest", epilog=PRECEDENCE)
    p.add_argument("manifest")
    p.add_argument("--output", required=True, help="checkpoint path")
    p.add_argument("--loss-csv", help="default: loss.csv next to the checkpoint")
    p.add_argument("--steps", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--encoder-channels", dest="encoder_channels", help="comma-separated, e.g. 8,16,16")
    p.add_argument("--arn-hidden", dest="arn_hidden", type=int)
    p.add_argument("--rir", action="append", help="room impulse response WAV (repeatable)")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="SI-SNR of a checkpoint as CSV on stdout")
    p.add_argument("manifest", help="clean<TAB>noise lines (noisy<TAB>clean with --paired)")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--snr", type=float, help="mixing SNR; default: seeded draw from the config range")
    p.add_argument("--paired", action="store_true", help="manifest lines are noisy<TAB>clean")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("mix", help="mix clean speech and noise at an SNR")
    p.add_argument("clean")
    p.add_argument("noise")
    p.add_argument("--snr", type=float, required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--rir", help="room impulse response WAV")
    p.add_argument("--seed", type=int, help="accepted for uniformity; mixing is deterministic")
    p.set_defaults(func=cmd_mix)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NonFiniteLossError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, AudioFormatError, ConfigError, CheckpointError, UsageError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
