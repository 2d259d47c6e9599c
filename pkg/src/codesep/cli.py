"""Command-line interface.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 runtime error
or non-finite training loss.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import wave
from pathlib import Path

from .bitstream import unpack
from .checkpoint import load_model
from .config import load_config
from .data import build_datasets, load_wav_corpus, make_speakers, write_corpus
from .dsp import read_wav, write_wav
from .errors import BitstreamError, CheckpointError, ConfigurationError, DataError, TrainingAborted
from .pipeline import MODES, evaluate, jsac_decode, jsac_encode, run_mode

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4


def _models(args, *names):
    return [load_model(getattr(args, name), name) for name in names]


def cmd_synth_data(args) -> None:
    speakers = make_speakers(args.speakers, args.seed, args.sample_rate, args.f0_step)
    corpus = build_datasets(args.speakers, args.utterances, args.duration, args.seed, args.sample_rate,
                            speakers)
    write_corpus(corpus, args.out)
    print(f"wrote {len(corpus.singles)} utterances and {len(corpus.mixtures)} mixtures to {args.out}")


def cmd_train(args) -> None:
    cfg = load_config(args.config)
    changes = {"stage": args.stage}
    if args.out:
        changes["out"] = args.out
    if args.codec:
        changes["codec_checkpoint"] = args.codec
    cfg = cfg.replace(**changes)
    if not cfg.out:
        raise ConfigurationError("no checkpoint path: set 'out' in the config or pass --out")
    from .train import train

    result = train(cfg)
    print(f"{cfg.stage}: loss {result.losses[0]:.4f} -> {result.losses[-1]:.4f}, saved {cfg.out}")


def cmd_separate(args) -> None:
    codec, btd, atsp = _models(args, "codec", "btd", "atsp")
    y = read_wav(args.inp)
    bs = jsac_encode(y, btd, codec)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "tokens.cstk").write_bytes(bs.to_bytes())
    for i, w in enumerate(jsac_decode(bs, atsp, codec, len(y)), start=1):
        write_wav(out / f"s{i}.wav", w)


def cmd_pack(args) -> None:
    codec, btd = _models(args, "codec", "btd")
    data = jsac_encode(read_wav(args.inp), btd, codec).to_bytes()
    Path(args.out).write_bytes(data)
    print(f"{len(data)} bytes")


def cmd_unpack(args) -> None:
    bs = unpack(Path(args.inp).read_bytes())
    if args.tokens_json:
        Path(args.tokens_json).write_text(json.dumps({
            "sample_rate_hz": bs.sample_rate_hz, "token_rate": str(bs.token_rate),
            "codebook_size": bs.codebook_size, "tokens": bs.tokens.tolist()}))
    if args.out_dir:
        codec, atsp = _models(args, "codec", "atsp")
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for i, w in enumerate(jsac_decode(bs, atsp, codec), start=1):
            write_wav(out / f"s{i}.wav", w)


def _eval_models(args):
    codec = load_model(args.codec, "codec")
    btd = atsp = separator = None
    if args.mode == "jsac":
        btd, atsp = _models(args, "btd", "atsp")
    else:
        if not args.separator:
            raise ConfigurationError(f"{args.mode} needs --separator")
        separator = load_model(args.separator, "separator")
    return dict(codec=codec, btd=btd, atsp=atsp, separator=separator)


def cmd_eval(args) -> None:
    mixtures, rejected = load_wav_corpus(args.data)
    mixtures = [m for m in mixtures if m.split == args.split][: args.limit or None]
    if not mixtures:
        raise DataError(f"no {args.split} mixtures under {args.data}")
    report = evaluate(args.mode, mixtures, bitrate_bps=args.bitrate, **_eval_models(args))
    if args.report:
        report.save(args.report)
    print(json.dumps({"bitrate_bps": report.bitrate_bps, "rejected": len(rejected),
                      **report.aggregate()}, indent=2))


def cmd_baseline(args) -> None:
    y = read_wav(args.inp)
    ests = run_mode(args.mode, y, bitrate_bps=args.bitrate, **_eval_models(args))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, w in enumerate(ests, start=1):
        write_wav(out / f"s{i}.wav", w)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="codesep", description="Token-domain separation and compression")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth-data", help="write a synthetic two-speaker corpus")
    s.add_argument("--out", required=True)
    s.add_argument("--speakers", type=int, default=4)
    s.add_argument("--utterances", type=int, default=60, help="per speaker")
    s.add_argument("--duration", type=float, default=2.0, help="seconds")
    s.add_argument("--sample-rate", type=int, default=8000)
    s.add_argument("--f0-step", type=float, default=100.0, help="0 gives continuous-phase sources")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth_data)

    s = sub.add_parser("train", help="train one stage")
    s.add_argument("--stage", required=True, choices=("codec", "btd", "atsp", "separator"))
    s.add_argument("--config", required=True)
    s.add_argument("--out", help="checkpoint path (overrides the config)")
    s.add_argument("--codec", help="codec checkpoint (overrides the config)")
    s.set_defaults(func=cmd_train)

    def models(s, *names):
        for name in names:
            s.add_argument(f"--{name}", required=True, help=f"{name} checkpoint")

    s = sub.add_parser("separate", help="JSAC: mixture WAV -> bitstream and two source WAVs")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out-dir", required=True)
    models(s, "codec", "btd", "atsp")
    s.set_defaults(func=cmd_separate)

    s = sub.add_parser("pack", help="mixture WAV -> base-token bitstream")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    models(s, "codec", "btd")
    s.set_defaults(func=cmd_pack)

    s = sub.add_parser("unpack", help="bitstream -> tokens and/or decoded WAVs")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--tokens-json")
    s.add_argument("--out-dir")
    s.add_argument("--codec")
    s.add_argument("--atsp")
    s.set_defaults(func=cmd_unpack)

    for name, helptext, fn in (("eval", "evaluate a pipeline on a corpus split", cmd_eval),
                               ("baseline", "run a cascade baseline on one mixture", cmd_baseline)):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--mode", required=True, choices=MODES if name == "eval" else MODES[1:])
        s.add_argument("--bitrate", type=float, help="bits per second (baselines)")
        s.add_argument("--codec", required=True)
        s.add_argument("--btd")
        s.add_argument("--atsp")
        s.add_argument("--separator")
        if name == "eval":
            s.add_argument("--data", required=True)
            s.add_argument("--split", default="test")
            s.add_argument("--limit", type=int, default=0)
            s.add_argument("--report", help="write the JSON report here")
        else:
            s.add_argument("--in", dest="inp", required=True)
            s.add_argument("--out-dir", required=True)
        s.set_defaults(func=fn)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "unpack" and args.out_dir and not (args.codec and args.atsp):
        print("error: unpack --out-dir needs --codec and --atsp", file=sys.stderr)
        return EXIT_CONFIG
    if args.command in ("eval", "baseline") and args.mode == "jsac" and not (args.btd and args.atsp):
        print("error: jsac needs --btd and --atsp", file=sys.stderr)
        return EXIT_CONFIG
    try:
        args.func(args)
    except (ConfigurationError, CheckpointError) as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, BitstreamError, OSError, EOFError, wave.Error) as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except TrainingAborted as err:
        print(f"aborted: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    except (RuntimeError, ValueError) as err:
        print(f"runtime error: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
