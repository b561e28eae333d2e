"""Command-line entry points: extract, convert-align."""

import argparse
import json
import sys
from pathlib import Path

from .align import convert_file
from .errors import SslfeatError
from .extract import DEFAULT_LAYER, ExtractionJob, extract


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sslfeat",
        description="Dump pretrained speech-model hidden states as corpus "
                    "feature files; convert alignment time stamps to frames.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="run the model over WAV files")
    p.add_argument("--model", required=True, help="model identifier or local path")
    p.add_argument("--in", dest="in_dir", required=True, help="directory of .wav files")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--layer", type=int, default=DEFAULT_LAYER,
                   help="hidden-state layer to dump (0 = pre-transformer)")
    p.add_argument("--workers", type=int, default=1,
                   help="parallel worker processes, one model load each")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("convert-align",
                       help="`utt_id phone start end` lines to alignment JSON lines")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--frame-period", type=float, default=0.02,
                   help="seconds per feature frame")
    p.set_defaults(func=cmd_convert)

    return parser


def cmd_extract(args) -> int:
    wavs = sorted(Path(args.in_dir).glob("*.wav"))
    job = ExtractionJob(audio_paths=wavs, model_id=args.model, out_dir=args.out,
                        layer=args.layer, workers=args.workers)
    summary = extract(job)
    print(json.dumps(summary))
    return 0


def cmd_convert(args) -> int:
    count = convert_file(args.in_path, args.out, frame_period=args.frame_period)
    print(json.dumps({"out": args.out, "utterances": count}))
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SslfeatError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 5


if __name__ == "__main__":
    sys.exit(main())
