"""Export CLI: run frozen text/audio encoders over a corpus into MEF1.

Exit codes: 0 success, 1 failure (I/O, bad manifest), 2 usage error.
"""

from __future__ import annotations

import argparse
import sys

from .export import MODALITIES, run_export
from .manifest import read_manifest


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="encoder-export", description=__doc__)
    parser.add_argument("--manifest", required=True, help="corpus manifest CSV")
    parser.add_argument("--out", required=True, help="output MEF1 path")
    parser.add_argument("--layer", type=int, default=-1,
                        help="hidden-state layer to export (-1 = final)")
    parser.add_argument("--modality", choices=MODALITIES, default="both")
    parser.add_argument("--text-model", default=None,
                        help="local pretrained text encoder directory")
    parser.add_argument("--audio-model", default=None,
                        help="local pretrained audio encoder directory")
    parser.add_argument("--random-init", action="store_true",
                        help="seeded untrained 768-dim encoders (no pretrained weights needed)")
    parser.add_argument("--seed", type=int, default=0, help="seed for --random-init")
    parser.add_argument("--pooled", action="store_true",
                        help="mean-pool over time, one vector per record")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    print("command=export")
    for key in sorted(vars(args)):
        print(f"{key}={getattr(args, key)}")
    print("", flush=True)

    want_text = args.modality in ("text", "both")
    want_audio = args.modality in ("audio", "both")
    if want_text and not args.random_init and not args.text_model:
        parser.error("text export needs --text-model or --random-init")
    if want_audio and not args.random_init and not args.audio_model:
        parser.error("audio export needs --audio-model or --random-init")

    try:
        rows = read_manifest(args.manifest)
        text_encoder = None
        audio_encoder = None
        if want_text:
            from .encoders import TextEncoder

            if args.text_model:
                text_encoder = TextEncoder.from_pretrained(args.text_model, layer=args.layer)
            else:
                corpus = [row.transcript for row in rows]
                text_encoder = TextEncoder.random_init(corpus, seed=args.seed, layer=args.layer)
        if want_audio:
            from .encoders import AudioEncoder

            if args.audio_model:
                audio_encoder = AudioEncoder.from_pretrained(args.audio_model, layer=args.layer)
            else:
                audio_encoder = AudioEncoder.random_init(seed=args.seed, layer=args.layer)
        result = run_export(
            rows, args.out, args.modality, text_encoder, audio_encoder, pooled=args.pooled
        )
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    print(f"wrote {args.out}: {result.records} records from {result.utterances} utterances")
    for name, count in result.class_counts.items():
        print(f"class {name}: {count}")
    if result.skipped:
        print(f"skipped {len(result.skipped)} rows, see {args.out}.exceptions.json")
    return 0


if __name__ == "__main__":
    sys.exit(main())
