"""Command-line entry point: text corpus + concept list -> CMVS store."""

from __future__ import annotations

import argparse
import sys

from .extract import DEFAULT_MODEL, extract


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="condist-extract",
        description="extract mention vectors from a corpus with a masked language model",
    )
    parser.add_argument("--corpus", required=True, help="one sentence per line")
    parser.add_argument("--vocab", required=True, help="one concept per line")
    parser.add_argument("--out", required=True, help="CMVS output path")
    parser.add_argument("--model", default=DEFAULT_MODEL, help="model name or path")
    parser.add_argument("--max-sentences", type=int, default=500,
                        help="sampled sentences per concept")
    parser.add_argument("--mode", choices=("mask", "no-mask"), default="mask")
    parser.add_argument("--layer", type=int, default=None,
                        help="hidden-state layer for no-mask mode (default: final)")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--batch-size", type=int, default=16)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        count = extract(
            args.corpus,
            args.vocab,
            args.out,
            model_name=args.model,
            max_sentences=args.max_sentences,
            mode=args.mode,
            layer=args.layer,
            seed=args.seed,
            batch_size=args.batch_size,
        )
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {count} mention records to {args.out}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
