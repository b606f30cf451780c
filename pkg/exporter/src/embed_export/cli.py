"""Command line wrapper: JSONL corpus in, PTEB1 embedding file out."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .exporter import ExportJob, export


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="embed-export",
        description="Encode a JSONL corpus ({'id','lang','text'} per line) "
                    "into a PTEB1 embedding file.")
    parser.add_argument("--input", required=True, help="corpus JSONL file")
    parser.add_argument("--output", required=True, help="PTEB1 output path")
    parser.add_argument("--encoder", default="hash:256",
                        help="encoder id: 'hash:<dim>' (built-in, deterministic) "
                             "or a sentence-transformers model name")
    parser.add_argument("--batch-size", type=int, default=32)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        job = ExportJob(input_path=Path(args.input), encoder=args.encoder,
                        output_path=Path(args.output), batch_size=args.batch_size)
        path = export(job)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
