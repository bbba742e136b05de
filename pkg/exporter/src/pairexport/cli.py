"""CLI: export an image/caption listing to the paired-embedding format."""

from __future__ import annotations

import argparse
import logging
import sys

from .encoders import DEFAULT_IMAGE_ENCODER, DEFAULT_TEXT_ENCODER, EncoderLoadError
from .export import ExportJob, ListingError, export


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pairexport",
        description="Encode an image/caption CSV listing into paired "
                    "embedding matrices plus a manifest")
    parser.add_argument("--listing", required=True,
                        help="CSV with header image,caption,id")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--image-encoder", default=DEFAULT_IMAGE_ENCODER)
    parser.add_argument("--text-encoder", default=DEFAULT_TEXT_ENCODER)
    parser.add_argument("--batch-size", type=int, default=32)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    job = ExportJob(listing_path=args.listing, out_dir=args.out,
                    image_encoder=args.image_encoder,
                    text_encoder=args.text_encoder,
                    batch_size=args.batch_size)
    try:
        result = export(job)
    except (ListingError, EncoderLoadError, OSError) as exc:
        print(f"error type={type(exc).__name__} msg=\"{exc}\"", file=sys.stderr)
        return 1
    print(f"wrote {result.manifest_path} pairs={result.num_pairs} "
          f"dims={result.image_dim}x{result.text_dim} "
          f"skipped={len(result.skipped_ids)}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
