"""Run unimodal encoders over an image/caption listing and write the paired
embedding dataset: JSON manifest + raw row-major little-endian float32
matrices + one id per line, the format the mining side loads directly.

No normalization happens at export; the consumer normalizes at load.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .encoders import (
    DEFAULT_IMAGE_ENCODER,
    DEFAULT_TEXT_ENCODER,
    get_image_encoder,
    get_text_encoder,
)

logger = logging.getLogger(__name__)

LISTING_COLUMNS = ("image", "caption", "id")
ENCODING_TAG = "float32-le"
MANIFEST_NAME = "manifest.json"


class ListingError(ValueError):
    """The input CSV listing is unusable."""


@dataclass(frozen=True)
class ExportJob:
    listing_path: Path
    out_dir: Path
    image_encoder: str = DEFAULT_IMAGE_ENCODER
    text_encoder: str = DEFAULT_TEXT_ENCODER
    batch_size: int = 32

    def __post_init__(self):
        if self.batch_size < 1:
            raise ListingError(f"batch_size must be >= 1, got {self.batch_size}")
        object.__setattr__(self, "listing_path", Path(self.listing_path))
        object.__setattr__(self, "out_dir", Path(self.out_dir))


@dataclass(frozen=True)
class ExportResult:
    manifest_path: Path
    num_pairs: int
    image_dim: int
    text_dim: int
    skipped_ids: tuple[str, ...] = field(default_factory=tuple)


def read_listing(path: Path) -> list[dict]:
    if not path.exists():
        raise ListingError(f"listing not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != LISTING_COLUMNS:
            raise ListingError(
                f"listing must have header {','.join(LISTING_COLUMNS)}, "
                f"got {reader.fieldnames}"
            )
        rows = list(reader)
    if not rows:
        raise ListingError("listing is empty")
    ids = [row["id"] for row in rows]
    if len(set(ids)) != len(ids):
        raise ListingError("duplicate ids in listing")
    return rows


def _batched(items: list, size: int):
    for start in range(0, len(items), size):
        yield items[start:start + size]


def export(job: ExportJob) -> ExportResult:
    """Encode the listing and write manifest + binaries in listing order.

    Unreadable images are skipped (logged with their id); the manifest
    reflects the surviving count.
    """
    rows = read_listing(job.listing_path)
    image_encoder = get_image_encoder(job.image_encoder)
    text_encoder = get_text_encoder(job.text_encoder)
    base = job.listing_path.parent

    kept, skipped = [], []
    for row in rows:
        image_path = Path(row["image"])
        if not image_path.is_absolute():
            image_path = base / image_path
        try:
            with Image.open(image_path) as img:
                img.verify()
        except (OSError, SyntaxError, ValueError):
            logger.warning("skipping unreadable image id=%s path=%s",
                           row["id"], image_path)
            skipped.append(row["id"])
            continue
        kept.append((image_path, row["caption"], row["id"]))
    if not kept:
        raise ListingError("no readable images in listing")

    image_blocks = [image_encoder.encode_batch([p for p, _, _ in batch])
                    for batch in _batched(kept, job.batch_size)]
    text_blocks = [text_encoder.encode_batch([c for _, c, _ in batch])
                   for batch in _batched(kept, job.batch_size)]
    image_matrix = np.vstack(image_blocks).astype("<f4")
    text_matrix = np.vstack(text_blocks).astype("<f4")

    out = job.out_dir
    out.mkdir(parents=True, exist_ok=True)
    image_file, text_file, ids_file = "image_embs.f32", "text_embs.f32", "ids.txt"
    image_matrix.tofile(out / image_file)
    text_matrix.tofile(out / text_file)
    (out / ids_file).write_text("".join(f"{pid}\n" for _, _, pid in kept))

    manifest = {
        "num_pairs": len(kept),
        "image_dim": int(image_matrix.shape[1]),
        "text_dim": int(text_matrix.shape[1]),
        "encoding": ENCODING_TAG,
        "image_file": image_file,
        "text_file": text_file,
        "ids_file": ids_file,
        "normalized": False,
        "provenance": (f"pairexport image_encoder={image_encoder.name} "
                       f"text_encoder={text_encoder.name} "
                       f"listing={job.listing_path.name} skipped={len(skipped)}"),
    }
    manifest_path = out / MANIFEST_NAME
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
    return ExportResult(manifest_path, len(kept), manifest["image_dim"],
                        manifest["text_dim"], tuple(skipped))
