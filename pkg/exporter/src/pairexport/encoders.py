"""Unimodal encoders behind a name registry.

The two built-ins are deterministic, dependency-light stand-ins at the
reference output widths (384 for images, 768 for text), so exports run
offline and reproducibly. Heavyweight pretrained encoders plug in through
the same interface: a text encoder name of the form
``sentence-transformers:<model>`` is loaded lazily and raises
EncoderLoadError when the model (or the library) is unavailable.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

DEFAULT_IMAGE_ENCODER = "patch-pixels-384"
DEFAULT_TEXT_ENCODER = "char-ngram-hash-768"

_PATCH_SIZE = 16  # images are resampled to PATCH_SIZE x PATCH_SIZE RGB


class EncoderLoadError(RuntimeError):
    """The requested encoder could not be constructed."""


@dataclass(frozen=True)
class PatchPixelImageEncoder:
    """Downsampled RGB pixels pushed through a fixed random projection."""

    name: str = DEFAULT_IMAGE_ENCODER
    dim: int = 384

    def _projection(self) -> np.ndarray:
        rng = np.random.default_rng(48879)
        raw = _PATCH_SIZE * _PATCH_SIZE * 3
        return rng.standard_normal((raw, self.dim)) / np.sqrt(raw)

    def encode_batch(self, paths: list[Path]) -> np.ndarray:
        projection = self._projection()
        rows = []
        for path in paths:
            with Image.open(path) as img:
                small = img.convert("RGB").resize((_PATCH_SIZE, _PATCH_SIZE),
                                                  Image.BILINEAR)
            pixels = np.asarray(small, dtype=np.float64).reshape(-1) / 255.0
            rows.append(pixels @ projection)
        return np.asarray(rows, dtype=np.float32)


def _stable_bucket(token: bytes, buckets: int) -> tuple[int, float]:
    digest = hashlib.blake2b(token, digest_size=8).digest()
    value = int.from_bytes(digest, "little")
    return value % buckets, 1.0 if (value >> 63) & 1 else -1.0


@dataclass(frozen=True)
class CharNgramTextEncoder:
    """Signed hashing of character trigrams into a fixed-width vector."""

    name: str = DEFAULT_TEXT_ENCODER
    dim: int = 768
    ngram: int = 3

    def encode_batch(self, captions: list[str]) -> np.ndarray:
        out = np.zeros((len(captions), self.dim), dtype=np.float64)
        for row, caption in enumerate(captions):
            padded = f" {caption.strip().lower()} "
            for start in range(max(len(padded) - self.ngram + 1, 1)):
                token = padded[start:start + self.ngram].encode("utf-8")
                bucket, sign = _stable_bucket(token, self.dim)
                out[row, bucket] += sign
        return out.astype(np.float32)


class SentenceTransformerTextEncoder:
    """Lazy adapter for sentence-transformers models."""

    def __init__(self, model_name: str):
        try:
            from sentence_transformers import SentenceTransformer
            self._model = SentenceTransformer(model_name)
        except Exception as exc:
            raise EncoderLoadError(
                f"cannot load sentence-transformers model {model_name!r}: {exc}"
            ) from exc
        self.name = f"sentence-transformers:{model_name}"
        self.dim = int(self._model.get_sentence_embedding_dimension())

    def encode_batch(self, captions: list[str]) -> np.ndarray:
        encoded = self._model.encode(captions, convert_to_numpy=True,
                                     normalize_embeddings=False)
        return np.asarray(encoded, dtype=np.float32)


def get_image_encoder(name: str):
    if name == DEFAULT_IMAGE_ENCODER:
        return PatchPixelImageEncoder()
    raise EncoderLoadError(f"unknown image encoder {name!r}")


def get_text_encoder(name: str):
    if name == DEFAULT_TEXT_ENCODER:
        return CharNgramTextEncoder()
    if name.startswith("sentence-transformers:"):
        return SentenceTransformerTextEncoder(name.split(":", 1)[1])
    raise EncoderLoadError(f"unknown text encoder {name!r}")
