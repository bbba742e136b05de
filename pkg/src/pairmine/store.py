"""Paired embedding datasets: binary persistence, validation, normalization,
and synthetic cluster generation.

On-disk layout is a JSON manifest next to raw row-major little-endian
float32 matrices, one file per modality, plus an optional ids file (one id
per line). Internal computation widens to float64 where precision matters;
the stored element type is always 32-bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, ManifestError, ZeroNormRowError

ENCODING_TAG = "float32-le"
_DISK_DTYPE = np.dtype("<f4")

MANIFEST_NAME = "manifest.json"
GROUND_TRUTH_NAME = "ground_truth.json"


def default_ids(num_pairs: int) -> tuple[str, ...]:
    """Row indices rendered as decimal strings."""
    return tuple(str(i) for i in range(num_pairs))


@dataclass(frozen=True)
class PairDataset:
    """N aligned rows of image and text embeddings with stable pair ids.

    Matrices are float32, C-contiguous, and read-only once constructed.
    ``normalized`` asserts every row is unit-norm (checked at 1e-6).
    """

    image_matrix: np.ndarray
    text_matrix: np.ndarray
    ids: tuple[str, ...]
    normalized: bool = False

    def __post_init__(self):
        image = _as_matrix(self.image_matrix, "image")
        text = _as_matrix(self.text_matrix, "text")
        object.__setattr__(self, "image_matrix", image)
        object.__setattr__(self, "text_matrix", text)
        object.__setattr__(self, "ids", tuple(str(i) for i in self.ids))
        if image.shape[0] != text.shape[0]:
            raise DataError(
                f"row count mismatch: {image.shape[0]} image rows vs "
                f"{text.shape[0]} text rows"
            )
        if len(self.ids) != image.shape[0]:
            raise DataError(
                f"{len(self.ids)} ids for {image.shape[0]} rows"
            )
        if len(set(self.ids)) != len(self.ids):
            raise DataError("duplicate ids")
        if self.normalized:
            for name, mat in (("image", image), ("text", text)):
                norms = np.linalg.norm(mat.astype(np.float64), axis=1)
                bad = np.nonzero(np.abs(norms - 1.0) > 1e-6)[0]
                if bad.size:
                    raise DataError(
                        f"normalized dataset has non-unit {name} row "
                        f"{int(bad[0])} (norm={norms[bad[0]]:.8g})"
                    )

    @property
    def num_pairs(self) -> int:
        return self.image_matrix.shape[0]

    @property
    def image_dim(self) -> int:
        return self.image_matrix.shape[1]

    @property
    def text_dim(self) -> int:
        return self.text_matrix.shape[1]

    def index_of(self, pair_id: str) -> int:
        try:
            return self._id_index[pair_id]
        except AttributeError:
            object.__setattr__(
                self, "_id_index", {pid: i for i, pid in enumerate(self.ids)}
            )
            return self._id_index[pair_id]


def _as_matrix(arr, name: str) -> np.ndarray:
    out = np.array(arr, dtype=_DISK_DTYPE, order="C", copy=True)
    if out.ndim != 2:
        raise DataError(f"{name} matrix must be 2-D, got shape {out.shape}")
    if not np.isfinite(out).all():
        raise DataError(f"{name} matrix contains NaN/Inf entries")
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Manifest:
    """Description of an on-disk dataset; paths are relative to the manifest."""

    num_pairs: int
    image_dim: int
    text_dim: int
    image_file: str
    text_file: str
    encoding: str = ENCODING_TAG
    ids_file: str | None = None
    normalized: bool = False
    provenance: str | None = None

    def to_json(self) -> str:
        doc = {
            "num_pairs": self.num_pairs,
            "image_dim": self.image_dim,
            "text_dim": self.text_dim,
            "encoding": self.encoding,
            "image_file": self.image_file,
            "text_file": self.text_file,
            "ids_file": self.ids_file,
            "normalized": self.normalized,
            "provenance": self.provenance,
        }
        return json.dumps(doc, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "Manifest":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"manifest is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ManifestError("manifest must be a JSON object")
        try:
            manifest = cls(
                num_pairs=int(doc["num_pairs"]),
                image_dim=int(doc["image_dim"]),
                text_dim=int(doc["text_dim"]),
                encoding=str(doc.get("encoding", ENCODING_TAG)),
                image_file=str(doc["image_file"]),
                text_file=str(doc["text_file"]),
                ids_file=doc.get("ids_file"),
                normalized=bool(doc.get("normalized", False)),
                provenance=doc.get("provenance"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ManifestError(f"malformed manifest: {exc}") from exc
        if manifest.encoding != ENCODING_TAG:
            raise ManifestError(
                f"unsupported element encoding {manifest.encoding!r}; "
                f"expected {ENCODING_TAG!r}"
            )
        if manifest.num_pairs < 0 or manifest.image_dim < 1 or manifest.text_dim < 1:
            raise ManifestError("manifest declares non-positive shape")
        return manifest


def _read_matrix(path: Path, num_rows: int, dim: int, name: str) -> np.ndarray:
    if not path.exists():
        raise ManifestError(f"{name} file missing: {path}")
    expected = num_rows * dim * _DISK_DTYPE.itemsize
    actual = path.stat().st_size
    if actual != expected:
        raise ManifestError(
            f"{name} file {path.name} is {actual} bytes; manifest implies "
            f"{num_rows}x{dim}x4 = {expected}"
        )
    flat = np.fromfile(path, dtype=_DISK_DTYPE)
    return flat.reshape(num_rows, dim)


def load_dataset(manifest_path: str | Path, normalize_rows: bool = False) -> PairDataset:
    """Load a dataset described by a JSON manifest.

    With ``normalize_rows=True`` the rows are unit-normalized after load
    unless the manifest already declares them normalized.
    """
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise ManifestError(f"manifest not found: {manifest_path}")
    manifest = Manifest.from_json(manifest_path.read_text())
    base = manifest_path.parent

    image = _read_matrix(base / manifest.image_file, manifest.num_pairs,
                         manifest.image_dim, "image")
    text = _read_matrix(base / manifest.text_file, manifest.num_pairs,
                        manifest.text_dim, "text")

    if manifest.ids_file is not None:
        ids_path = base / manifest.ids_file
        if not ids_path.exists():
            raise ManifestError(f"ids file missing: {ids_path}")
        ids = tuple(ids_path.read_text().splitlines())
        if len(ids) != manifest.num_pairs:
            raise ManifestError(
                f"ids file has {len(ids)} lines for {manifest.num_pairs} pairs"
            )
    else:
        ids = default_ids(manifest.num_pairs)

    dataset = PairDataset(image, text, ids, normalized=manifest.normalized)
    if normalize_rows and not dataset.normalized:
        dataset = normalize(dataset)
    return dataset


def save_dataset(dataset: PairDataset, out_dir: str | Path,
                 provenance: str | None = None) -> Manifest:
    """Write manifest + binaries so that load_dataset round-trips bit-exactly."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    image_file, text_file, ids_file = "image_embs.f32", "text_embs.f32", "ids.txt"
    np.ascontiguousarray(dataset.image_matrix, dtype=_DISK_DTYPE).tofile(out_dir / image_file)
    np.ascontiguousarray(dataset.text_matrix, dtype=_DISK_DTYPE).tofile(out_dir / text_file)
    (out_dir / ids_file).write_text("".join(f"{pid}\n" for pid in dataset.ids))

    manifest = Manifest(
        num_pairs=dataset.num_pairs,
        image_dim=dataset.image_dim,
        text_dim=dataset.text_dim,
        image_file=image_file,
        text_file=text_file,
        ids_file=ids_file,
        normalized=dataset.normalized,
        provenance=provenance,
    )
    (out_dir / MANIFEST_NAME).write_text(manifest.to_json())
    return manifest


def normalize(dataset: PairDataset) -> PairDataset:
    """Unit-normalize every row (computed in float64, stored as float32).

    After this, cosine similarity of any two rows equals their dot product.
    Raises ZeroNormRowError naming the first offending row.
    """
    mats = {}
    for name, mat in (("image", dataset.image_matrix), ("text", dataset.text_matrix)):
        wide = mat.astype(np.float64)
        norms = np.linalg.norm(wide, axis=1)
        zero = np.nonzero(norms == 0.0)[0]
        if zero.size:
            raise ZeroNormRowError(name, int(zero[0]))
        mats[name] = (wide / norms[:, None]).astype(_DISK_DTYPE)
    return PairDataset(mats["image"], mats["text"], dataset.ids, normalized=True)


@dataclass(frozen=True)
class SynthResult:
    """A synthetic dataset plus its generation ground truth."""

    dataset: PairDataset
    labels: np.ndarray
    mismatch_mask: np.ndarray
    image_centers: np.ndarray
    text_centers: np.ndarray


def _cluster_centers(rng: np.random.Generator, num_clusters: int, dim: int) -> np.ndarray:
    """Unit-norm centers; orthonormal (via QR) whenever the dimension allows."""
    raw = rng.standard_normal((dim, num_clusters))
    if num_clusters <= dim:
        q, r = np.linalg.qr(raw)
        # Fix QR sign ambiguity so output depends only on `raw`.
        q = q * np.sign(np.diag(r))
        return q.T.copy()
    centers = raw.T
    return centers / np.linalg.norm(centers, axis=1)[:, None]


def synth_clusters(num_clusters: int, per_cluster: int, image_dim: int,
                   text_dim: int, noise_scale: float, mismatch_fraction: float,
                   seed: int) -> SynthResult:
    """Generate a clustered paired dataset with optional planted mismatches.

    Each cluster has one image center and one text center sharing a semantic
    index. Members are center + Gaussian noise, unit-normalized. For a
    ``mismatch_fraction`` of pairs the text row is resampled from a uniformly
    chosen different cluster; those pairs are flagged in the mismatch mask.
    """
    if image_dim < 2 or text_dim < 2:
        raise DataError(
            f"dims must be >= 2, got image_dim={image_dim} text_dim={text_dim}"
        )
    if num_clusters < 1 or per_cluster < 1:
        raise DataError("num_clusters and per_cluster must be >= 1")
    if not 0.0 <= mismatch_fraction <= 1.0:
        raise DataError(f"mismatch_fraction {mismatch_fraction} outside [0,1]")
    if noise_scale < 0:
        raise DataError("noise_scale must be non-negative")

    rng = np.random.default_rng(seed)
    centers_i = _cluster_centers(rng, num_clusters, image_dim)
    centers_t = _cluster_centers(rng, num_clusters, text_dim)

    n = num_clusters * per_cluster
    labels = np.repeat(np.arange(num_clusters), per_cluster)

    image = centers_i[labels] + noise_scale * rng.standard_normal((n, image_dim))
    text = centers_t[labels] + noise_scale * rng.standard_normal((n, text_dim))

    num_mismatched = int(round(mismatch_fraction * n))
    mask = np.zeros(n, dtype=bool)
    if num_mismatched:
        chosen = np.sort(rng.choice(n, size=num_mismatched, replace=False))
        mask[chosen] = True
        for i in chosen:
            offset = int(rng.integers(1, num_clusters))
            wrong = (int(labels[i]) + offset) % num_clusters
            text[i] = centers_t[wrong] + noise_scale * rng.standard_normal(text_dim)

    image /= np.linalg.norm(image, axis=1)[:, None]
    text /= np.linalg.norm(text, axis=1)[:, None]

    dataset = PairDataset(image, text, default_ids(n), normalized=True)
    return SynthResult(dataset, labels, mask, centers_i, centers_t)


def save_ground_truth(result: SynthResult, out_dir: str | Path) -> Path:
    """Write the sidecar JSON with cluster labels and the mismatch mask."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / GROUND_TRUTH_NAME
    doc = {
        "labels": [int(v) for v in result.labels],
        "mismatch_mask": [bool(v) for v in result.mismatch_mask],
    }
    path.write_text(json.dumps(doc, indent=2) + "\n")
    return path


def load_ground_truth(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Read a ground-truth sidecar back as (labels, mismatch_mask)."""
    doc = json.loads(Path(path).read_text())
    return (np.asarray(doc["labels"], dtype=np.int64),
            np.asarray(doc["mismatch_mask"], dtype=bool))
