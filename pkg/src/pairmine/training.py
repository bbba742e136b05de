"""Hard-pair batch composition and a desk-scale continuous-training loop.

The encoder is a pair of linear projections (one per modality) whose
outputs are unit-normalized. Training is plain full-batch gradient descent
on the combined contrastive + margin loss; everything is float64 and
bit-deterministic for a fixed seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, DivergenceError
from .losses import LossBatch, LossConfig, finetune_loss, loss_components
from .mining import MiningReport, filter_noise
from .store import PairDataset, normalize

_DISK_DTYPE = np.dtype("<f4")
ENCODER_HEADER_NAME = "encoder.json"


@dataclass(frozen=True)
class ComposerConfig:
    """batch_size rows are drawn as the base batch; the first
    ceil(seed_fraction * batch_size) of them act as seeds, each contributing
    up to hard_per_seed mined hard pairs to the composed batch."""

    batch_size: int
    seed_fraction: float = 1.0
    hard_per_seed: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 < self.seed_fraction <= 1.0:
            raise ConfigError(
                f"seed_fraction must be in (0,1], got {self.seed_fraction}"
            )
        if self.hard_per_seed < 0:
            raise ConfigError(f"hard_per_seed must be >= 0, got {self.hard_per_seed}")


@dataclass(frozen=True)
class BatchPlan:
    """Composed batch: base indices first, surviving hard draws appended in
    seed order. hard_mask maps a seed anchor's position in the composed
    batch to the positions of its surviving hard negatives."""

    base: tuple[int, ...]
    composed: tuple[int, ...]
    hard_mask: dict[int, tuple[int, ...]]

    def __post_init__(self):
        composed = tuple(int(i) for i in self.composed)
        base = tuple(int(i) for i in self.base)
        if composed[: len(base)] != base:
            raise DataError("composed batch must start with the base indices")
        if len(set(composed)) != len(composed):
            raise DataError("composed batch contains duplicate indices")
        size = len(composed)
        for anchor, cols in self.hard_mask.items():
            if not 0 <= anchor < size or any(not 0 <= c < size for c in cols):
                raise DataError("hard_mask position out of range")
            if anchor in cols:
                raise DataError("hard_mask anchor references itself")
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "composed", composed)


def compose_batch(dataset: PairDataset, report: MiningReport,
                  config: ComposerConfig, rng: np.random.Generator | None = None) -> BatchPlan:
    """Draw a base batch from clean (non-noise) targets and extend it with
    mined hard pairs.

    Each seed draws min(hard_per_seed, available) distinct hard pairs
    uniformly from its mined list; a draw already present in the batch is
    dropped without redrawing. Passing an explicit rng lets a caller drive
    a sequence of distinct batches from one stream.
    """
    if rng is None:
        rng = np.random.default_rng(config.seed)
    clean_ids, _ = filter_noise(report)
    universe = np.array(
        sorted(dataset.index_of(pid) for pid in clean_ids), dtype=np.int64
    )
    if universe.size == 0:
        raise ConfigError("no clean targets to sample from")
    if config.batch_size > universe.size:
        raise ConfigError(
            f"batch_size {config.batch_size} exceeds clean-set size {universe.size}"
        )

    base = rng.choice(universe, size=config.batch_size, replace=False)
    num_seeds = math.ceil(config.seed_fraction * config.batch_size)

    composed = [int(i) for i in base]
    present = set(composed)
    hard_mask: dict[int, tuple[int, ...]] = {}
    for pos in range(num_seeds):
        result = report.result_for(dataset.ids[composed[pos]])
        available = [idx for idx, _ in result.ranked]
        take = min(config.hard_per_seed, len(available))
        if take == 0:
            continue
        picks = rng.choice(len(available), size=take, replace=False)
        kept = []
        for pick in picks:
            candidate = available[int(pick)]
            if candidate in present:
                continue  # collision: drop without redrawing
            composed.append(candidate)
            present.add(candidate)
            kept.append(len(composed) - 1)
        if kept:
            hard_mask[pos] = tuple(kept)

    return BatchPlan(tuple(int(i) for i in base), tuple(composed), hard_mask)


@dataclass(frozen=True)
class ToyEncoder:
    """Linear projection per modality; encoded rows are always unit-norm."""

    image_proj: np.ndarray
    text_proj: np.ndarray
    normalize_output: bool = True

    def __post_init__(self):
        image = np.ascontiguousarray(self.image_proj, dtype=np.float64)
        text = np.ascontiguousarray(self.text_proj, dtype=np.float64)
        if image.ndim != 2 or text.ndim != 2 or image.shape[1] != text.shape[1]:
            raise DataError("projections must be 2-D with a shared output width")
        if not (np.isfinite(image).all() and np.isfinite(text).all()):
            raise DataError("projection weights contain NaN/Inf")
        if not self.normalize_output:
            raise ConfigError("output normalization is always on")
        object.__setattr__(self, "image_proj", image)
        object.__setattr__(self, "text_proj", text)

    @property
    def embed_dim(self) -> int:
        return self.image_proj.shape[1]

    @classmethod
    def random(cls, image_dim: int, text_dim: int, embed_dim: int, seed: int) -> "ToyEncoder":
        rng = np.random.default_rng(seed)
        wi = rng.standard_normal((image_dim, embed_dim)) / math.sqrt(image_dim)
        wt = rng.standard_normal((text_dim, embed_dim)) / math.sqrt(text_dim)
        return cls(wi, wt)

    def encode_image(self, rows: np.ndarray) -> np.ndarray:
        return _project_unit(rows, self.image_proj, "image")

    def encode_text(self, rows: np.ndarray) -> np.ndarray:
        return _project_unit(rows, self.text_proj, "text")


def _project_unit(rows: np.ndarray, proj: np.ndarray, name: str) -> np.ndarray:
    z = np.asarray(rows, dtype=np.float64) @ proj
    norms = np.linalg.norm(z, axis=1)
    if np.any(norms == 0.0):
        raise DataError(f"{name} projection produced a zero-norm row")
    return z / norms[:, None]


def save_encoder(encoder: ToyEncoder, out_dir: str | Path) -> Path:
    """Checkpoint: small JSON header + the two projections as raw f32."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = {"image_proj_file": "image_proj.f32", "text_proj_file": "text_proj.f32"}
    np.ascontiguousarray(encoder.image_proj, dtype=_DISK_DTYPE).tofile(
        out_dir / files["image_proj_file"])
    np.ascontiguousarray(encoder.text_proj, dtype=_DISK_DTYPE).tofile(
        out_dir / files["text_proj_file"])
    header = {
        "image_in_dim": encoder.image_proj.shape[0],
        "text_in_dim": encoder.text_proj.shape[0],
        "embed_dim": encoder.embed_dim,
        "encoding": "float32-le",
        **files,
    }
    path = out_dir / ENCODER_HEADER_NAME
    path.write_text(json.dumps(header, indent=2) + "\n")
    return path


def load_encoder(checkpoint_dir: str | Path) -> ToyEncoder:
    checkpoint_dir = Path(checkpoint_dir)
    header = json.loads((checkpoint_dir / ENCODER_HEADER_NAME).read_text())
    def read(name, rows, cols):
        flat = np.fromfile(checkpoint_dir / header[name], dtype=_DISK_DTYPE)
        return flat.astype(np.float64).reshape(rows, cols)
    embed_dim = int(header["embed_dim"])
    return ToyEncoder(
        read("image_proj_file", int(header["image_in_dim"]), embed_dim),
        read("text_proj_file", int(header["text_in_dim"]), embed_dim),
    )


@dataclass(frozen=True)
class TrainConfig:
    """Plain gradient descent for `iterations` steps; learning_rate 0 is a
    valid no-op run. Early stopping (off by default) checks retrieval R@1
    every eval_interval iterations and stops after `early_stop_patience`
    consecutive evaluations without improvement."""

    learning_rate: float
    iterations: int
    loss: LossConfig = field(default_factory=LossConfig)
    composer: ComposerConfig = field(default_factory=lambda: ComposerConfig(batch_size=32))
    seed: int = 0
    early_stop_patience: int | None = None
    eval_interval: int = 50

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.iterations < 1:
            raise ConfigError(f"iterations must be >= 1, got {self.iterations}")
        if self.eval_interval < 1:
            raise ConfigError("eval_interval must be >= 1")


@dataclass(frozen=True)
class TraceEntry:
    iteration: int
    total: float
    contrastive: float
    margin: float


def train(dataset: PairDataset, report: MiningReport, config: TrainConfig,
          init: ToyEncoder) -> tuple[ToyEncoder, list[TraceEntry]]:
    """Continuous training with hard-pair batch composition.

    Per iteration: compose a batch, project its rows through the encoder,
    take one descent step on the combined loss. Returns the final encoder
    and the per-iteration loss trace; raises DivergenceError (carrying the
    partial trace) if the loss goes non-finite.
    """
    if not dataset.normalized:
        dataset = normalize(dataset)
    image64 = dataset.image_matrix.astype(np.float64)
    text64 = dataset.text_matrix.astype(np.float64)

    rng = np.random.default_rng(config.seed)
    wi = init.image_proj.copy()
    wt = init.text_proj.copy()

    trace: list[TraceEntry] = []
    best_recall = -1.0
    stale = 0
    for it in range(config.iterations):
        plan = compose_batch(dataset, report, config.composer, rng=rng)
        rows = list(plan.composed)
        raw_image = image64[rows] @ wi
        raw_text = text64[rows] @ wt
        batch = LossBatch(raw_image, raw_text, hard_mask=plan.hard_mask)
        closs, mloss = loss_components(batch, config.loss)
        out = finetune_loss(batch, config.loss)
        if not np.isfinite(out.loss):
            raise DivergenceError(it, trace)
        trace.append(TraceEntry(it, out.loss, closs, mloss))

        wi -= config.learning_rate * (image64[rows].T @ out.image_grad)
        wt -= config.learning_rate * (text64[rows].T @ out.text_grad)
        if not (np.isfinite(wi).all() and np.isfinite(wt).all()):
            raise DivergenceError(it, trace)

        if config.early_stop_patience is not None and (it + 1) % config.eval_interval == 0:
            recall = eval_retrieval(ToyEncoder(wi, wt), dataset, [1])[1]
            if recall > best_recall:
                best_recall = recall
                stale = 0
            else:
                stale += 1
                if stale >= config.early_stop_patience:
                    break

    return ToyEncoder(wi, wt), trace


def eval_retrieval(encoder: ToyEncoder, dataset: PairDataset,
                   ks: list[int]) -> dict[int, float]:
    """Image-to-text retrieval recall: for each image row, rank all text rows
    by cosine (ties broken by ascending index); R@k is the fraction whose
    true partner ranks within k."""
    if not ks:
        raise ConfigError("ks must be nonempty")
    if any(k < 1 for k in ks):
        raise ConfigError("every cutoff must be >= 1")
    image = encoder.encode_image(dataset.image_matrix)
    text = encoder.encode_text(dataset.text_matrix)
    sims = image @ text.T
    n = dataset.num_pairs
    diag = np.diag(sims)
    higher = (sims > diag[:, None]).sum(axis=1)
    tied_before = np.array(
        [int(np.count_nonzero(sims[i, :i] == diag[i])) for i in range(n)]
    )
    rank = 1 + higher + tied_before
    return {int(k): float((rank <= k).mean()) for k in ks}


def write_trace_csv(trace: list[TraceEntry], path: str | Path) -> None:
    lines = ["iteration,total,contrastive,margin"]
    lines += [f"{t.iteration},{t.total!r},{t.contrastive!r},{t.margin!r}" for t in trace]
    Path(path).write_text("\n".join(lines) + "\n")


def write_recall_csv(table: dict[int, float], path: str | Path) -> None:
    lines = ["k,recall"]
    lines += [f"{k},{table[k]!r}" for k in sorted(table)]
    Path(path).write_text("\n".join(lines) + "\n")
