"""Hard-pair mining over precomputed embeddings.

For a target pair, every candidate gets the product of its thresholded
image-side and text-side cosine similarities with the target; the top-k
candidates by that score are its hard pairs. A target whose top-k would
include a zero score (fewer than k positively supporting candidates) is
flagged as noise and its ranked list is emptied.

The full miner scans all other rows per target; the fast variant restricts
each target to a seeded uniform candidate pool. Single-modality baseline
miners (image-only / text-only cosine) share the ranking machinery.
"""

from __future__ import annotations

import json
import os
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .similarity import _check_tau, _full_pool, cosine_row
from .store import PairDataset, normalize


@dataclass(frozen=True)
class MiningConfig:
    """Knobs for hard-pair mining.

    pool_size (when set) is the per-target candidate pool for fast mining;
    worker_count parallelizes over targets (0 = use all cores) and never
    affects results.
    """

    k: int
    tau_image: float = 0.5
    tau_text: float = 0.5
    pool_size: int | None = None
    seed: int = 0
    worker_count: int = 1

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        _check_tau(self.tau_image)
        _check_tau(self.tau_text)
        if self.pool_size is not None and self.pool_size < self.k:
            raise ConfigError(
                f"pool_size {self.pool_size} smaller than k={self.k}"
            )
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        if self.worker_count < 0:
            raise ConfigError("worker_count must be >= 0")


@dataclass(frozen=True)
class HardPairResult:
    """Ranked hard pairs for one target.

    ranked holds (candidate row index, score) descending by score with ties
    broken by ascending index; it is empty exactly when noise is true.
    """

    target_id: str
    ranked: tuple[tuple[int, float], ...]
    noise: bool


@dataclass(frozen=True)
class MiningSummary:
    targets: int
    noise_count: int
    noise_fraction: float
    wall_time_s: float


@dataclass(frozen=True)
class MiningReport:
    results: tuple[HardPairResult, ...]
    summary: MiningSummary

    def result_for(self, target_id: str) -> HardPairResult:
        try:
            return self._by_id[target_id]
        except AttributeError:
            object.__setattr__(
                self, "_by_id", {r.target_id: r for r in self.results}
            )
            return self._by_id[target_id]


def _thresholded_scores(image64: np.ndarray, text64: np.ndarray, target: int,
                        pool: np.ndarray, tau_image: float, tau_text: float) -> np.ndarray:
    sims_i = cosine_row(image64, target, pool)
    sims_t = cosine_row(text64, target, pool)
    sims_i[sims_i < tau_image] = 0.0
    sims_t[sims_t < tau_text] = 0.0
    return sims_i * sims_t


def score_candidates(dataset: PairDataset, target: int, config: MiningConfig,
                     pool=None) -> np.ndarray:
    """Dense hard-pair scores for one target, aligned with `pool`.

    score_j = (image cosine if >= tau_image else 0) * (text cosine if >=
    tau_text else 0).
    """
    n = dataset.num_pairs
    if not 0 <= target < n:
        raise DataError(f"target index {target} out of range for {n} pairs")
    if pool is None:
        pool = _full_pool(n, target)
    else:
        pool = np.asarray(pool, dtype=np.int64)
        if pool.size and (pool.min() < 0 or pool.max() >= n):
            raise DataError("pool contains out-of-range indices")
        if np.any(pool == target):
            raise DataError("pool must exclude the target")
    image64 = dataset.image_matrix.astype(np.float64)
    text64 = dataset.text_matrix.astype(np.float64)
    return _thresholded_scores(image64, text64, target, pool,
                               config.tau_image, config.tau_text)


def top_k_ranked(scores: np.ndarray, pool: np.ndarray, k: int) -> tuple[tuple[int, float], ...]:
    """Top-k (index, score) pairs, descending score, ties by ascending index."""
    order = np.lexsort((pool, -scores))[:k]
    return tuple((int(pool[i]), float(scores[i])) for i in order)


def _result_from_scores(target_id: str, scores: np.ndarray, pool: np.ndarray,
                        k: int) -> HardPairResult:
    positive = int(np.count_nonzero(scores > 0.0))
    if positive < k:
        return HardPairResult(target_id, (), True)
    return HardPairResult(target_id, top_k_ranked(scores, pool, k), False)


def _map_targets(per_target, num_targets: int, worker_count: int) -> list:
    """Run per_target(i) for all targets, merged in target order regardless
    of worker count."""
    workers = worker_count
    if workers == 0:
        workers = os.cpu_count() or 1
    if workers <= 1 or num_targets <= 1:
        return [per_target(i) for i in range(num_targets)]
    chunk = max(1, -(-num_targets // (workers * 4)))
    spans = [range(lo, min(lo + chunk, num_targets))
             for lo in range(0, num_targets, chunk)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        blocks = pool.map(lambda span: [per_target(i) for i in span], spans)
        return [res for block in blocks for res in block]


def _prepared(dataset: PairDataset) -> tuple[PairDataset, np.ndarray, np.ndarray]:
    if not dataset.normalized:
        dataset = normalize(dataset)
    return (dataset,
            dataset.image_matrix.astype(np.float64),
            dataset.text_matrix.astype(np.float64))


def _finish(results: list[HardPairResult], started: float) -> MiningReport:
    noise_count = sum(1 for r in results if r.noise)
    n = len(results)
    return MiningReport(
        results=tuple(results),
        summary=MiningSummary(
            targets=n,
            noise_count=noise_count,
            noise_fraction=noise_count / n if n else 0.0,
            wall_time_s=time.perf_counter() - started,
        ),
    )


def mine_hpm(dataset: PairDataset, config: MiningConfig) -> MiningReport:
    """Exact top-k hard pairs per target over all other rows."""
    started = time.perf_counter()
    n = dataset.num_pairs
    if n < 2:
        raise DataError("mining needs at least 2 pairs")
    if config.k >= n:
        raise ConfigError(
            f"k={config.k} cannot select k distinct candidates out of {n - 1}"
        )
    dataset, image64, text64 = _prepared(dataset)

    def per_target(i: int) -> HardPairResult:
        pool = _full_pool(n, i)
        scores = _thresholded_scores(image64, text64, i, pool,
                                     config.tau_image, config.tau_text)
        return _result_from_scores(dataset.ids[i], scores, pool, config.k)

    results = _map_targets(per_target, n, config.worker_count)
    return _finish(results, started)


def fast_pool(num_pairs: int, target: int, seed: int, pool_size: int) -> np.ndarray:
    """The seeded per-target candidate pool used by mine_fast.

    Keyed by (seed, target row index); implemented as a prefix of one
    per-target permutation of the other rows, so pools for growing
    pool_size are nested and draws are uniform without replacement.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, target]))
    candidates = _full_pool(num_pairs, target)
    return rng.permutation(candidates)[:pool_size]


def mine_fast(dataset: PairDataset, config: MiningConfig) -> MiningReport:
    """Hard-pair mining restricted to a seeded uniform pool per target.

    pool_size == num_pairs - 1 reproduces mine_hpm exactly; larger values
    are clamped to that with a warning.
    """
    started = time.perf_counter()
    if config.pool_size is None:
        raise ConfigError("mine_fast requires pool_size")
    n = dataset.num_pairs
    if n < 2:
        raise DataError("mining needs at least 2 pairs")
    pool_size = config.pool_size
    if pool_size > n - 1:
        warnings.warn(
            f"pool_size {pool_size} exceeds candidate count {n - 1}; clamping",
            stacklevel=2,
        )
        pool_size = n - 1
    if config.k > pool_size:
        raise ConfigError(
            f"k={config.k} cannot select k distinct candidates out of {pool_size}"
        )
    dataset, image64, text64 = _prepared(dataset)

    def per_target(i: int) -> HardPairResult:
        # sort the drawn pool so the gathered rows match mine_hpm's layout
        # bit-for-bit when the pool covers every candidate
        pool = np.sort(fast_pool(n, i, config.seed, pool_size))
        scores = _thresholded_scores(image64, text64, i, pool,
                                     config.tau_image, config.tau_text)
        return _result_from_scores(dataset.ids[i], scores, pool, config.k)

    results = _map_targets(per_target, n, config.worker_count)
    return _finish(results, started)


def _mine_single_modality(dataset: PairDataset, k: int, modality: str,
                          worker_count: int) -> MiningReport:
    started = time.perf_counter()
    n = dataset.num_pairs
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    if n < k + 1:
        raise ConfigError(f"k={k} needs at least k+1 pairs, got {n}")
    dataset, image64, text64 = _prepared(dataset)
    matrix = image64 if modality == "image" else text64

    def per_target(i: int) -> HardPairResult:
        pool = _full_pool(n, i)
        sims = cosine_row(matrix, i, pool)
        return HardPairResult(dataset.ids[i], top_k_ranked(sims, pool, k), False)

    results = _map_targets(per_target, n, worker_count)
    return _finish(results, started)


def mine_im(dataset: PairDataset, k: int, worker_count: int = 1) -> MiningReport:
    """Baseline: top-k by image-side cosine alone (no thresholds, no noise flags)."""
    return _mine_single_modality(dataset, k, "image", worker_count)


def mine_tm(dataset: PairDataset, k: int, worker_count: int = 1) -> MiningReport:
    """Baseline: top-k by text-side cosine alone (no thresholds, no noise flags)."""
    return _mine_single_modality(dataset, k, "text", worker_count)


def filter_noise(report: MiningReport) -> tuple[set[str], set[str]]:
    """Partition target ids into (clean, noise) by the mined noise flag."""
    clean = {r.target_id for r in report.results if not r.noise}
    noise = {r.target_id for r in report.results if r.noise}
    return clean, noise


# --- report persistence (JSON-lines records + JSON summary footer) ---

def write_report(report: MiningReport, path: str | Path) -> None:
    """One record per target: {"target": id, "noise": bool, "hard": [[index, score], ...]}.

    Scores use the shortest round-trip decimal of the 64-bit value, so a
    report's bytes depend only on the mined content.
    """
    path = Path(path)
    with path.open("w") as fh:
        for res in report.results:
            record = {
                "target": res.target_id,
                "noise": res.noise,
                "hard": [[idx, score] for idx, score in res.ranked],
            }
            fh.write(json.dumps(record, separators=(",", ":")) + "\n")


def write_summary(report: MiningReport, path: str | Path) -> None:
    s = report.summary
    doc = {
        "targets": s.targets,
        "noise_count": s.noise_count,
        "noise_fraction": s.noise_fraction,
        "wall_time_s": s.wall_time_s,
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def read_report(path: str | Path) -> MiningReport:
    """Load a JSONL report; the summary is reconstructed (wall time zero)."""
    results = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            results.append(HardPairResult(
                target_id=str(record["target"]),
                ranked=tuple((int(i), float(s)) for i, s in record["hard"]),
                noise=bool(record["noise"]),
            ))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"bad report record at line {lineno}: {exc}") from exc
    noise_count = sum(1 for r in results if r.noise)
    n = len(results)
    return MiningReport(
        results=tuple(results),
        summary=MiningSummary(n, noise_count, noise_count / n if n else 0.0, 0.0),
    )
