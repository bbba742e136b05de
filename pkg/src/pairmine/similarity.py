"""Cosine similarity kernels and thresholded per-target support vectors.

All similarity math runs in float64 regardless of the float32 storage type.
Thresholding keeps entries with similarity >= tau (entries below tau are
zeroed out); with tau in [0,1] negative similarities never survive.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .store import PairDataset

MODALITIES = ("image", "text")


def cosine(u, v) -> float:
    """Cosine similarity of two vectors; equals the dot product at unit norm."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 1:
        raise DataError(f"dim mismatch: {u.shape} vs {v.shape}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise DataError("cosine undefined for zero vector")
    return float(np.dot(u, v) / (nu * nv))


def _modality_matrix(dataset: PairDataset, modality: str) -> np.ndarray:
    if modality not in MODALITIES:
        raise ConfigError(f"unknown modality {modality!r}")
    mat = dataset.image_matrix if modality == "image" else dataset.text_matrix
    return mat.astype(np.float64)


def cosine_row(matrix: np.ndarray, target: int, pool: np.ndarray) -> np.ndarray:
    """Cosines between row `target` and the rows listed in `pool` (float64)."""
    row = matrix[target]
    nt = np.linalg.norm(row)
    if nt == 0.0:
        raise DataError(f"zero-norm row at index {target}")
    cands = matrix[pool]
    norms = np.linalg.norm(cands, axis=1)
    if np.any(norms == 0.0):
        bad = int(pool[np.nonzero(norms == 0.0)[0][0]])
        raise DataError(f"zero-norm row at index {bad}")
    return (cands @ row) / (norms * nt)


def _check_tau(tau: float) -> float:
    if not 0.0 <= tau <= 1.0:
        raise ConfigError(f"tau must be in [0,1], got {tau}")
    return float(tau)


def _full_pool(num_pairs: int, target: int) -> np.ndarray:
    pool = np.arange(num_pairs)
    return np.delete(pool, target)


@dataclass(frozen=True)
class SupportVector:
    """Sparse thresholded similarity row for one target and one modality.

    Only candidates with similarity >= tau are stored; the target itself
    never appears. Candidate order is ascending by index.
    """

    target_index: int
    modality: str
    tau: float
    candidate_indices: np.ndarray
    values: np.ndarray


def support_vector(dataset: PairDataset, target: int, modality: str,
                   tau: float, pool=None) -> SupportVector:
    """Candidates from `pool` (default: all other rows) whose cosine with the
    target row clears the threshold, together with their similarity values."""
    tau = _check_tau(tau)
    n = dataset.num_pairs
    if not 0 <= target < n:
        raise DataError(f"target index {target} out of range for {n} pairs")
    if pool is None:
        pool = _full_pool(n, target)
    else:
        pool = np.unique(np.asarray(pool, dtype=np.int64))
        if pool.size and (pool[0] < 0 or pool[-1] >= n):
            raise DataError("pool contains out-of-range indices")
        pool = pool[pool != target]

    matrix = _modality_matrix(dataset, modality)
    sims = cosine_row(matrix, target, pool) if pool.size else np.empty(0)
    keep = sims >= tau
    return SupportVector(
        target_index=int(target),
        modality=modality,
        tau=tau,
        candidate_indices=pool[keep],
        values=sims[keep],
    )
