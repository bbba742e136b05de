"""Shared test fixtures: datasets and batches with controlled structure."""

from __future__ import annotations

import numpy as np

from pairmine import LossBatch, PairDataset, normalize
from pairmine.store import default_ids


def confusable_clusters(seed: int, num_clusters: int = 8, per_cluster: int = 32,
                        latent_dim: int = 12, dim: int = 16,
                        cluster_scale: float = 1.0, latent_noise: float = 0.8,
                        modality_noise: float = 0.5) -> PairDataset:
    """Clusters with overlapping neighbors and an identifiable true partner.

    Each pair shares one latent vector (cluster center + within-cluster
    variation) observed through two fixed linear maps plus independent
    per-modality noise, so within-cluster discrimination is hard but
    possible; that is where hard-negative training has headroom.
    """
    rng = np.random.default_rng(seed)
    n = num_clusters * per_cluster
    centers = rng.standard_normal((num_clusters, latent_dim))
    centers *= cluster_scale / np.linalg.norm(centers, axis=1)[:, None]
    labels = np.repeat(np.arange(num_clusters), per_cluster)
    latent = centers[labels] + latent_noise * rng.standard_normal((n, latent_dim))
    to_image = rng.standard_normal((latent_dim, dim)) / np.sqrt(latent_dim)
    to_text = rng.standard_normal((latent_dim, dim)) / np.sqrt(latent_dim)
    image = latent @ to_image + modality_noise * rng.standard_normal((n, dim))
    text = latent @ to_text + modality_noise * rng.standard_normal((n, dim))
    return normalize(PairDataset(image, text, default_ids(n)))


def random_unit_dataset(n: int, d: int, seed: int) -> PairDataset:
    rng = np.random.default_rng(seed)
    return normalize(PairDataset(rng.standard_normal((n, d)),
                                 rng.standard_normal((n, d)),
                                 default_ids(n)))


def kink_distance(batch: LossBatch) -> float:
    """Smallest distance of any hinge term or hard-min tie from zero."""
    image = batch.image_embs / np.linalg.norm(batch.image_embs, axis=1)[:, None]
    text = batch.text_embs / np.linalg.norm(batch.text_embs, axis=1)[:, None]
    sims = image @ text.T
    dist = np.inf
    for anchor, hard in batch.hard_mask.items():
        hard_sims = np.sort(sims[anchor, list(hard)])
        if len(hard_sims) > 1:
            dist = min(dist, hard_sims[1] - hard_sims[0])
        floor = hard_sims[0]
        for j in range(batch.size):
            if j == anchor or j in hard:
                continue
            dist = min(dist, abs(sims[anchor, j] - floor))
    return dist


def safe_hnml_batch(rng: np.random.Generator, b: int, d: int,
                    num_anchors: int, hard_per_anchor: int) -> LossBatch:
    """Random batch whose margin terms sit at least 1e-4 from any kink."""
    while True:
        mask = {}
        anchors = rng.choice(b, size=num_anchors, replace=False)
        for anchor in anchors:
            pool = [j for j in range(b) if j != anchor]
            cols = rng.choice(pool, size=hard_per_anchor, replace=False)
            mask[int(anchor)] = tuple(int(c) for c in cols)
        batch = LossBatch(rng.standard_normal((b, d)),
                          rng.standard_normal((b, d)), hard_mask=mask)
        if kink_distance(batch) > 1e-4:
            return batch
