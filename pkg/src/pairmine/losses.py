"""Contrastive and hard-negative-margin losses with analytic gradients.

Both losses are driven by the same cosine similarity matrix of a batch
(image rows x text rows). Gradients are returned with respect to the raw
embedding matrices and flow through the cosine normalization, so callers
may pass non-unit rows; at unit norm this reduces to projected dot-product
gradients. Everything runs in float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError


@dataclass(frozen=True)
class LossConfig:
    """temperature scales logits in the contrastive term; margin_weight
    balances the margin term in the combined loss."""

    temperature: float = 0.07
    margin_weight: float = 1.0
    symmetric: bool = False

    def __post_init__(self):
        if not self.temperature > 0:
            raise ConfigError(f"temperature must be > 0, got {self.temperature}")
        if self.margin_weight < 0:
            raise ConfigError(f"margin_weight must be >= 0, got {self.margin_weight}")


@dataclass(frozen=True)
class LossBatch:
    """Aligned image/text embedding rows plus per-anchor hard-negative columns.

    hard_mask maps an anchor row index to the in-batch column indices of its
    hard negatives; anchors with no entry (or an empty one) contribute no
    margin term.
    """

    image_embs: np.ndarray
    text_embs: np.ndarray
    hard_mask: dict[int, tuple[int, ...]] = field(default_factory=dict)

    def __post_init__(self):
        image = np.ascontiguousarray(self.image_embs, dtype=np.float64)
        text = np.ascontiguousarray(self.text_embs, dtype=np.float64)
        if image.ndim != 2 or text.ndim != 2:
            raise DataError("embeddings must be 2-D matrices")
        if image.shape != text.shape:
            raise DataError(
                f"batch shape mismatch: image {image.shape} vs text {text.shape}"
            )
        if image.shape[0] < 1:
            raise DataError("batch must contain at least one row")
        if not np.isfinite(image).all() or not np.isfinite(text).all():
            raise DataError("batch embeddings contain NaN/Inf")
        object.__setattr__(self, "image_embs", image)
        object.__setattr__(self, "text_embs", text)
        b = image.shape[0]
        mask = {}
        for anchor, cols in self.hard_mask.items():
            anchor = int(anchor)
            cols = tuple(sorted(int(c) for c in cols))
            if not 0 <= anchor < b:
                raise DataError(f"hard_mask anchor {anchor} out of range")
            if any(not 0 <= c < b for c in cols):
                raise DataError(f"hard_mask for anchor {anchor} has out-of-range column")
            if anchor in cols:
                raise DataError(f"anchor {anchor} lists itself as a hard negative")
            if len(set(cols)) != len(cols):
                raise DataError(f"hard_mask for anchor {anchor} has duplicate columns")
            if cols:
                mask[anchor] = cols
        object.__setattr__(self, "hard_mask", mask)

    @property
    def size(self) -> int:
        return self.image_embs.shape[0]

    @property
    def anchor_set(self) -> tuple[int, ...]:
        return tuple(sorted(self.hard_mask))


@dataclass(frozen=True)
class LossValueAndGrads:
    loss: float
    image_grad: np.ndarray
    text_grad: np.ndarray
    temperature_grad: float = 0.0

    def __post_init__(self):
        if not np.isfinite(self.loss):
            raise DataError("loss is not finite")
        if not (np.isfinite(self.image_grad).all() and np.isfinite(self.text_grad).all()):
            raise DataError("gradients contain NaN/Inf")


def _unit_rows(mat: np.ndarray, name: str) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(mat, axis=1)
    if np.any(norms == 0.0):
        raise DataError(f"zero-norm {name} row in batch")
    return mat / norms[:, None], norms


def _similarity(batch: LossBatch):
    image_unit, image_norms = _unit_rows(batch.image_embs, "image")
    text_unit, text_norms = _unit_rows(batch.text_embs, "text")
    sims = image_unit @ text_unit.T
    return sims, image_unit, image_norms, text_unit, text_norms


def _chain_to_embeddings(grad_on_sims, image_unit, image_norms, text_unit, text_norms):
    """Backpropagate d(loss)/d(sims) through the cosine to the raw rows.

    The per-row Jacobian of x -> x/|x| is (I - u u^T)/|x| at u = x/|x|.
    """
    grad_image_unit = grad_on_sims @ text_unit
    grad_text_unit = grad_on_sims.T @ image_unit
    proj_i = grad_image_unit - (grad_image_unit * image_unit).sum(axis=1, keepdims=True) * image_unit
    proj_t = grad_text_unit - (grad_text_unit * text_unit).sum(axis=1, keepdims=True) * text_unit
    return proj_i / image_norms[:, None], proj_t / text_norms[:, None]


def _softmax_direction(sims: np.ndarray, sigma: float):
    """Per-row loss terms, softmax, and d(loss)/d(sigma) pieces for one
    direction (rows are anchors, columns the candidates)."""
    b = sims.shape[0]
    logits = sims / sigma
    shift = logits - logits.max(axis=1, keepdims=True)
    expz = np.exp(shift)
    denom = expz.sum(axis=1)
    log_sum = np.log(denom) + logits.max(axis=1)
    diag = np.diag(logits)
    loss = float((log_sum - diag).sum() / b)
    probs = expz / denom[:, None]
    grad_on_sims = (probs - np.eye(b)) / (b * sigma)
    # d/d(sigma) of (LSE_i - s_ii/sigma) = (s_ii - sum_j p_ij s_ij)/sigma^2
    dsigma = float((np.diag(sims) - (probs * sims).sum(axis=1)).sum() / (b * sigma * sigma))
    return loss, grad_on_sims, dsigma


def _clip_terms(sims: np.ndarray, sigma: float, symmetric: bool):
    loss, grad_on_sims, dsigma = _softmax_direction(sims, sigma)
    if symmetric:
        loss_t, grad_t, dsigma_t = _softmax_direction(sims.T, sigma)
        loss = (loss + loss_t) / 2.0
        grad_on_sims = (grad_on_sims + grad_t.T) / 2.0
        dsigma = (dsigma + dsigma_t) / 2.0
    return loss, grad_on_sims, dsigma


def _hnml_terms(sims: np.ndarray, hard_mask: dict[int, tuple[int, ...]]):
    b = sims.shape[0]
    anchors = sorted(hard_mask)
    grad_on_sims = np.zeros_like(sims)
    if not anchors:
        return 0.0, grad_on_sims
    coeff = 1.0 / (b * len(anchors))
    total = 0.0
    for anchor in anchors:
        hard = hard_mask[anchor]
        hard_sims = sims[anchor, list(hard)]
        min_pos = int(np.argmin(hard_sims))  # first occurrence = lowest column
        floor = float(hard_sims[min_pos])
        normal = np.ones(b, dtype=bool)
        normal[anchor] = False
        normal[list(hard)] = False
        normal_idx = np.nonzero(normal)[0]
        diffs = sims[anchor, normal_idx] - floor
        active = diffs > 0.0  # subgradient 0 exactly at the hinge kink
        total += float(diffs[active].sum())
        grad_on_sims[anchor, normal_idx[active]] += coeff
        grad_on_sims[anchor, hard[min_pos]] -= coeff * int(active.sum())
    return total * coeff, grad_on_sims


def clip_loss(batch: LossBatch, config: LossConfig) -> LossValueAndGrads:
    """Contrastive loss over the batch, image-to-text direction by default.

    l = -(1/b) sum_i log( exp(s_ii/sigma) / sum_j exp(s_ij/sigma) ) with
    s_ij the cosine of image row i and text row j; log-sum-exp is stabilized
    by per-row max subtraction. symmetric=True averages both directions.
    """
    sims, iu, inorm, tu, tnorm = _similarity(batch)
    loss, grad_on_sims, dsigma = _clip_terms(sims, config.temperature, config.symmetric)
    gi, gt = _chain_to_embeddings(grad_on_sims, iu, inorm, tu, tnorm)
    return LossValueAndGrads(loss, gi, gt, dsigma)


def hnml(batch: LossBatch, config: LossConfig) -> LossValueAndGrads:
    """Hard-negative margin loss.

    Each anchor's normal negatives are hinged against the minimum similarity
    of its hard negatives: sum_j max(0, s_ij - min_{j'} s_ij'), scaled by
    1/b per anchor and averaged over anchors that have hard negatives.
    Anchors without hard negatives (or an empty mask) contribute nothing;
    with no anchors at all the loss and gradients are exactly zero.
    """
    sims, iu, inorm, tu, tnorm = _similarity(batch)
    loss, grad_on_sims = _hnml_terms(sims, batch.hard_mask)
    gi, gt = _chain_to_embeddings(grad_on_sims, iu, inorm, tu, tnorm)
    return LossValueAndGrads(loss, gi, gt, 0.0)


def finetune_loss(batch: LossBatch, config: LossConfig) -> LossValueAndGrads:
    """Contrastive loss plus margin_weight times the margin loss.

    Both terms share one similarity matrix; gradients combine linearly.
    """
    sims, iu, inorm, tu, tnorm = _similarity(batch)
    closs, cgrad, dsigma = _clip_terms(sims, config.temperature, config.symmetric)
    mloss, mgrad = _hnml_terms(sims, batch.hard_mask)
    gamma = config.margin_weight
    gi, gt = _chain_to_embeddings(cgrad + gamma * mgrad, iu, inorm, tu, tnorm)
    return LossValueAndGrads(closs + gamma * mloss, gi, gt, dsigma)


def loss_components(batch: LossBatch, config: LossConfig) -> tuple[float, float]:
    """(contrastive, margin) values of the combined loss, for tracing."""
    sims, *_ = _similarity(batch)
    closs, _, _ = _clip_terms(sims, config.temperature, config.symmetric)
    mloss, _ = _hnml_terms(sims, batch.hard_mask)
    return closs, mloss
