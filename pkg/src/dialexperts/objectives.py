"""Stage-1 objectives: contrastive (STC, VTC), matching (STM, VTM) and masked language modelling.

Contrastive similarity between two token sets is the maximum dot product over
all token pairs after projection to a normalised space.
"""
from __future__ import annotations

import logging
import math

import numpy as np

from .errors import ShapeError
from .numerics import (
    LayerNorm,
    Linear,
    Module,
    Parameter,
    Tensor,
    concat,
    cross_entropy,
    l2_normalize,
    masked_max,
)

log = logging.getLogger(__name__)

MLM_RATE = 0.15
TAU_INIT = 0.07


class ProjectionHead(Module):
    def __init__(self, dim: int, proj_dim: int, rng: np.random.Generator):
        self.linear = Linear(dim, proj_dim, rng)

    def forward(self, x: Tensor) -> Tensor:
        return l2_normalize(self.linear(x))


class Temperature(Module):
    """Learnable τ, stored as log τ so it stays positive."""

    def __init__(self, init: float = TAU_INIT):
        if init <= 0:
            raise ValueError("temperature must be positive")
        self.log_tau = Parameter(np.array(math.log(init)))

    @property
    def tau(self) -> float:
        return float(np.exp(self.log_tau.data))

    def forward(self) -> Tensor:
        return self.log_tau.exp()


def pairwise_similarity(a: Tensor, b: Tensor) -> Tensor:
    """Max dot product over all token pairs of two projected sets (n_a, d) and (n_b, d)."""
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ShapeError("pairwise_similarity needs non-empty token sets")
    return (a @ b.T).max()


def similarity_matrix(
    a: Tensor, b: Tensor, a_valid: np.ndarray | None = None, b_valid: np.ndarray | None = None
) -> Tensor:
    """s[i, j] = max over valid token pairs of a[i, m] · b[j, n] for batches (K, n_a, d), (K, n_b, d)."""
    k, na, d = a.shape
    kb, nb, _ = b.shape
    if k != kb:
        raise ShapeError(f"batch sizes differ: {a.shape} vs {b.shape}")
    a_valid = np.ones((k, na), bool) if a_valid is None else np.asarray(a_valid, bool)
    b_valid = np.ones((k, nb), bool) if b_valid is None else np.asarray(b_valid, bool)
    if not a_valid.any(axis=1).all() or not b_valid.any(axis=1).all():
        raise ShapeError("every sample needs at least one valid token")
    dots = a.reshape(k * na, d) @ b.reshape(k * nb, d).T
    dots = dots.reshape(k, na, k, nb).transpose(0, 2, 1, 3).reshape(k, k, na * nb)
    pair_valid = (a_valid[:, None, :, None] & b_valid[None, :, None, :]).reshape(k, k, na * nb)
    return masked_max(dots, pair_valid, axis=-1)


def symmetric_contrastive(sim: Tensor, temperature: Tensor | float) -> Tensor:
    """½ (CE(rows) + CE(columns)) of sim/τ against the diagonal."""
    k = sim.shape[0]
    if k < 2:
        raise ShapeError("contrastive loss needs a batch of at least 2")
    logits = sim / temperature
    targets = np.arange(k)
    return (cross_entropy(logits, targets) + cross_entropy(logits.T, targets)) * 0.5


def stc_loss(spa, tmp, head_spa, head_tmp, temperature, spa_valid=None, tmp_valid=None) -> Tensor:
    """Spatial-temporal contrastive loss over K videos; spa[i] and tmp[i] come from the same clip."""
    if spa.shape[0] < 2:
        raise ShapeError("contrastive loss needs a batch of at least 2")
    sim = similarity_matrix(head_spa(spa), head_tmp(tmp), spa_valid, tmp_valid)
    return symmetric_contrastive(sim, _tau(temperature))


def vtc_loss(vis, cap, head_vis, head_txt, temperature, vis_valid=None, cap_valid=None) -> Tensor:
    if vis.shape[0] < 2:
        raise ShapeError("contrastive loss needs a batch of at least 2")
    sim = similarity_matrix(head_vis(vis), head_txt(cap), vis_valid, cap_valid)
    return symmetric_contrastive(sim, _tau(temperature))


def _tau(temperature):
    return temperature() if isinstance(temperature, Temperature) else temperature


def sample_negatives(k: int, rng: np.random.Generator) -> np.ndarray:
    """Index j(i) != i for every i: a random cyclic derangement."""
    if k < 2:
        raise ShapeError("negative sampling needs a batch of at least 2")
    order = rng.permutation(k)
    partner = np.empty(k, dtype=np.int64)
    partner[order] = np.roll(order, -1)
    return partner


def matching_loss(pos_cls: Tensor, neg_cls: Tensor, head: Linear) -> Tensor:
    """Two-class cross-entropy; positives are label 1, negatives label 0."""
    if pos_cls.shape[0] + neg_cls.shape[0] < 2 or pos_cls.shape[0] < 1:
        raise ShapeError("matching loss needs at least one positive and one negative")
    logits = head(concat([pos_cls, neg_cls], axis=0))
    labels = np.concatenate([np.ones(pos_cls.shape[0], np.int64), np.zeros(neg_cls.shape[0], np.int64)])
    return cross_entropy(logits, labels)


def stm_loss(pos_cls: Tensor, neg_cls: Tensor, head: Linear) -> Tensor:
    return matching_loss(pos_cls, neg_cls, head)


def vtm_loss(pos_cls: Tensor, neg_cls: Tensor, head: Linear) -> Tensor:
    return matching_loss(pos_cls, neg_cls, head)


class MLMHead(Module):
    def __init__(self, dim: int, vocab_size: int, rng: np.random.Generator):
        self.norm = LayerNorm(dim)
        self.out = Linear(dim, vocab_size, rng, std=0.02)

    def forward(self, x: Tensor) -> Tensor:
        return self.out(self.norm(x))


def mask_tokens(
    ids: np.ndarray,
    valid: np.ndarray,
    rng: np.random.Generator,
    mask_id: int,
    vocab_size: int,
    first_regular: int,
    rate: float = MLM_RATE,
) -> tuple[np.ndarray, np.ndarray, int]:
    """Choose MLM positions and corrupt them 80/10/10 (mask / random token / keep).

    Every non-empty row gets at least one position. Returns the corrupted ids,
    the boolean position mask and the number of empty rows skipped.
    """
    ids = np.asarray(ids)
    valid = np.asarray(valid, bool)
    chosen = (rng.random(ids.shape) < rate) & valid
    skipped = 0
    for row in range(ids.shape[0]):
        if not valid[row].any():
            skipped += 1
            continue
        if not chosen[row].any():
            candidates = np.flatnonzero(valid[row])
            chosen[row, candidates[rng.integers(len(candidates))]] = True
    action = rng.random(ids.shape)
    corrupted = ids.copy()
    corrupted[chosen & (action < 0.8)] = mask_id
    swap = chosen & (action >= 0.8) & (action < 0.9)
    corrupted[swap] = rng.integers(first_regular, vocab_size, size=int(swap.sum()))
    if skipped:
        log.warning("MLM skipped %d empty caption(s)", skipped)
    return corrupted, chosen, skipped


def mlm_loss(states: Tensor, target_ids: np.ndarray, positions: np.ndarray, head: MLMHead) -> Tensor:
    """Cross-entropy over the vocabulary at the masked positions only."""
    positions = np.asarray(positions, bool)
    if not positions.any():
        raise ShapeError("no masked positions in batch")
    logits = head(states)
    return cross_entropy(logits, np.asarray(target_ids, np.int64), weights=positions.astype(logits.dtype))
