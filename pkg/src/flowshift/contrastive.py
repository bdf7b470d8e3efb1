"""InfoNCE training over normal anchors and abnormal negatives.

Every normal sample in a batch is an anchor, every other normal a positive,
and all batch abnormals the negatives. The encoder and decoder losses are
summed and minimised with Adam.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import BatchSkip, DataError
from .nn import (
    Adam,
    Autoencoder,
    GradientTape,
    cosine_matrix,
    cosine_matrix_backward,
    forward,
    nonzero_rows,
)

logger = logging.getLogger(__name__)

COMPONENTS = ("en", "de")


@dataclass
class ContrastiveConfig:
    temperature: float = 0.02
    epochs: int = 10
    learning_rate: float = 1e-3
    batch_size: int = 64
    batch_normals: int = 0  # 0 -> derived from batch_size and the class prior
    batch_abnormals: int = 0
    seed: int = 0

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if self.epochs < 0 or self.learning_rate < 0:
            raise ValueError("epochs and learning_rate must be non-negative")

    def batch_counts(self, n_normal: int, n_abnormal: int) -> tuple[int, int]:
        """Per-batch (normals, abnormals), matching the prior when not set explicitly."""
        if self.batch_normals and self.batch_abnormals:
            bn, ba = self.batch_normals, self.batch_abnormals
        else:
            prior = n_normal / (n_normal + n_abnormal)
            bn = int(round(self.batch_size * prior))
            bn = max(2, min(bn, self.batch_size - 1))
            ba = max(1, self.batch_size - bn)
        if bn < 2 or ba < 1:
            raise ValueError("need at least 2 normals and 1 abnormal per batch")
        return bn, ba


def infonce_pair_loss(anchor_sim: float, negative_sims, temperature: float) -> float:
    """-log softmax weight of the positive among {positive} + negatives."""
    negs = np.atleast_1d(np.asarray(negative_sims, dtype=np.float64))
    if negs.size == 0:
        raise BatchSkip("InfoNCE needs at least one negative")
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    logits = np.concatenate([[anchor_sim], negs]) / temperature
    return float(logsumexp(logits) - logits[0])


def contrastive_loss_and_grad(emb: np.ndarray, labels, temperature: float):
    """Average pair loss over ordered normal pairs, and its gradient w.r.t. ``emb``.

    Raises :class:`BatchSkip` when fewer than two normals or no abnormals remain
    after zero-norm rows are excluded.
    """
    emb = np.asarray(emb, dtype=np.float64)
    labels = np.asarray(labels)
    keep = nonzero_rows(emb)
    sub, sub_labels = emb[keep], labels[keep]
    normals = np.flatnonzero(sub_labels == 0)
    abnormals = np.flatnonzero(sub_labels == 1)
    if len(normals) < 2 or len(abnormals) < 1:
        raise BatchSkip(f"batch has {len(normals)} normals and {len(abnormals)} abnormals")

    sim, cache = cosine_matrix(sub)
    s_pos = sim[np.ix_(normals, normals)] / temperature
    s_neg = sim[np.ix_(normals, abnormals)] / temperature
    n_n = len(normals)
    n_pairs = n_n * (n_n - 1)
    off_diag = ~np.eye(n_n, dtype=bool)

    lse_neg = logsumexp(s_neg, axis=1)  # (n_n,)
    lse = np.logaddexp(s_pos, lse_neg[:, None])  # per (anchor, positive)
    loss = float(np.sum((lse - s_pos)[off_diag]) / n_pairs)

    scale = 1.0 / (temperature * n_pairs)
    d_pos = (np.exp(s_pos - lse) - 1.0) * off_diag * scale
    # each negative's softmax share summed over that anchor's positives
    share = np.sum(np.exp(lse_neg[:, None] - lse) * off_diag, axis=1)
    d_neg = np.exp(s_neg - lse_neg[:, None]) * share[:, None] * scale

    d_sim = np.zeros_like(sim)
    d_sim[np.ix_(normals, normals)] = d_pos
    d_sim[np.ix_(normals, abnormals)] = d_neg
    grad = np.zeros_like(emb)
    grad[keep] = cosine_matrix_backward(d_sim, cache)
    return loss, grad


def average_contrastive_loss(emb, labels, temperature: float) -> float:
    return contrastive_loss_and_grad(emb, labels, temperature)[0]


def total_loss(model: Autoencoder, x, labels, temperature: float) -> float:
    """Encoder plus decoder contrastive loss."""
    pair = forward(model, x)
    return sum(average_contrastive_loss(pair.component(c), labels, temperature) for c in COMPONENTS)


def total_loss_backward(tape: GradientTape, x, labels, temperature: float) -> dict[str, float]:
    """Forward + backward of the summed loss on ``tape``; returns per-component values."""
    pair = tape.forward(x)
    parts, grads = {}, {}
    for c in COMPONENTS:
        parts[c], grads[c] = contrastive_loss_and_grad(pair.component(c), labels, temperature)
    tape.backward(grads["en"], grads["de"])
    return parts


def stratified_batches(labels, bn: int, ba: int, rng) -> list[np.ndarray]:
    """Shuffle each class and cut fixed-composition batches; partial batches are dropped."""
    labels = np.asarray(labels)
    normals = rng.permutation(np.flatnonzero(labels == 0))
    abnormals = rng.permutation(np.flatnonzero(labels == 1))
    n_batches = min(len(normals) // bn, len(abnormals) // ba)
    return [
        np.concatenate([normals[b * bn : (b + 1) * bn], abnormals[b * ba : (b + 1) * ba]])
        for b in range(n_batches)
    ]


def train(model: Autoencoder, x, labels, config: ContrastiveConfig):
    """Train a copy of ``model``; returns ``(trained_model, per-epoch mean loss)``."""
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels)
    n_normal = int(np.sum(labels == 0))
    n_abnormal = int(np.sum(labels == 1))
    if n_normal < 2 or n_abnormal < 1:
        raise DataError("training data must contain both classes (>= 2 normals, >= 1 abnormal)")
    model = model.copy()
    if config.epochs == 0:
        return model, []
    bn, ba = config.batch_counts(n_normal, n_abnormal)
    rng = np.random.default_rng(config.seed)
    opt = Adam(config.learning_rate)
    tape = GradientTape(model)
    trace = []
    for epoch in range(config.epochs):
        batches = stratified_batches(labels, bn, ba, rng)
        if not batches:
            raise DataError(f"not enough samples for one batch of {bn} normals + {ba} abnormals")
        losses = []
        for idx in batches:
            tape.zero()
            parts = total_loss_backward(tape, x[idx], labels[idx], config.temperature)
            opt.step(model, tape)
            losses.append(parts["en"] + parts["de"])
        trace.append(float(np.mean(losses)))
        logger.debug("epoch %d contrastive loss %.6f", epoch, trace[-1])
    return model, trace
