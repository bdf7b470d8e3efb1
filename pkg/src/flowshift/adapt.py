"""Teacher-student adaptation with a pairwise-similarity distillation term.

The frozen teacher is the pre-adaptation model. The student starts as an
exact copy and is fine-tuned with SGD on the explanation-selected samples,
minimising the contrastive loss on their pseudo-labels plus ``gamma`` times
the KL between teacher and student row-wise softmaxed cosine-similarity
distributions, for both encoder and decoder embeddings.

Cosine similarities live in [-1, 1], so a plain softmax over them is nearly
uniform and the distillation gradient is tiny next to the contrastive one.
``kd_temperature`` sharpens both distributions; ``kd_temperature=1`` gives
the plain softmax.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import log_softmax

from .contrastive import COMPONENTS, contrastive_loss_and_grad
from .errors import BatchSkip, DataError
from .nn import SGD, Autoencoder, GradientTape, cosine_matrix, cosine_matrix_backward, forward
from .pseudo_label import LabelerState, fit_labeler

logger = logging.getLogger(__name__)


@dataclass
class AdaptConfig:
    gamma: float = 0.1
    epochs: int = 5
    learning_rate: float = 3e-2
    temperature: float = 0.02
    anchor_batch: int = 64
    kd_temperature: float = 0.005
    clip_norm: float = 0.0  # 0 disables global gradient-norm clipping
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.gamma <= 1:
            raise ValueError("gamma must lie in [0, 1]")
        if self.anchor_batch < 2:
            raise ValueError("anchor_batch must be at least 2")
        if self.clip_norm < 0:
            raise ValueError("clip_norm must be non-negative")
        if self.kd_temperature <= 0:
            raise ValueError("kd_temperature must be positive")


@dataclass
class AdaptReport:
    epochs_run: int
    gamma: float
    contrastive_loss: list[float] = field(default_factory=list)
    kd_loss: list[float] = field(default_factory=list)
    skipped_contrastive_batches: int = 0
    n_old: int = 0
    n_new: int = 0
    kd_share: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def _masked_log_softmax(sim: np.ndarray) -> np.ndarray:
    logits = sim.copy()
    np.fill_diagonal(logits, -np.inf)
    return log_softmax(logits, axis=1)


def similarity_distribution(embeddings, anchor_index: int) -> np.ndarray:
    """Softmax over cosine similarities of ``anchor_index`` to every other sample (length n-1)."""
    emb = np.asarray(embeddings, dtype=np.float64)
    if len(emb) < 2:
        raise DataError("need at least two embeddings")
    sim, _ = cosine_matrix(emb)
    row = np.delete(sim[anchor_index], anchor_index)
    return np.exp(log_softmax(row))


def kd_loss_and_grad(teacher_emb, student_emb, temperature: float = 1.0):
    """Mean over anchors of KL(P_teacher(.|i) || P_student(.|i)) and its student gradient."""
    teacher_emb = np.asarray(teacher_emb, dtype=np.float64)
    student_emb = np.asarray(student_emb, dtype=np.float64)
    if teacher_emb.shape[0] != student_emb.shape[0]:
        raise ValueError("teacher and student embeddings must be index-aligned")
    n = len(student_emb)
    if n < 2:
        raise DataError("need at least two embeddings")
    s_teacher, _ = cosine_matrix(teacher_emb)
    s_student, cache = cosine_matrix(student_emb)
    log_p_t = _masked_log_softmax(s_teacher / temperature)
    log_p_s = _masked_log_softmax(s_student / temperature)
    off = ~np.eye(n, dtype=bool)
    # diagonal entries are excluded from both distributions
    log_p_t[~off] = 0.0
    log_p_s[~off] = 0.0
    p_t = np.where(off, np.exp(log_p_t), 0.0)
    p_s = np.where(off, np.exp(log_p_s), 0.0)
    loss = float(np.sum(p_t * (log_p_t - log_p_s)) / n)
    d_sim = (p_s - p_t) / (n * temperature)
    return loss, cosine_matrix_backward(d_sim, cache)


def kd_loss(teacher_emb, student_emb, temperature: float = 1.0) -> float:
    return kd_loss_and_grad(teacher_emb, student_emb, temperature)[0]


def _contrastive_or_skip(emb, labels, temperature):
    try:
        return contrastive_loss_and_grad(emb, labels, temperature)
    except BatchSkip:
        return None


def adaptation_backward(tape: GradientTape, teacher: Autoencoder, x, labels, config: AdaptConfig) -> dict:
    """Forward/backward of contrastive + gamma * KD on ``tape`` (the student).

    Returns per-term values; ``contrastive`` is None when the batch lacks a class.
    """
    student_pair = tape.forward(x)
    teacher_pair = forward(teacher, x)
    grads = {}
    contrastive = 0.0
    skipped = False
    kd = 0.0
    for c in COMPONENTS:
        emb = student_pair.component(c)
        g = np.zeros_like(emb)
        out = _contrastive_or_skip(emb, labels, config.temperature)
        if out is None:
            skipped = True
        else:
            contrastive += out[0]
            g += out[1]
        kd_value, kd_grad = kd_loss_and_grad(teacher_pair.component(c), emb, config.kd_temperature)
        kd += kd_value
        g += config.gamma * kd_grad
        grads[c] = g
    tape.backward(grads["en"], grads["de"])
    return {"contrastive": None if skipped else contrastive, "kd": kd}


def adaptation_loss(student: Autoencoder, teacher: Autoencoder, x, labels, config: AdaptConfig) -> float:
    tape = GradientTape(student)
    parts = adaptation_backward(tape, teacher, x, labels, config)
    return (parts["contrastive"] or 0.0) + config.gamma * parts["kd"]


def adapt(model: Autoencoder, x, pseudo_labels, config: AdaptConfig, origin=None, labeler: LabelerState | None = None):
    """Fine-tune a student copy of ``model``; returns ``(student, labeler, report)``.

    ``origin`` optionally tags each sample "old"/"new" for the report. The
    labeler is refit on the student's embeddings of the same samples using
    the supplied pseudo-labels; if that is impossible (a class with fewer
    than two samples) ``labeler`` is returned unchanged.
    """
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(pseudo_labels)
    if len(x) == 0:
        raise DataError("adaptation needs at least one selected sample")
    if len(labels) != len(x):
        raise DataError("pseudo-labels and samples differ in length")
    teacher = model.copy()
    student = model.copy()
    origin = np.asarray(origin if origin is not None else ["new"] * len(x))
    report = AdaptReport(
        epochs_run=config.epochs,
        gamma=config.gamma,
        n_old=int(np.sum(origin == "old")),
        n_new=int(np.sum(origin == "new")),
    )
    rng = np.random.default_rng(config.seed)
    opt = SGD(config.learning_rate, clip_norm=config.clip_norm or None)
    tape = GradientTape(student)
    skipped_warned = False
    for _ in range(config.epochs):
        order = rng.permutation(len(x))
        c_losses, kd_losses = [], []
        for start in range(0, len(order), config.anchor_batch):
            idx = order[start : start + config.anchor_batch]
            if len(idx) < 2:
                continue
            tape.zero()
            parts = adaptation_backward(tape, teacher, x[idx], labels[idx], config)
            if parts["contrastive"] is None:
                report.skipped_contrastive_batches += 1
                if not skipped_warned:
                    logger.warning("single-class adaptation batch: contrastive term skipped, KD kept")
                    skipped_warned = True
            else:
                c_losses.append(parts["contrastive"])
            kd_losses.append(parts["kd"])
            opt.step(student, tape)
        report.contrastive_loss.append(float(np.mean(c_losses)) if c_losses else float("nan"))
        report.kd_loss.append(float(np.mean(kd_losses)) if kd_losses else 0.0)
    if report.kd_loss:
        c_total = float(np.nansum(report.contrastive_loss))
        kd_total = config.gamma * float(np.sum(report.kd_loss))
        report.kd_share = kd_total / (c_total + kd_total) if c_total + kd_total > 0 else 0.0
    labeler = refit_labeler(student, x, labels, fallback=labeler)
    return student, labeler, report


def refit_labeler(model: Autoencoder, x, labels, fallback: LabelerState | None = None) -> LabelerState | None:
    try:
        return fit_labeler(model, x, labels)
    except DataError as exc:
        logger.warning("labeler refit failed (%s); keeping the previous labeler", exc)
        return fallback
