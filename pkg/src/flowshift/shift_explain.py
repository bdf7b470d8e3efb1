"""Pick a small set of old and new samples whose posterior histogram matches the new window.

Masks over the pooled (old, new) samples are relaxed to ``sigmoid(logits)``,
optimised with Adam against

    L_acc + lambda1 * L_compute / n + lambda2 * L_det - ln(sum(m) / n_new)

and rounded. ``L_acc`` compares normalised histograms, so on its own it is
blind to the total selected mass; without the last (mass anchor) term every
mask decays to zero under the size penalty. With it the relaxed selection
settles near ``n / lambda1`` samples and ``L_acc`` shapes which ones.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit

from .errors import DataError, NumericalError
from .shift_detect import HIST_EPS, ScoreHistogram, bin_edges, bin_indices, build_histogram, histogram_kl, smoothed

logger = logging.getLogger(__name__)

CLAMP = 1e-7


@dataclass
class ExplainConfig:
    lambda1: float = 10.0
    lambda2: float = 1.0
    iterations: int = 500
    learning_rate: float = 0.2
    rounding_threshold: float = 0.5
    bins: int = 50
    init_jitter: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("lambda1 and lambda2 must be non-negative")
        if not 0 < self.rounding_threshold < 1:
            raise ValueError("rounding_threshold must lie in (0, 1)")
        if self.iterations < 1 or self.learning_rate <= 0:
            raise ValueError("iterations and learning_rate must be positive")


@dataclass
class ExplanationResult:
    selected_old: list[int]
    selected_new: list[int]
    losses: dict[str, float]  # rounded-mask values; consumers act on these
    relaxed_losses: dict[str, float]
    iterations_run: int
    config: dict = field(default_factory=dict)

    @property
    def n_selected(self) -> int:
        return len(self.selected_old) + len(self.selected_new)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExplanationResult":
        return cls(**d)


def weighted_histogram(posteriors, weights, bins: int = 50) -> ScoreHistogram:
    """Histogram where sample i adds ``weights[i]`` to its bin, normalised by the total weight."""
    posteriors = np.asarray(posteriors, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if posteriors.shape != weights.shape:
        raise DataError("posteriors and weights differ in length")
    if np.any(weights < 0) or np.any(weights > 1):
        raise DataError("weights must lie in [0, 1]")
    total = weights.sum()
    if total <= 0:
        raise DataError("degenerate mask: all weights are zero")
    mass = np.bincount(bin_indices(posteriors, bins), weights=weights, minlength=bins)
    return ScoreHistogram(bin_edges(bins), mass / total, int(posteriors.size))


def accuracy_loss(m_old, m_new, old_posteriors, new_posteriors, bins: int = 50) -> float:
    """KL(P_new || histogram of pooled samples weighted by the masks)."""
    target = build_histogram(new_posteriors, bins)
    recon = weighted_histogram(
        np.concatenate([old_posteriors, new_posteriors]),
        np.concatenate([np.asarray(m_old, dtype=np.float64), np.asarray(m_new, dtype=np.float64)]),
        bins,
    )
    return histogram_kl(target, recon)


def computation_loss(m_old, m_new) -> float:
    """L1 norm of the concatenated masks."""
    return float(np.sum(np.abs(m_old)) + np.sum(np.abs(m_new)))


def _binary_entropy(m):
    m = np.clip(m, CLAMP, 1 - CLAMP)
    return -m * np.log(m) - (1 - m) * np.log1p(-m)


def determinism_loss(m_old, m_new) -> float:
    """Mean binary entropy of the concatenated masks."""
    m = np.concatenate([np.ravel(m_old), np.ravel(m_new)]).astype(np.float64)
    return float(np.mean(_binary_entropy(m)))


class MaskObjective:
    """Relaxed objective over pooled mask logits with an analytic gradient."""

    def __init__(self, old_posteriors, new_posteriors, config: ExplainConfig):
        old = np.asarray(old_posteriors, dtype=np.float64)
        new = np.asarray(new_posteriors, dtype=np.float64)
        if old.size == 0 or new.size == 0:
            raise DataError("both windows must be non-empty")
        self.config = config
        self.n_old, self.n_new = old.size, new.size
        self.n = old.size + new.size
        self.bins = bin_indices(np.concatenate([old, new]), config.bins)
        counts = np.bincount(bin_indices(new, config.bins), minlength=config.bins)
        self.target = smoothed(counts / counts.sum())

    def terms(self, logits) -> dict[str, float]:
        m = expit(logits)
        B = self.config.bins
        w = np.bincount(self.bins, weights=m, minlength=B)
        total = w.sum()
        q = smoothed(w / total)
        return {
            "accuracy": float(np.sum(self.target * np.log(self.target / q))),
            "computation": float(m.sum()),
            "determinism": float(np.mean(_binary_entropy(m))),
            "mass_anchor": float(-np.log(total / self.n_new)),
        }

    def value(self, logits) -> float:
        t = self.terms(logits)
        c = self.config
        return t["accuracy"] + c.lambda1 * t["computation"] / self.n + c.lambda2 * t["determinism"] + t["mass_anchor"]

    def value_and_grad(self, logits):
        c = self.config
        B = c.bins
        m = expit(logits)
        w = np.bincount(self.bins, weights=m, minlength=B)
        total = w.sum()
        q_raw = w / total
        norm = 1.0 + B * HIST_EPS
        q = (q_raw + HIST_EPS) / norm
        g_q = -self.target / q / norm  # dL_acc / dq_raw
        d_acc = (g_q[self.bins] - np.sum(g_q * q_raw)) / total
        inside = (m > CLAMP) & (m < 1 - CLAMP)
        mc = np.clip(m, CLAMP, 1 - CLAMP)
        d_det = np.where(inside, np.log((1 - mc) / mc), 0.0) / self.n
        d_m = d_acc + c.lambda1 / self.n + c.lambda2 * d_det - 1.0 / total
        value = (
            float(np.sum(self.target * np.log(self.target / q)))
            + c.lambda1 * m.sum() / self.n
            + c.lambda2 * float(np.mean(_binary_entropy(m)))
            - float(np.log(total / self.n_new))
        )
        return value, d_m * m * (1 - m)


def _round(values, objective: MaskObjective, threshold: float) -> np.ndarray:
    selected = values >= threshold
    # every bin the new window occupies keeps at least its strongest candidate;
    # an empty bin would cost p * ln(p / eps) in the rounded KL
    new_bins = np.unique(objective.bins[objective.n_old :])
    covered = np.unique(objective.bins[selected])
    for b in np.setdiff1d(new_bins, covered):
        members = np.flatnonzero(objective.bins == b)
        selected[members[np.argmax(values[members])]] = True
    if not selected.any():
        selected[np.argmax(values)] = True
    return selected


def explain(old_posteriors, new_posteriors, config: ExplainConfig | None = None) -> ExplanationResult:
    config = config or ExplainConfig()
    objective = MaskObjective(old_posteriors, new_posteriors, config)
    rng = np.random.default_rng(config.seed)
    logits = config.init_jitter * rng.standard_normal(objective.n)
    m1 = np.zeros_like(logits)
    m2 = np.zeros_like(logits)
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    value = np.nan
    for t in range(1, config.iterations + 1):
        value, grad = objective.value_and_grad(logits)
        if not (np.isfinite(value) and np.all(np.isfinite(grad))):
            raise NumericalError(f"non-finite explanation objective at iteration {t}")
        m1 = beta1 * m1 + (1 - beta1) * grad
        m2 = beta2 * m2 + (1 - beta2) * grad * grad
        logits = logits - config.learning_rate * (m1 / (1 - beta1**t)) / (np.sqrt(m2 / (1 - beta2**t)) + eps)

    values = expit(logits)
    relaxed = objective.terms(logits)
    relaxed["objective"] = objective.value(logits)
    relaxed["mean_mask_old"] = float(values[: objective.n_old].mean())
    relaxed["mean_mask_new"] = float(values[objective.n_old :].mean())
    selected = _round(values, objective, config.rounding_threshold)
    sel_old, sel_new = selected[: objective.n_old], selected[objective.n_old :]
    mask = selected.astype(np.float64)
    rounded = {
        "accuracy": accuracy_loss(mask[: objective.n_old], mask[objective.n_old :], old_posteriors, new_posteriors, config.bins),
        "computation": computation_loss(mask[: objective.n_old], mask[objective.n_old :]),
        "determinism": determinism_loss(mask[: objective.n_old], mask[objective.n_old :]),
    }
    logger.info(
        "explanation selected %d old + %d new samples (rounded L_acc %.4f)",
        int(sel_old.sum()), int(sel_new.sum()), rounded["accuracy"],
    )
    return ExplanationResult(
        selected_old=np.flatnonzero(sel_old).tolist(),
        selected_new=np.flatnonzero(sel_new).tolist(),
        losses=rounded,
        relaxed_losses=relaxed,
        iterations_run=config.iterations,
        config=asdict(config),
    )
