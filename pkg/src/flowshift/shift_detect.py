"""Normality-shift detection on posterior probabilities.

Old and new windows are scored under the current labeler, turned into
posterior P(normal | score) values, binned on [0, 1], and compared with a
one-sided permutation test whose statistic is KL(new || old).
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import expit

from .errors import DataError
from .nn import Autoencoder
from .pseudo_label import LabelerState, component_scores

logger = logging.getLogger(__name__)

HIST_EPS = 1e-10


@dataclass
class ScoreHistogram:
    bin_edges: np.ndarray
    mass: np.ndarray
    count: int

    @property
    def bins(self) -> int:
        return len(self.mass)


@dataclass
class ShiftReport:
    kl_statistic: float
    p_value: float
    shifted: bool
    n_perm: int
    alpha: float
    bins: int
    n_old: int
    n_new: int
    seed: int

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ShiftReport":
        return cls(**d)


@dataclass
class DetectConfig:
    bins: int = 50
    n_perm: int = 1000
    alpha: float = 0.05
    seed: int = 0


def posterior_normal(scores, state: LabelerState):
    """Bayes posterior of the normal class under the selected component's Gaussians."""
    s = np.asarray(scores, dtype=np.float64)
    dists = state.selected_distributions
    p_n, p_a = state.priors
    log_n = dists.normal.logpdf(s) + np.log(p_n)
    log_a = dists.abnormal.logpdf(s) + np.log(p_a)
    with np.errstate(invalid="ignore"):
        post = expit(log_n - log_a)
    bad = ~np.isfinite(post)
    if np.any(bad):
        logger.warning("posterior undefined for %d score(s); using the normal prior", int(bad.sum()))
        post = np.where(bad, p_n, post)
    return float(post) if post.ndim == 0 else post


def window_posteriors(model: Autoencoder, x, state: LabelerState) -> np.ndarray:
    scores = component_scores(model, x, state)[state.selected]
    return posterior_normal(scores, state)


def bin_edges(bins: int) -> np.ndarray:
    return np.linspace(0.0, 1.0, bins + 1)


def bin_indices(values, bins: int) -> np.ndarray:
    """Equal-width bin index on [0, 1]; 1.0 lands in the last bin."""
    values = np.asarray(values, dtype=np.float64)
    if values.size and (values.min() < 0 or values.max() > 1 or not np.all(np.isfinite(values))):
        raise DataError("posterior values must lie in [0, 1]")
    return np.minimum((values * bins).astype(np.int64), bins - 1)


def build_histogram(posteriors, bins: int = 50) -> ScoreHistogram:
    if bins < 2:
        raise ValueError("need at least 2 bins")
    posteriors = np.asarray(posteriors, dtype=np.float64)
    if posteriors.size == 0:
        raise DataError("cannot build a histogram from an empty window")
    counts = np.bincount(bin_indices(posteriors, bins), minlength=bins)
    return ScoreHistogram(bin_edges(bins), counts / counts.sum(), int(posteriors.size))


def smoothed(mass, eps: float = HIST_EPS) -> np.ndarray:
    m = np.asarray(mass, dtype=np.float64) + eps
    return m / m.sum()


def kl_from_mass(p, q, eps: float = HIST_EPS) -> float:
    p, q = smoothed(p, eps), smoothed(q, eps)
    return float(np.sum(p * np.log(p / q)))


def histogram_kl(p: ScoreHistogram, q: ScoreHistogram) -> float:
    """KL(p || q) after additive smoothing of both histograms."""
    if p.bin_edges.shape != q.bin_edges.shape or not np.array_equal(p.bin_edges, q.bin_edges):
        raise ValueError("histograms must share bin edges")
    return kl_from_mass(p.mass, q.mass)


def permutation_test(old_posteriors, new_posteriors, bins: int = 50, n_perm: int = 1000, alpha: float = 0.05, seed: int = 0) -> ShiftReport:
    old = np.asarray(old_posteriors, dtype=np.float64)
    new = np.asarray(new_posteriors, dtype=np.float64)
    if old.size == 0 or new.size == 0:
        raise DataError("both windows must be non-empty")
    if n_perm < 100:
        raise ValueError("n_perm must be at least 100")
    pooled = bin_indices(np.concatenate([old, new]), bins)
    n_old = old.size

    def stat(idx):
        old_counts = np.bincount(idx[:n_old], minlength=bins)
        new_counts = np.bincount(idx[n_old:], minlength=bins)
        return kl_from_mass(new_counts / new_counts.sum(), old_counts / old_counts.sum())

    observed = stat(pooled)
    rng = np.random.default_rng(seed)
    exceed = sum(stat(rng.permutation(pooled)) >= observed for _ in range(n_perm))
    p_value = (1 + exceed) / (1 + n_perm)
    return ShiftReport(
        kl_statistic=observed,
        p_value=p_value,
        shifted=bool(p_value < alpha),
        n_perm=n_perm,
        alpha=alpha,
        bins=bins,
        n_old=int(n_old),
        n_new=int(new.size),
        seed=seed,
    )


def detect_shift(model: Autoencoder, state: LabelerState, x_old, x_new, config: DetectConfig | None = None) -> ShiftReport:
    config = config or DetectConfig()
    return permutation_test(
        window_posteriors(model, x_old, state),
        window_posteriors(model, x_new, state),
        bins=config.bins,
        n_perm=config.n_perm,
        alpha=config.alpha,
        seed=config.seed,
    )
