"""Pseudo-labeling from similarity-to-prototype scores.

Each component (encoder latent, decoder reconstruction) gets a normal
prototype and two Gaussians over the cosine scores of its training samples.
The component whose Gaussians are further apart (KL of abnormal from normal)
decides every label.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError, SimilarityError
from .nn import Autoencoder, forward

logger = logging.getLogger(__name__)

SIGMA_FLOOR = 1e-6
_LOG_SQRT_2PI = 0.5 * math.log(2 * math.pi)


@dataclass(frozen=True)
class GaussianParams:
    mu: float
    sigma: float

    def __post_init__(self):
        if not (math.isfinite(self.mu) and math.isfinite(self.sigma)) or self.sigma < SIGMA_FLOOR:
            raise ValueError(f"invalid Gaussian ({self.mu}, {self.sigma})")

    def logpdf(self, s):
        z = (np.asarray(s, dtype=np.float64) - self.mu) / self.sigma
        return -0.5 * z * z - math.log(self.sigma) - _LOG_SQRT_2PI

    def pdf(self, s):
        return np.exp(self.logpdf(s))


def fit_gaussian(scores) -> GaussianParams:
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size < 2:
        raise DataError("need at least 2 scores to fit a Gaussian")
    mu = float(np.mean(scores))
    sigma = float(np.sqrt(np.mean((scores - mu) ** 2)))
    return GaussianParams(mu, max(sigma, SIGMA_FLOOR))


def fit_gaussians(scores, labels) -> tuple[GaussianParams, GaussianParams]:
    """Per-class maximum-likelihood fit (divisor N); returns (normal, abnormal).

    With labels known the two-component mixture likelihood separates into two
    independent single-Gaussian fits, so no EM is needed.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise DataError("scores and labels differ in length")
    return fit_gaussian(scores[labels == 0]), fit_gaussian(scores[labels == 1])


def gaussian_kl(a: GaussianParams, b: GaussianParams) -> float:
    """KL(a || b) for univariate Gaussians."""
    return (
        math.log(b.sigma / a.sigma)
        + (a.sigma**2 + (a.mu - b.mu) ** 2) / (2 * b.sigma**2)
        - 0.5
    )


@dataclass(frozen=True, eq=False)
class ComponentDistributions:
    prototype: np.ndarray
    normal: GaussianParams
    abnormal: GaussianParams

    @property
    def kl_score(self) -> float:
        return gaussian_kl(self.abnormal, self.normal)

    def log_likelihoods(self, scores):
        return self.normal.logpdf(scores), self.abnormal.logpdf(scores)


@dataclass(frozen=True, eq=False)
class LabelerState:
    encoder: ComponentDistributions
    decoder: ComponentDistributions
    prior_normal: float

    def __post_init__(self):
        if not 0 < self.prior_normal < 1:
            raise ValueError("class priors must lie strictly inside (0, 1)")

    @property
    def selected(self) -> str:
        # equal scores fall to the decoder ("otherwise" branch)
        return "en" if self.encoder.kl_score > self.decoder.kl_score else "de"

    @property
    def priors(self) -> tuple[float, float]:
        return self.prior_normal, 1.0 - self.prior_normal

    def component(self, name: str) -> ComponentDistributions:
        return {"en": self.encoder, "de": self.decoder}[name]

    @property
    def selected_distributions(self) -> ComponentDistributions:
        return self.component(self.selected)


def similarity_scores(emb, prototype) -> np.ndarray:
    """Cosine similarity of each row to the prototype; NaN for zero-norm rows."""
    emb = np.atleast_2d(np.asarray(emb, dtype=np.float64))
    p_norm = np.linalg.norm(prototype)
    if p_norm == 0:
        raise SimilarityError("zero-norm prototype")
    norms = np.linalg.norm(emb, axis=1)
    out = np.full(len(emb), np.nan)
    ok = norms > 0
    if not ok.all():
        logger.warning("%d zero-norm embeddings have no similarity score", int((~ok).sum()))
    out[ok] = np.clip(emb[ok] @ prototype / (norms[ok] * p_norm), -1.0, 1.0)
    return out


def fit_component(emb, labels) -> ComponentDistributions:
    emb = np.asarray(emb, dtype=np.float64)
    labels = np.asarray(labels)
    prototype = emb[labels == 0].mean(axis=0)
    if np.linalg.norm(prototype) == 0:
        raise SimilarityError("zero-norm normal prototype")
    scores = similarity_scores(emb, prototype)
    ok = np.isfinite(scores)
    normal, abnormal = fit_gaussians(scores[ok], labels[ok])
    return ComponentDistributions(prototype, normal, abnormal)


def fit_labeler_embeddings(enc, dec, labels) -> LabelerState:
    labels = np.asarray(labels)
    n_normal = int(np.sum(labels == 0))
    if n_normal < 2 or len(labels) - n_normal < 2:
        raise DataError("labeler fitting needs at least 2 samples of each class")
    return LabelerState(
        encoder=fit_component(enc, labels),
        decoder=fit_component(dec, labels),
        prior_normal=n_normal / len(labels),
    )


def fit_labeler(model: Autoencoder, x, labels) -> LabelerState:
    pair = forward(model, np.atleast_2d(x))
    return fit_labeler_embeddings(pair.encoder, pair.decoder, labels)


def component_label(s_test, dists: ComponentDistributions):
    """0 where the normal density strictly exceeds the abnormal one, else 1."""
    s = np.asarray(s_test, dtype=np.float64)
    if not np.all(np.isfinite(s)):
        raise DataError("non-finite similarity score")
    log_n, log_a = dists.log_likelihoods(s)
    out = np.where(log_n > log_a, 0, 1)
    return int(out) if out.ndim == 0 else out


def component_scores(model: Autoencoder, x, state: LabelerState) -> dict[str, np.ndarray]:
    pair = forward(model, np.atleast_2d(x))
    return {c: similarity_scores(pair.component(c), state.component(c).prototype) for c in ("en", "de")}


def _labels_or_abnormal(scores, dists):
    # a sample without a score (zero-norm embedding) gets the "otherwise" label
    out = np.ones(len(scores), dtype=int)
    ok = np.isfinite(scores)
    if ok.any():
        out[ok] = component_label(scores[ok], dists)
    return out


def vote_labels_from_scores(scores: dict[str, np.ndarray], state: LabelerState) -> np.ndarray:
    name = state.selected
    return _labels_or_abnormal(np.asarray(scores[name], dtype=np.float64), state.component(name))


def pseudo_labels(model: Autoencoder, x, state: LabelerState) -> np.ndarray:
    """Labels from the selected component only."""
    return vote_labels_from_scores(component_scores(model, x, state), state)


def pseudo_label(x, model: Autoencoder, state: LabelerState) -> int:
    return int(pseudo_labels(model, np.atleast_2d(x), state)[0])


def refine_pseudo_labels(model: Autoencoder, x, state: LabelerState, max_rounds: int = 10):
    """Self-consistent labels for a sample set.

    Starting from ``state``'s labels, refit the labeler on the samples' own
    pseudo-labels and relabel until the labels stop changing or
    ``max_rounds`` is reached. This re-centres prototypes and Gaussians on
    the shifted data while keeping every label machine-generated. Returns
    ``(labels, rounds_run)``; a round that would leave a class with fewer
    than two samples stops the loop with the last valid labels.
    """
    pair = forward(model, np.atleast_2d(x))
    scores = {c: similarity_scores(pair.component(c), state.component(c).prototype) for c in ("en", "de")}
    labels = vote_labels_from_scores(scores, state)
    rounds = 0
    for _ in range(max_rounds):
        try:
            current = fit_labeler_embeddings(pair.encoder, pair.decoder, labels)
        except DataError:
            break
        scores = {c: similarity_scores(pair.component(c), current.component(c).prototype) for c in ("en", "de")}
        new = vote_labels_from_scores(scores, current)
        rounds += 1
        if np.array_equal(new, labels):
            break
        labels = new
    return labels, rounds


def pointwise_labels_from_scores(scores: dict[str, np.ndarray], state: LabelerState) -> np.ndarray:
    """Per sample, trust whichever component has the larger |pdf_n - pdf_a| (ties -> decoder)."""
    gaps, labels = {}, {}
    for c in ("en", "de"):
        dists = state.component(c)
        s = np.nan_to_num(scores[c], nan=0.0)
        gaps[c] = np.abs(dists.normal.pdf(s) - dists.abnormal.pdf(s))
        labels[c] = _labels_or_abnormal(scores[c], dists)
    return np.where(gaps["en"] > gaps["de"], labels["en"], labels["de"])


def pointwise_labels(model: Autoencoder, x, state: LabelerState) -> np.ndarray:
    return pointwise_labels_from_scores(component_scores(model, x, state), state)


def pointwise_label(x, model: Autoencoder, state: LabelerState) -> int:
    return int(pointwise_labels(model, np.atleast_2d(x), state)[0])


# -- serialization helpers (the checkpoint stores these) ----------------------


def labeler_to_dict(state: LabelerState) -> tuple[dict, dict[str, np.ndarray]]:
    """Split into JSON-safe scalars and named arrays."""
    meta = {"prior_normal": state.prior_normal, "selected": state.selected}
    arrays = {}
    for c in ("en", "de"):
        d = state.component(c)
        meta[c] = {
            "normal": [d.normal.mu, d.normal.sigma],
            "abnormal": [d.abnormal.mu, d.abnormal.sigma],
            "kl_score": d.kl_score,
        }
        arrays[f"labeler.{c}.prototype"] = d.prototype
    return meta, arrays


def labeler_from_dict(meta: dict, arrays: dict[str, np.ndarray]) -> LabelerState:
    comps = {}
    for c in ("en", "de"):
        comps[c] = ComponentDistributions(
            prototype=arrays[f"labeler.{c}.prototype"],
            normal=GaussianParams(*meta[c]["normal"]),
            abnormal=GaussianParams(*meta[c]["abnormal"]),
        )
    return LabelerState(comps["en"], comps["de"], meta["prior_normal"])
