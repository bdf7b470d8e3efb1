"""Fixed-topology MLP autoencoder with hand-written reverse-mode gradients.

The encoder embedding is the latent vector; the decoder embedding is the
reconstruction. Everything downstream only needs ``forward`` for inference
and a :class:`GradientTape` for training.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, NumericalError, SimilarityError, StateError

logger = logging.getLogger(__name__)

ACTIVATIONS = ("relu", "linear")


@dataclass
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "linear"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ValueError("layer weight must be (out, in) and bias (out,)")

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


def _init_layer(rng, fan_in, fan_out, activation):
    bound = np.sqrt(1.0 / fan_in)
    w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
    b = rng.uniform(-bound, bound, size=fan_out)
    return Layer(w, b, activation)


@dataclass
class Autoencoder:
    encoder: list[Layer]
    decoder: list[Layer]

    def __post_init__(self):
        layers = self.encoder + self.decoder
        if not self.encoder or not self.decoder:
            raise ValueError("encoder and decoder need at least one layer each")
        for prev, nxt in zip(layers, layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise ValueError(f"layer shapes do not chain: {prev.out_dim} -> {nxt.in_dim}")
        if self.decoder[-1].out_dim != self.input_dim:
            raise ValueError("decoder output dim must equal input dim")

    @classmethod
    def create(cls, input_dim: int, hidden_dim: int = 128, latent_dim: int = 32, seed: int = 0):
        """Seeded uniform(+-sqrt(1/fan_in)) init; ReLU hidden layers, linear outputs."""
        if min(input_dim, hidden_dim, latent_dim) < 1:
            raise ValueError("dimensions must be positive")
        rng = np.random.default_rng(seed)
        encoder = [
            _init_layer(rng, input_dim, hidden_dim, "relu"),
            _init_layer(rng, hidden_dim, latent_dim, "linear"),
        ]
        decoder = [
            _init_layer(rng, latent_dim, hidden_dim, "relu"),
            _init_layer(rng, hidden_dim, input_dim, "linear"),
        ]
        return cls(encoder, decoder)

    @property
    def input_dim(self) -> int:
        return self.encoder[0].in_dim

    @property
    def latent_dim(self) -> int:
        return self.encoder[-1].out_dim

    def named_parameters(self):
        """Yield ``(path, array)`` in a fixed order; arrays are live references."""
        for part, layers in (("encoder", self.encoder), ("decoder", self.decoder)):
            for i, layer in enumerate(layers):
                yield f"{part}.{i}.weight", layer.weight
                yield f"{part}.{i}.bias", layer.bias

    def parameter(self, path: str) -> np.ndarray:
        part, idx, name = path.split(".")
        return getattr(getattr(self, part)[int(idx)], name)

    def copy(self) -> "Autoencoder":
        return copy.deepcopy(self)

    def num_parameters(self) -> int:
        return sum(p.size for _, p in self.named_parameters())

    def equals(self, other: "Autoencoder") -> bool:
        """Bit-exact parameter and topology equality."""
        mine = list(self.named_parameters())
        theirs = list(other.named_parameters())
        if [p for p, _ in mine] != [p for p, _ in theirs]:
            return False
        acts = [l.activation for l in self.encoder + self.decoder]
        if acts != [l.activation for l in other.encoder + other.decoder]:
            return False
        return all(a.shape == b.shape and a.tobytes() == b.tobytes() for (_, a), (_, b) in zip(mine, theirs))


@dataclass
class EmbeddingPair:
    encoder: np.ndarray  # (n, latent_dim)
    decoder: np.ndarray  # (n, input_dim)

    def component(self, name: str) -> np.ndarray:
        if name == "en":
            return self.encoder
        if name == "de":
            return self.decoder
        raise ValueError(f"unknown component {name!r}")


def _as_batch(model: Autoencoder, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise DataError(f"expected feature dimension {model.input_dim}, got shape {x.shape}")
    return x, single


def _run_layers(layers, h, cache=None):
    for layer in layers:
        if cache is not None:
            cache.append(h)
        z = h @ layer.weight.T + layer.bias
        if layer.activation == "relu":
            if cache is not None:
                cache.append(z)
            h = np.maximum(z, 0.0)
        else:
            if cache is not None:
                cache.append(None)
            h = z
    return h


def forward(model: Autoencoder, x) -> EmbeddingPair:
    """Encoder latent and decoder reconstruction for one sample or a batch."""
    x, single = _as_batch(model, x)
    latent = _run_layers(model.encoder, x)
    recon = _run_layers(model.decoder, latent)
    if single:
        return EmbeddingPair(latent[0], recon[0])
    return EmbeddingPair(latent, recon)


@dataclass
class GradientTape:
    """Records one forward pass and accumulates parameter gradients."""

    model: Autoencoder
    grads: dict = field(default_factory=dict)
    _cache: list | None = None

    def __post_init__(self):
        self.zero()

    def zero(self):
        self.grads = {path: np.zeros_like(p) for path, p in self.model.named_parameters()}
        self._cache = None

    def forward(self, x) -> EmbeddingPair:
        x, _ = _as_batch(self.model, x)
        enc_cache, dec_cache = [], []
        latent = _run_layers(self.model.encoder, x, enc_cache)
        recon = _run_layers(self.model.decoder, latent, dec_cache)
        self._cache = (enc_cache, dec_cache)
        return EmbeddingPair(latent, recon)

    def _backprop(self, part, layers, cache, upstream):
        g = upstream
        for i in reversed(range(len(layers))):
            layer = layers[i]
            h_in, z = cache[2 * i], cache[2 * i + 1]
            if layer.activation == "relu":
                g = g * (z > 0)
            self.grads[f"{part}.{i}.weight"] += g.T @ h_in
            self.grads[f"{part}.{i}.bias"] += g.sum(axis=0)
            g = g @ layer.weight
        return g

    def backward(self, d_encoder=None, d_decoder=None):
        """Accumulate dLoss/dtheta given dLoss/d(encoder emb) and dLoss/d(decoder emb)."""
        if self._cache is None:
            raise StateError("backward called without a recorded forward pass")
        enc_cache, dec_cache = self._cache
        n = enc_cache[0].shape[0]
        d_latent = np.zeros((n, self.model.latent_dim)) if d_encoder is None else np.array(d_encoder, dtype=np.float64)
        if d_decoder is not None:
            d_latent = d_latent + self._backprop("decoder", self.model.decoder, dec_cache, np.asarray(d_decoder, dtype=np.float64))
        self._backprop("encoder", self.model.encoder, enc_cache, d_latent)
        return self


class SGD:
    kind = "sgd"

    def __init__(self, learning_rate: float, clip_norm: float | None = None):
        if learning_rate < 0:
            raise ValueError("learning rate must be non-negative")
        if clip_norm is not None and clip_norm <= 0:
            raise ValueError("clip_norm must be positive")
        self.learning_rate = learning_rate
        self.clip_norm = clip_norm
        self.steps = 0

    def _update(self, path, param, grad):
        param -= self.learning_rate * grad

    def step(self, model: Autoencoder, tape: GradientTape) -> Autoencoder:
        for path, g in tape.grads.items():
            if not np.all(np.isfinite(g)):
                raise NumericalError(f"non-finite gradient in {path}")
        scale = 1.0
        if self.clip_norm is not None:
            # global L2 norm over every parameter, as one vector
            norm = float(np.sqrt(sum(np.sum(g * g) for g in tape.grads.values())))
            if norm > self.clip_norm:
                scale = self.clip_norm / norm
        self.steps += 1
        for path, param in model.named_parameters():
            g = tape.grads[path]
            self._update(path, param, g * scale if scale != 1.0 else g)
        return model


class Adam(SGD):
    kind = "adam"

    def __init__(self, learning_rate: float, beta1=0.9, beta2=0.999, eps=1e-8, clip_norm=None):
        super().__init__(learning_rate, clip_norm)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def _update(self, path, param, grad):
        m = self.m.setdefault(path, np.zeros_like(param))
        v = self.v.setdefault(path, np.zeros_like(param))
        m *= self.beta1
        m += (1 - self.beta1) * grad
        v *= self.beta2
        v += (1 - self.beta2) * grad * grad
        m_hat = m / (1 - self.beta1**self.steps)
        v_hat = v / (1 - self.beta2**self.steps)
        param -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)


def make_optimizer(kind: str, learning_rate: float):
    if kind == "adam":
        return Adam(learning_rate)
    if kind == "sgd":
        return SGD(learning_rate)
    raise ValueError(f"unknown optimizer {kind!r}")


# -- cosine similarity ---------------------------------------------------------


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise SimilarityError("cosine similarity of a zero-norm vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def nonzero_rows(emb: np.ndarray, what: str = "embedding") -> np.ndarray:
    """Boolean mask of rows with positive norm; logs a warning when any are dropped."""
    keep = np.linalg.norm(emb, axis=1) > 0
    if not keep.all():
        logger.warning("excluding %d zero-norm %s(s) from similarity", int((~keep).sum()), what)
    return keep


def normalize_rows(emb: np.ndarray):
    norms = np.linalg.norm(emb, axis=1)
    if np.any(norms == 0):
        raise SimilarityError("cosine similarity of a zero-norm vector")
    return emb / norms[:, None], norms


def cosine_matrix(emb: np.ndarray):
    """Pairwise cosine similarities ``S = Z Z^T`` with the cache needed for backprop."""
    z, norms = normalize_rows(emb)
    return z @ z.T, (z, norms)


def cosine_matrix_backward(d_sim: np.ndarray, cache) -> np.ndarray:
    """Map dLoss/dS back to dLoss/d(embeddings)."""
    z, norms = cache
    d_z = (d_sim + d_sim.T) @ z
    return (d_z - z * np.sum(d_z * z, axis=1, keepdims=True)) / norms[:, None]
