"""Uncertainty-aware sample acquisition for the unlikelihood objective.

K stochastic vocabulary distributions per decoding step are drawn by
masking the last hidden state (inverted dropout) before the LM head; the
network below that point runs once. From each distribution the
ground-truth probability becomes a positive sample and, when the argmax
is wrong, the argmax probability becomes a negative sample. Top-k and
top-p selection over a single distribution are provided as alternative
negative-sampling strategies.

Everything here is stateless given an explicit numpy Generator, so
callers may parallelize over independently spawned substreams.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .model import ModelParams, lm_head


@dataclass(frozen=True)
class UncertaintyConfig:
    """K = number of stochastic forward passes; dropout = mask rate."""

    mc_samples: int = 5
    dropout: float = 0.4

    def __post_init__(self):
        if self.mc_samples < 1:
            raise ValueError("mc_samples must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1); 1 would zero the hidden state")


@dataclass(frozen=True)
class SampleSets:
    """Per-timestep samples: gold-token probabilities and wrong-argmax
    (probability, token id) pairs. Multisets; repeats are kept."""

    positives: tuple[float, ...]
    negatives: tuple[tuple[float, int], ...]


def _check_distribution(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("a distribution must be a non-empty vector")
    if p.min() < -1e-9 or p.max() > 1 + 1e-9 or abs(p.sum() - 1.0) > 1e-6:
        raise ValueError("probabilities must lie in [0, 1] and sum to 1")
    return p


def sample_masks(cfg: UncertaintyConfig, shape: tuple[int, ...],
                 rng: np.random.Generator) -> np.ndarray:
    """Binary masks; each entry is 1 with probability 1 - dropout."""
    return (rng.random(shape) >= cfg.dropout).astype(np.float64)


def apply_last_layer_dropout(h: Tensor, masks: np.ndarray, dropout: float) -> Tensor:
    """Mask hidden states and rescale by 1/(1-p) so pre-softmax scores
    keep their expectation (inverted dropout)."""
    return ad.mul(h, masks / (1.0 - dropout))


def mc_distributions(params: ModelParams, h_t: np.ndarray, cfg: UncertaintyConfig,
                     rng: np.random.Generator) -> np.ndarray:
    """K uncertainty-aware vocabulary distributions for one decoder state.

    The state is computed once by the caller; only the mask draw and the
    LM head run K times. Returns an array of shape (K, vocab)."""
    h_t = np.asarray(h_t, dtype=np.float64)
    masks = sample_masks(cfg, (cfg.mc_samples, h_t.shape[-1]), rng)
    scaled = masks / (1.0 - cfg.dropout)
    return np.stack([lm_head(params, h_t * row) for row in scaled])


def acquire_samples(dists, y_t: int) -> SampleSets:
    """Split K distributions into positive/negative samples.

    For each distribution: its gold-token probability joins the
    positives; if its argmax is not the gold token, the argmax
    probability (with the token) joins the negatives. Argmax ties break
    toward the lowest token id."""
    positives: list[float] = []
    negatives: list[tuple[float, int]] = []
    for dist in dists:
        dist = _check_distribution(dist)
        c = int(np.argmax(dist))
        if c != y_t:
            negatives.append((float(dist[c]), c))
        positives.append(float(dist[y_t]))
    return SampleSets(tuple(positives), tuple(negatives))


def acquire_samples_batched(p: Tensor, gold: np.ndarray) -> tuple[Tensor, Tensor, np.ndarray]:
    """Vectorized acquisition over a (K, B, T, V) probability tensor.

    Returns gold-token probabilities P (K, B, T), argmax probabilities
    N (K, B, T), and a boolean (K, B, T) marking where the argmax missed
    the gold token (i.e. where N is a real negative sample)."""
    k = p.shape[0]
    gold_b = np.broadcast_to(gold, (k,) + gold.shape)
    positives = ad.gather_last(p, gold_b)
    arg = p.data.argmax(axis=-1)
    return positives, ad.gather_last(p, arg), arg != gold_b


def topk_negatives(dist: np.ndarray, y_t: int, k: int) -> SampleSets:
    """Negatives = the k most probable tokens minus the gold token."""
    dist = _check_distribution(dist)
    if k < 1:
        raise ValueError("k must be >= 1")
    order = np.argsort(-dist, kind="stable")[:k]
    negatives = tuple((float(dist[c]), int(c)) for c in order if c != y_t)
    return SampleSets((float(dist[y_t]),), negatives)


def topp_negatives(dist: np.ndarray, y_t: int, p_cut: float) -> SampleSets:
    """Negatives = the minimal nucleus covering p_cut probability mass,
    minus the gold token. p_cut = 1 means every token but the gold one."""
    dist = _check_distribution(dist)
    if not 0.0 < p_cut <= 1.0:
        raise ValueError("p_cut must lie in (0, 1]")
    order = np.argsort(-dist, kind="stable")
    if p_cut >= 1.0:
        chosen = order
    else:
        cum = np.cumsum(dist[order])
        chosen = order[: int(np.searchsorted(cum, p_cut - 1e-12) + 1)]
    negatives = tuple((float(dist[c]), int(c)) for c in chosen if c != y_t)
    return SampleSets((float(dist[y_t]),), negatives)


def topk_negative_indices(p: np.ndarray, gold: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Batched top-k selection over (B, T, V) probabilities.

    Returns (indices (B, T, k), usable (B, T, k)); a slot is usable when
    its token is not the gold token."""
    if k < 1:
        raise ValueError("k must be >= 1")
    idx = np.argsort(-p, axis=-1, kind="stable")[..., :k]
    return idx, idx != gold[..., None]


def topp_negative_indices(p: np.ndarray, gold: np.ndarray, p_cut: float) -> tuple[np.ndarray, np.ndarray]:
    """Batched minimal-nucleus selection over (B, T, V) probabilities.

    Returns (indices (B, T, V) in descending-probability order, usable
    mask); a slot is usable when it falls inside the nucleus and is not
    the gold token."""
    if not 0.0 < p_cut <= 1.0:
        raise ValueError("p_cut must lie in (0, 1]")
    idx = np.argsort(-p, axis=-1, kind="stable")
    sorted_p = np.take_along_axis(p, idx, axis=-1)
    if p_cut >= 1.0:
        in_nucleus = np.ones_like(sorted_p, dtype=bool)
    else:
        before = np.cumsum(sorted_p, axis=-1) - sorted_p
        in_nucleus = before < p_cut - 1e-12
    return idx, in_nucleus & (idx != gold[..., None])
