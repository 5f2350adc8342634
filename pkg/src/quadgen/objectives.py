"""The training objective stack.

Four token-level terms over per-step vocabulary distributions:

* likelihood (``mle_loss``): mean over the K stochastic distributions of
  the negative log probability of the gold token, summed over steps;
* marginalized unlikelihood (``mul_loss``): per step,
  ``log[1 + sum_{k,l} exp(alpha * (N_l - P_k + margin))]`` over all
  positive/negative sample pairs, pushing gold probabilities above
  wrong-argmax probabilities by a margin;
* entropy minimization (``me_loss``): the summed Shannon entropy of all
  K*n distributions, which re-sharpens distributions that the
  unlikelihood term disperses;
* plain unlikelihood (``ul_loss``): ``-sum log(1 - p[c])`` over chosen
  negative tokens, the ablation baseline the marginalized form replaces.

The joint objective is the unit-weight sum. Every log is floored at
1e-12; the pairwise term is computed in shifted (log-sum-exp) form so
large scale factors cannot overflow. Losses are built from autodiff
tensors, so gradients flow to whatever produced the probabilities; pure
functions throughout, safe for concurrent evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .uncertainty import SampleSets

LOG_EPS = 1e-12


@dataclass(frozen=True)
class MulConfig:
    """Scale and margin of the pairwise unlikelihood term."""

    alpha: float = 10.0
    margin: float = -0.3

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")


@dataclass(frozen=True)
class LossBundle:
    """Per-term scalars plus their unit-weight sum (all graph-carrying)."""

    mle: Tensor
    mul: Tensor
    me: Tensor
    ul: Tensor
    joint: Tensor

    def floats(self) -> dict[str, float]:
        return {
            "l_mle": self.mle.item(),
            "l_mul": self.mul.item(),
            "l_me": self.me.item(),
            "l_ul": self.ul.item(),
            "l_joint": self.joint.item(),
        }


def _as_prob_tensor(dists) -> Tensor:
    return dists if isinstance(dists, Tensor) else Tensor(np.asarray(dists, dtype=np.float64))


def _valid_mask(valid: np.ndarray | None, shape: tuple[int, int]) -> np.ndarray:
    if valid is None:
        return np.ones(shape, dtype=np.float64)
    return np.asarray(valid, dtype=np.float64)


# ---------------------------------------------------------------------------
# Batched cores: p has shape (K, B, T, V); gold/valid have shape (B, T).
# Per-sequence losses sum over steps; the batch is reduced by mean so the
# learning-rate meaning does not depend on batch size.
# ---------------------------------------------------------------------------


def mle_core(p: Tensor, gold: np.ndarray, valid: np.ndarray | None = None) -> Tensor:
    k, b = p.shape[0], p.shape[1]
    log_p = ad.log(ad.clamp_min(p, LOG_EPS))
    gold_lp = ad.gather_last(log_p, np.broadcast_to(gold, (k,) + gold.shape))
    masked = ad.mul(gold_lp, _valid_mask(valid, gold.shape))
    return ad.mul(masked.sum(), -1.0 / (k * b))


def me_core(p: Tensor, valid: np.ndarray | None = None,
            normalize_over_samples: bool = False) -> Tensor:
    k, b = p.shape[0], p.shape[1]
    log_p = ad.log(ad.clamp_min(p, LOG_EPS))
    plogp = ad.tsum(ad.mul(p, log_p), axis=-1)  # (K, B, T)
    masked = ad.mul(plogp, _valid_mask(valid, p.shape[1:3]))
    scale = -1.0 / (b * (k if normalize_over_samples else 1))
    return ad.mul(masked.sum(), scale)


def mul_core(positives: Tensor, negatives: Tensor, pair_valid: np.ndarray,
             cfg: MulConfig) -> Tensor:
    """Pairwise margin term from stacked samples.

    ``positives`` (Kp, B, T) and ``negatives`` (Kn, B, T) hold per-step
    sample probabilities; ``pair_valid`` (B, T, Kp, Kn) marks which
    (positive, negative) pairs exist. Steps with no valid pair (padding,
    or no wrong argmax) contribute exactly zero.
    """
    kp, b, t = positives.shape
    kn = negatives.shape[0]
    p_bt = ad.reshape(ad.transpose(positives, (1, 2, 0)), (b, t, kp, 1))
    n_bt = ad.reshape(ad.transpose(negatives, (1, 2, 0)), (b, t, 1, kn))
    z = ad.mul(ad.add(ad.sub(n_bt, p_bt), cfg.margin), cfg.alpha)
    # Shifted log-sum-exp with the leading 1 absorbed as exp(0 - shift).
    with np.errstate(invalid="ignore"):
        z_top = np.where(pair_valid, z.data, -np.inf).max(axis=(2, 3))
    shift = np.maximum(z_top, 0.0)
    terms = ad.mul(ad.exp(ad.sub(z, shift[:, :, None, None])), pair_valid.astype(np.float64))
    inner = ad.add(ad.tsum(terms, axis=(2, 3)), np.exp(-shift))
    per_step = ad.add(ad.log(inner), shift)
    return ad.mul(per_step.sum(), 1.0 / b)


def ul_core(p: Tensor, negative_mask: np.ndarray) -> Tensor:
    """p (B, T, V); negative_mask marks the suppressed tokens (with any
    step-validity already applied)."""
    b = p.shape[0]
    log_keep_out = ad.log(ad.clamp_min(ad.sub(1.0, p), LOG_EPS))
    masked = ad.mul(log_keep_out, negative_mask.astype(np.float64))
    return ad.mul(masked.sum(), -1.0 / b)


# ---------------------------------------------------------------------------
# Single-sequence wrappers (B = 1), matching the sampler's output types.
# ---------------------------------------------------------------------------


def mle_loss(dists, gold: Sequence[int]) -> Tensor:
    """dists: (K, T, V) probabilities; gold: T token ids."""
    p = _as_prob_tensor(dists)
    k, t, v = p.shape
    gold = np.asarray(gold, dtype=np.int64)
    if gold.shape != (t,):
        raise ValueError(f"expected {t} gold ids, got {gold.shape}")
    if gold.size and (gold.min() < 0 or gold.max() >= v):
        raise ValueError("gold id out of vocabulary range")
    return mle_core(ad.reshape(p, (k, 1, t, v)), gold[None])


def me_loss(dists, normalize_over_samples: bool = False) -> Tensor:
    p = _as_prob_tensor(dists)
    k, t, v = p.shape
    return me_core(ad.reshape(p, (k, 1, t, v)), normalize_over_samples=normalize_over_samples)


def mul_loss(samples: Sequence[SampleSets], cfg: MulConfig) -> Tensor:
    """Pairwise margin loss over per-step sample sets (one sequence)."""
    if not samples:
        raise ValueError("need at least one timestep of samples")
    t = len(samples)
    kp = max(len(s.positives) for s in samples)
    kn = max(len(s.negatives) for s in samples)
    if kp == 0:
        raise ValueError("every timestep needs at least one positive sample")
    if kn == 0:
        return Tensor(0.0)
    positives = np.zeros((kp, 1, t))
    negatives = np.zeros((kn, 1, t))
    pair_valid = np.zeros((1, t, kp, kn), dtype=bool)
    for step, sets in enumerate(samples):
        positives[: len(sets.positives), 0, step] = sets.positives
        negatives[: len(sets.negatives), 0, step] = [prob for prob, _ in sets.negatives]
        pair_valid[0, step, : len(sets.positives), : len(sets.negatives)] = True
    return mul_core(Tensor(positives), Tensor(negatives), pair_valid, cfg)


def ul_loss(dists, negatives: Sequence[Sequence[int]]) -> Tensor:
    """dists: (T, V) probabilities; negatives: per-step sets of token ids
    to suppress (never the gold id)."""
    p = _as_prob_tensor(dists)
    t, v = p.shape
    if len(negatives) != t:
        raise ValueError(f"expected {t} negative sets, got {len(negatives)}")
    mask = np.zeros((1, t, v), dtype=bool)
    for step, ids in enumerate(negatives):
        for token in ids:
            mask[0, step, token] = True
    return ul_core(ad.reshape(p, (1, t, v)), mask)


def joint_loss(mle: Tensor, mul: Tensor | None = None, me: Tensor | None = None,
               ul: Tensor | None = None) -> LossBundle:
    """Unit-weight combination; omitted terms are exact zeros."""
    zero = Tensor(0.0)
    mul = zero if mul is None else mul
    me = zero if me is None else me
    ul = zero if ul is None else ul
    joint = ad.add(ad.add(ad.add(mle, mul), me), ul)
    return LossBundle(mle=mle, mul=mul, me=me, ul=ul, joint=joint)
