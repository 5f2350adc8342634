"""A small trainable transformer encoder-decoder with an LM head.

Pre-norm attention blocks, sinusoidal positions, a shared input embedding
table, and a separate (untied) LM head projection. There is no dropout
inside the network; the only stochastic point is the hidden-state masking
applied by the uncertainty sampler just before the LM head.

Forward passes on a fixed parameter set are deterministic, so evaluation
may run concurrently on parameter snapshots while training mutates its
own copy.
"""

from __future__ import annotations

import functools
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .codec import TargetSequence
from .corpus import BOS_ID, EOS_ID, PAD_ID, Vocabulary

CHECKPOINT_VERSION = "quadgen-checkpoint-1"
_MASKED = -1e9


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 2
    d_ff: int = 128
    max_len: int = 256

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")


class ModelParams:
    """Named parameter tensors plus the dimensions they imply."""

    def __init__(self, config: ModelConfig, tensors: dict[str, Tensor]):
        self.config = config
        self.tensors = tensors

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {
            name: Tensor(t.data.copy(), requires_grad=True) for name, t in self.tensors.items()
        })

    def assert_finite(self) -> None:
        for name, t in self.tensors.items():
            if not np.isfinite(t.data).all():
                raise FloatingPointError(f"non-finite values in parameter {name}")


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    std = np.sqrt(2.0 / (fan_in + fan_out))
    return rng.normal(0.0, std, size=(fan_in, fan_out))


def init_params(config: ModelConfig, rng: np.random.Generator) -> ModelParams:
    d, ff, vocab = config.d_model, config.d_ff, config.vocab_size
    tensors: dict[str, np.ndarray] = {"embedding": rng.normal(0.0, 0.5, size=(vocab, d))}

    def attn(prefix: str):
        for name in ("wq", "wk", "wv", "wo"):
            tensors[f"{prefix}.{name}"] = _glorot(rng, d, d)

    def block(prefix: str, n_norms: int):
        for i in range(1, n_norms + 1):
            tensors[f"{prefix}.ln{i}.gain"] = np.ones(d)
            tensors[f"{prefix}.ln{i}.bias"] = np.zeros(d)
        tensors[f"{prefix}.ffn.w1"] = _glorot(rng, d, ff)
        tensors[f"{prefix}.ffn.b1"] = np.zeros(ff)
        tensors[f"{prefix}.ffn.w2"] = _glorot(rng, ff, d)
        tensors[f"{prefix}.ffn.b2"] = np.zeros(d)

    for i in range(config.n_layers):
        attn(f"enc{i}.attn")
        block(f"enc{i}", 2)
        attn(f"dec{i}.self")
        attn(f"dec{i}.cross")
        block(f"dec{i}", 3)
    for name in ("enc_final", "dec_final"):
        tensors[f"{name}.gain"] = np.ones(d)
        tensors[f"{name}.bias"] = np.zeros(d)
    tensors["lm_head"] = _glorot(rng, d, vocab)
    return ModelParams(config, {k: Tensor(v, requires_grad=True) for k, v in tensors.items()})


@functools.lru_cache(maxsize=8)
def _positional_encoding(max_len: int, d_model: int) -> np.ndarray:
    pos = np.arange(max_len)[:, None]
    dim = np.arange(d_model // 2)[None, :]
    angle = pos / np.power(10000.0, 2.0 * dim / d_model)
    table = np.zeros((max_len, d_model))
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle)
    return table


def _check_ids(ids: np.ndarray, vocab_size: int) -> None:
    if ids.size and (ids.min() < 0 or ids.max() >= vocab_size):
        raise ValueError(f"token id out of range [0, {vocab_size})")


def _embed(params: ModelParams, ids: np.ndarray) -> Tensor:
    _check_ids(ids, params.config.vocab_size)
    pe = _positional_encoding(params.config.max_len, params.config.d_model)
    if ids.shape[-1] > params.config.max_len:
        raise ValueError(f"sequence length {ids.shape[-1]} exceeds max_len {params.config.max_len}")
    return ad.add(ad.embedding(params["embedding"], ids), pe[: ids.shape[-1]])


def _attention(params: ModelParams, prefix: str, queries: Tensor, keys_values: Tensor,
               mask: np.ndarray) -> Tensor:
    n_heads = params.config.n_heads
    batch, t_q, d = queries.shape
    t_k = keys_values.shape[1]
    d_head = d // n_heads

    def split(x: Tensor, t: int) -> Tensor:
        return ad.transpose(ad.reshape(x, (batch, t, n_heads, d_head)), (0, 2, 1, 3))

    q = split(ad.matmul(queries, params[f"{prefix}.wq"]), t_q)
    k = split(ad.matmul(keys_values, params[f"{prefix}.wk"]), t_k)
    v = split(ad.matmul(keys_values, params[f"{prefix}.wv"]), t_k)
    scores = ad.mul(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(d_head))
    weights = ad.softmax(ad.add(scores, mask))
    mixed = ad.transpose(ad.matmul(weights, v), (0, 2, 1, 3))
    return ad.matmul(ad.reshape(mixed, (batch, t_q, d)), params[f"{prefix}.wo"])


def _ffn(params: ModelParams, prefix: str, x: Tensor) -> Tensor:
    hidden = ad.relu(ad.add(ad.matmul(x, params[f"{prefix}.w1"]), params[f"{prefix}.b1"]))
    return ad.add(ad.matmul(hidden, params[f"{prefix}.w2"]), params[f"{prefix}.b2"])


def _ln(params: ModelParams, prefix: str, x: Tensor) -> Tensor:
    return ad.layer_norm(x, params[f"{prefix}.gain"], params[f"{prefix}.bias"])


def _key_padding_mask(ids: np.ndarray) -> np.ndarray:
    # (B, 1, 1, T): additive, masking <pad> keys
    return np.where(ids == PAD_ID, _MASKED, 0.0)[:, None, None, :]


def _causal_mask(t: int) -> np.ndarray:
    return np.where(np.tril(np.ones((t, t), dtype=bool)), 0.0, _MASKED)[None, None]


def encode(params: ModelParams, x_ids: np.ndarray) -> Tensor:
    """Bidirectional encoding of source ids (B, Ts) -> (B, Ts, d)."""
    h = _embed(params, x_ids)
    mask = _key_padding_mask(x_ids)
    for i in range(params.config.n_layers):
        normed = _ln(params, f"enc{i}.ln1", h)
        h = ad.add(h, _attention(params, f"enc{i}.attn", normed, normed, mask))
        h = ad.add(h, _ffn(params, f"enc{i}.ffn", _ln(params, f"enc{i}.ln2", h)))
    return _ln(params, "enc_final", h)


def decode_hidden(params: ModelParams, enc_h: Tensor, x_ids: np.ndarray,
                  y_ids: np.ndarray) -> Tensor:
    """Causal decoder states (B, Tt, d); position t sees y_ids[:, :t+1]."""
    h = _embed(params, y_ids)
    causal = _causal_mask(y_ids.shape[-1])
    cross = _key_padding_mask(x_ids)
    for i in range(params.config.n_layers):
        normed = _ln(params, f"dec{i}.ln1", h)
        h = ad.add(h, _attention(params, f"dec{i}.self", normed, normed, causal))
        h = ad.add(h, _attention(params, f"dec{i}.cross", _ln(params, f"dec{i}.ln2", h),
                                 enc_h, cross))
        h = ad.add(h, _ffn(params, f"dec{i}.ffn", _ln(params, f"dec{i}.ln3", h)))
    return _ln(params, "dec_final", h)


def forward_hidden(params: ModelParams, x_ids: np.ndarray, y_ids: np.ndarray) -> Tensor:
    """Teacher-forced decoder states for a padded batch."""
    return decode_hidden(params, encode(params, x_ids), x_ids, y_ids)


def encode_decode(params: ModelParams, x: list[int], y: list[int]) -> Tensor:
    """Single-sequence teacher-forced pass returning (len(y), d) states.

    ``y`` must start with <s>; the state at position t is computed from x
    and y[:t+1] only, and scores the token that should follow y[t].
    """
    if not x or not y:
        raise ValueError("x and y must be non-empty")
    if y[0] != BOS_ID:
        raise ValueError("y must begin with <s> for teacher forcing")
    h = forward_hidden(params, np.asarray([x]), np.asarray([y]))
    return ad.reshape(h, (len(y), params.config.d_model))


def lm_logits(params: ModelParams, h: Tensor) -> Tensor:
    """Affine vocabulary scores of hidden states (..., d) -> (..., V)."""
    return ad.matmul(h, params["lm_head"])


def lm_head(params: ModelParams, h: np.ndarray) -> np.ndarray:
    """Vocabulary distribution softmax(W^T h) for one hidden vector."""
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 1 or h.shape[0] != params.config.d_model:
        raise ValueError(f"expected a length-{params.config.d_model} vector")
    if not np.isfinite(h).all():
        raise ValueError("hidden vector must be finite")
    scores = h @ params["lm_head"].data
    scores -= scores.max()
    e = np.exp(scores)
    return e / e.sum()


def pad_batch(sequences: list[list[int]], pad_id: int = PAD_ID) -> np.ndarray:
    width = max(len(s) for s in sequences)
    out = np.full((len(sequences), width), pad_id, dtype=np.int64)
    for i, seq in enumerate(sequences):
        out[i, : len(seq)] = seq
    return out


def greedy_decode_batch(params: ModelParams, sources: list[list[int]],
                        max_len: int = 64) -> list[list[int]]:
    """Batched argmax decoding; per row, stops at the first </s>.

    Dropout-free and deterministic; argmax ties resolve to the lowest
    token id. Returns generated ids without <s>/</s>.
    """
    with ad.no_grad():
        x_ids = pad_batch(sources)
        enc_h = encode(params, x_ids)
        batch = len(sources)
        y = np.full((batch, 1), BOS_ID, dtype=np.int64)
        finished = np.zeros(batch, dtype=bool)
        outputs: list[list[int]] = [[] for _ in range(batch)]
        for _ in range(max_len):
            h = decode_hidden(params, enc_h, x_ids, y)
            scores = h.data[:, -1, :] @ params["lm_head"].data
            nxt = scores.argmax(axis=-1)
            for b in range(batch):
                if finished[b]:
                    continue
                if nxt[b] == EOS_ID:
                    finished[b] = True
                else:
                    outputs[b].append(int(nxt[b]))
            if finished.all():
                break
            y = np.concatenate([y, np.where(finished, PAD_ID, nxt)[:, None]], axis=1)
    return outputs


def greedy_decode(params: ModelParams, vocab: Vocabulary, x: list[int],
                  max_len: int = 64) -> TargetSequence:
    ids = greedy_decode_batch(params, [x], max_len=max_len)[0]
    return TargetSequence(text=vocab.decode(ids), tokens=tuple(ids))


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(path: str | Path, params: ModelParams, vocab: Vocabulary,
                    extra: dict | None = None) -> None:
    """Write a versioned .npz with dims, vocabulary (tokens + hash), all
    parameter tensors, and any extra JSON-serializable metadata."""
    meta = {
        "version": CHECKPOINT_VERSION,
        "config": asdict(params.config),
        "vocab_hash": vocab.content_hash(),
        "extra": extra or {},
    }
    arrays = {f"param/{name}": t.data for name, t in params.tensors.items()}
    np.savez(path, meta=np.array(json.dumps(meta, sort_keys=True)),
             vocab=np.array(vocab.tokens), **arrays)


def load_checkpoint(path: str | Path) -> tuple[ModelParams, Vocabulary, dict]:
    with np.load(path, allow_pickle=False) as archive:
        meta = json.loads(str(archive["meta"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')!r}")
        vocab = Vocabulary([str(t) for t in archive["vocab"]])
        if vocab.content_hash() != meta["vocab_hash"]:
            raise ValueError("checkpoint vocabulary hash mismatch")
        config = ModelConfig(**meta["config"])
        tensors = {}
        for key in archive.files:
            if key.startswith("param/"):
                tensors[key[len("param/"):]] = Tensor(archive[key], requires_grad=True)
    params = ModelParams(config, tensors)
    params.assert_finite()
    return params, vocab, meta["extra"]
