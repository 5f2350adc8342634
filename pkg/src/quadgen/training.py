"""Training loop, configuration, ablation suite, and sampler diagnostics.

Per batch: one teacher-forced pass to the last decoder states, K masked
copies of those states through the LM head, sample acquisition, the
joint objective, and one clipped optimizer step. The dev split is scored
by greedy decoding after every epoch and the best-dev parameters are
kept. Everything is driven by three independent seeded streams (init,
shuffling, dropout), so a (seed, config, corpus) triple fixes the whole
trajectory.
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .codec import TemplateKind, render
from .corpus import BOS_ID, EOS_ID, PAD_ID, CorpusSplit, Example, Vocabulary, build_vocabulary
from .evaluation import ScoreReport, evaluate_model
from .model import (ModelConfig, ModelParams, forward_hidden, init_params, lm_head,
                    lm_logits, pad_batch, save_checkpoint)
from .objectives import LossBundle, MulConfig, joint_loss, me_core, mle_core, mul_core, ul_core
from .uncertainty import (UncertaintyConfig, acquire_samples, acquire_samples_batched,
                          apply_last_layer_dropout, mc_distributions, sample_masks,
                          topk_negative_indices, topk_negatives, topp_negative_indices,
                          topp_negatives)


class ConfigError(ValueError):
    """A configuration value or file is invalid."""


class TrainingDiverged(RuntimeError):
    """The joint loss became non-finite."""


NEGATIVE_STRATEGIES = ("mc", "topk", "topp")


@dataclass(frozen=True)
class TrainConfig:
    """Every knob of a training run; maps 1:1 onto config-file keys."""

    seed: int = 0
    template: str = "paraphrase"
    template_order: str = "AT,OT,AC,SP"
    mc_samples: int = 5
    dropout: float = 0.4
    alpha: float = 10.0
    margin: float = -0.3
    learning_rate: float = 3e-4
    epochs: int = 20
    warmup_epochs: int = 0
    batch_size: int = 16
    grad_clip: float = 1.0
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 2
    d_ff: int = 128
    max_decode_len: int = 64
    use_mul: bool = True
    use_me: bool = True
    use_mc: bool = True
    use_ul: bool = False
    negative_strategy: str = "mc"
    topk_k: int = 5
    topp_p: float = 0.9
    me_normalize: bool = False

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if not 0 <= self.warmup_epochs <= self.epochs:
            raise ConfigError("warmup_epochs must lie in [0, epochs]")
        if self.learning_rate <= 0 or self.grad_clip <= 0:
            raise ConfigError("learning_rate and grad_clip must be positive")
        if self.negative_strategy not in NEGATIVE_STRATEGIES:
            raise ConfigError(f"negative_strategy must be one of {NEGATIVE_STRATEGIES}")
        if self.negative_strategy != "mc" and self.use_mc:
            raise ConfigError("topk/topp negative strategies require use_mc = false")
        if self.topk_k < 1 or not 0.0 < self.topp_p <= 1.0:
            raise ConfigError("topk_k must be >= 1 and topp_p in (0, 1]")
        self.uncertainty_config()  # validates mc_samples/dropout
        self.mul_config()          # validates alpha
        self.template_kind()       # validates template name/order

    def template_kind(self) -> TemplateKind:
        order = tuple(part.strip().upper() for part in self.template_order.split(","))
        try:
            return TemplateKind.from_name(self.template, order)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def uncertainty_config(self) -> UncertaintyConfig:
        try:
            return UncertaintyConfig(self.mc_samples, self.dropout)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def mul_config(self) -> MulConfig:
        try:
            return MulConfig(self.alpha, self.margin)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(vocab_size=vocab_size, d_model=self.d_model,
                           n_layers=self.n_layers, n_heads=self.n_heads, d_ff=self.d_ff)


def baseline_of(cfg: TrainConfig) -> TrainConfig:
    """The plain likelihood-only counterpart of a configuration."""
    return replace(cfg, use_mul=False, use_me=False, use_mc=False, use_ul=False,
                   negative_strategy="mc", mc_samples=1, dropout=0.0)


# ---------------------------------------------------------------------------
# Flat key = value config files
# ---------------------------------------------------------------------------


def _coerce(raw: str, kind: type):
    if kind is bool:
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"expected a boolean, got {raw!r}")
    try:
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"expected {kind.__name__}, got {raw!r}") from exc


def config_overrides(base: TrainConfig, pairs: dict[str, str]) -> TrainConfig:
    """Apply string-valued overrides (file lines or CLI flags) to a config."""
    types = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
    py_types = {"int": int, "float": float, "str": str, "bool": bool}
    updates = {}
    for key, raw in pairs.items():
        if key not in types:
            raise ConfigError(f"unknown config key {key!r}")
        kind = types[key] if isinstance(types[key], type) else py_types[types[key]]
        updates[key] = _coerce(raw.strip(), kind)
    try:
        return replace(base, **updates)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def parse_config_text(text: str, base: TrainConfig | None = None) -> TrainConfig:
    pairs = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {line_no}: expected 'key = value', got {stripped!r}")
        key, _, value = stripped.partition("=")
        pairs[key.strip()] = value.strip()
    return config_overrides(base or TrainConfig(), pairs)


def load_config(path: str | Path) -> TrainConfig:
    return parse_config_text(Path(path).read_text(encoding="utf-8"))


def config_to_text(cfg: TrainConfig) -> str:
    lines = [f"{f.name} = {getattr(cfg, f.name)}" for f in dataclasses.fields(TrainConfig)]
    return "\n".join(lines) + "\n"


def save_config(cfg: TrainConfig, path: str | Path) -> None:
    Path(path).write_text(config_to_text(cfg), encoding="utf-8")


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------


class RmsProp:
    """Momentum-free adaptive step sizes from a running second moment."""

    def __init__(self, params: ModelParams, learning_rate: float,
                 decay: float = 0.99, eps: float = 1e-8):
        self.params = params
        self.learning_rate = learning_rate
        self.decay = decay
        self.eps = eps
        self.second_moment = {name: np.zeros_like(t.data) for name, t in params.tensors.items()}

    def step(self) -> None:
        for name, tensor in self.params.tensors.items():
            if tensor.grad is None:
                continue
            moment = self.second_moment[name]
            moment *= self.decay
            moment += (1.0 - self.decay) * tensor.grad * tensor.grad
            tensor.data -= self.learning_rate * tensor.grad / (np.sqrt(moment) + self.eps)


def clip_gradients(params: ModelParams, max_norm: float) -> float:
    total = 0.0
    for tensor in params.tensors.values():
        if tensor.grad is not None:
            total += float((tensor.grad * tensor.grad).sum())
    norm = float(np.sqrt(total))
    if norm > max_norm:
        scale = max_norm / norm
        for tensor in params.tensors.values():
            if tensor.grad is not None:
                tensor.grad *= scale
    return norm


# ---------------------------------------------------------------------------
# The loss pipeline for one padded batch
# ---------------------------------------------------------------------------


def encode_example(example: Example, vocab: Vocabulary, kind: TemplateKind):
    """(source ids, teacher-forcing input, gold labels) for one example."""
    target_ids = vocab.encode(render(list(example.quads), kind).text)
    return vocab.encode(example.text), [BOS_ID] + target_ids, target_ids + [EOS_ID]


def batch_loss(params: ModelParams, cfg: TrainConfig, batch: list[tuple],
               dropout_rng: np.random.Generator,
               masks: np.ndarray | None = None) -> LossBundle:
    """Forward pass and all active loss terms for one batch.

    ``masks`` overrides the dropout draw (used by gradient checks to hold
    the stochastic part fixed)."""
    xs, y_ins, golds = zip(*batch)
    x_pad = pad_batch(list(xs))
    y_pad = pad_batch(list(y_ins))
    gold_pad = pad_batch(list(golds))
    valid = gold_pad != PAD_ID
    n_batch, n_steps = gold_pad.shape
    d = cfg.d_model

    hidden = forward_hidden(params, x_pad, y_pad)  # (B, T, d)
    if cfg.use_mc:
        k = cfg.mc_samples
        if masks is None:
            masks = sample_masks(cfg.uncertainty_config(), (k, n_batch, n_steps, d), dropout_rng)
        stacked = apply_last_layer_dropout(hidden, masks, cfg.dropout)
    else:
        k = 1
        stacked = ad.reshape(hidden, (1, n_batch, n_steps, d))
    probs = ad.softmax(lm_logits(params, stacked))  # (K, B, T, V)

    l_mle = mle_core(probs, gold_pad, valid)
    l_me = me_core(probs, valid, cfg.me_normalize) if cfg.use_me else None

    l_mul = None
    if cfg.use_mul:
        mul_cfg = cfg.mul_config()
        if cfg.negative_strategy == "mc":
            positives, negatives, wrong = acquire_samples_batched(probs, gold_pad)
            pair_valid = (np.transpose(wrong, (1, 2, 0))[:, :, None, :]
                          & valid[:, :, None, None])
            l_mul = mul_core(positives, negatives, pair_valid, mul_cfg)
        else:
            flat = ad.reshape(probs, probs.shape[1:])  # (B, T, V); K is 1 here
            if cfg.negative_strategy == "topk":
                idx, usable = topk_negative_indices(flat.data, gold_pad, cfg.topk_k)
            else:
                idx, usable = topp_negative_indices(flat.data, gold_pad, cfg.topp_p)
            negatives = ad.transpose(ad.take_last(flat, idx), (2, 0, 1))
            positives = ad.reshape(ad.gather_last(flat, gold_pad), (1, n_batch, n_steps))
            pair_valid = (usable & valid[:, :, None])[:, :, None, :]
            l_mul = mul_core(positives, negatives, pair_valid, mul_cfg)

    l_ul = None
    if cfg.use_ul:
        plain = ad.softmax(lm_logits(params, hidden)) if cfg.use_mc else ad.reshape(
            probs, probs.shape[1:])
        arg = probs.data.argmax(axis=-1)  # (K, B, T)
        wrong = (arg != gold_pad[None]) & valid[None]
        neg_mask = np.zeros(plain.shape, dtype=bool)
        kk, bb, tt = np.nonzero(wrong)
        neg_mask[bb, tt, arg[kk, bb, tt]] = True
        l_ul = ul_core(plain, neg_mask)

    return joint_loss(l_mle, l_mul, l_me, l_ul)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

_TERM_KEYS = ("l_mle", "l_mul", "l_me", "l_ul", "l_joint")


@dataclass(frozen=True)
class TrainReport:
    epochs: tuple[dict, ...]
    best_epoch: int
    best_dev_f1: float
    wall_clock_seconds: float


def train(cfg: TrainConfig, split: CorpusSplit, metrics_path: str | Path | None = None,
          verbose: bool = False) -> tuple[ModelParams, Vocabulary, TrainReport]:
    """Train on the split's train part, score dev each epoch, return the
    best-dev parameters (ties keep the earliest epoch).

    The first ``warmup_epochs`` epochs run the plain likelihood objective
    only; the uncertainty-aware terms assume distributions that already
    track the data, so from-scratch runs enable them after a likelihood
    phase (mirroring, at desk scale, their use on a pretrained model)."""
    start_time = time.perf_counter()
    init_rng, shuffle_rng, dropout_rng = (np.random.default_rng(s)
                                          for s in np.random.SeedSequence(cfg.seed).spawn(3))
    vocab = build_vocabulary(split.train)
    kind = cfg.template_kind()
    encoded = [encode_example(e, vocab, kind) for e in split.train]
    params = init_params(cfg.model_config(len(vocab)), init_rng)
    optimizer = RmsProp(params, cfg.learning_rate)

    records: list[dict] = []
    best_params: ModelParams | None = None
    best_f1, best_epoch = -1.0, -1
    metrics_file = open(metrics_path, "w", encoding="utf-8") if metrics_path else None
    try:
        for epoch in range(cfg.epochs):
            epoch_cfg = baseline_of(cfg) if epoch < cfg.warmup_epochs else cfg
            order = shuffle_rng.permutation(len(encoded))
            term_sums = dict.fromkeys(_TERM_KEYS, 0.0)
            for batch_index, start in enumerate(range(0, len(order), cfg.batch_size)):
                chosen = order[start: start + cfg.batch_size]
                bundle = batch_loss(params, epoch_cfg, [encoded[i] for i in chosen], dropout_rng)
                terms = bundle.floats()
                if not np.isfinite(terms["l_joint"]):
                    raise TrainingDiverged(
                        f"non-finite loss at epoch {epoch} batch {batch_index} "
                        f"(examples {sorted(int(i) for i in chosen)}): {terms}")
                params.zero_grad()
                bundle.joint.backward()
                clip_gradients(params, cfg.grad_clip)
                optimizer.step()
                for key in _TERM_KEYS:
                    term_sums[key] += terms[key] * len(chosen)

            record = {"epoch": epoch}
            record.update({key: term_sums[key] / len(encoded) for key in _TERM_KEYS})
            if split.dev:
                dev = evaluate_model(params, vocab, split.dev, kind, cfg.max_decode_len)
                record.update({"dev_precision": dev.precision, "dev_recall": dev.recall,
                               "dev_f1": dev.f1})
            else:
                record.update({"dev_precision": 0.0, "dev_recall": 0.0, "dev_f1": 0.0})
            records.append(record)
            if metrics_file:
                metrics_file.write(json.dumps(record, sort_keys=True) + "\n")
            if verbose:
                print(f"epoch {epoch}: joint={record['l_joint']:.4f} dev_f1={record['dev_f1']:.4f}")
            if split.dev and record["dev_f1"] > best_f1:
                best_params, best_f1, best_epoch = params.copy(), record["dev_f1"], epoch
    finally:
        if metrics_file:
            metrics_file.close()

    if best_params is None:
        best_params, best_epoch, best_f1 = params.copy(), cfg.epochs - 1, records[-1]["dev_f1"]
    report = TrainReport(tuple(records), best_epoch, best_f1,
                         time.perf_counter() - start_time)
    return best_params, vocab, report


# ---------------------------------------------------------------------------
# Ablation suite
# ---------------------------------------------------------------------------

ABLATION_VARIANTS: tuple[tuple[str, dict], ...] = (
    ("full", {}),
    ("-me", {"use_me": False}),
    ("-mul", {"use_mul": False}),
    ("-mul+ul", {"use_mul": False, "use_ul": True}),
    ("-mul-me+ul", {"use_mul": False, "use_me": False, "use_ul": True}),
    ("-mc-dropout", {"use_mc": False, "mc_samples": 1, "dropout": 0.0}),
)


_VARIANT_SLUGS = {
    "full": "full",
    "-me": "no_me",
    "-mul": "no_mul",
    "-mul+ul": "no_mul_plus_ul",
    "-mul-me+ul": "no_mul_no_me_plus_ul",
    "-mc-dropout": "no_mc_dropout",
}


def run_ablation_suite(split: CorpusSplit, base_cfg: TrainConfig,
                       seeds: tuple[int, ...] = (0, 1, 2, 3, 4),
                       checkpoint_dir: str | Path | None = None,
                       verbose: bool = False) -> list[dict]:
    """Train the full objective and its five ablations over the seed set;
    report per-seed and mean test precision/recall/F1 per variant.

    A failing run is recorded under ``errors`` for its variant and the
    suite continues."""
    if not split.test:
        raise ValueError("ablation suite needs a test split")
    kind = base_cfg.template_kind()
    results = []
    for name, mods in ABLATION_VARIANTS:
        runs, errors = [], []
        for seed in seeds:
            cfg = replace(base_cfg, seed=seed, **mods)
            try:
                params, vocab, _ = train(cfg, split, verbose=False)
                report = evaluate_model(params, vocab, split.test, kind, cfg.max_decode_len)
            except Exception as exc:  # keep the suite alive per spec
                errors.append({"seed": seed, "error": f"{type(exc).__name__}: {exc}"})
                continue
            runs.append({"seed": seed, "precision": report.precision,
                         "recall": report.recall, "f1": report.f1})
            if checkpoint_dir is not None:
                path = Path(checkpoint_dir) / f"{_VARIANT_SLUGS[name]}_seed{seed}.npz"
                save_checkpoint(path, params, vocab,
                                extra={"variant": name, "config": dataclasses.asdict(cfg)})
            if verbose:
                print(f"{name} seed {seed}: f1={report.f1:.4f}")
        summary = {
            "variant": name,
            "runs": runs,
            "errors": errors,
            "mean_precision": float(np.mean([r["precision"] for r in runs])) if runs else 0.0,
            "mean_recall": float(np.mean([r["recall"] for r in runs])) if runs else 0.0,
            "mean_f1": float(np.mean([r["f1"] for r in runs])) if runs else 0.0,
        }
        results.append(summary)
    return results


# ---------------------------------------------------------------------------
# Negative-sample inspection (the diagnostic view behind confusion cases)
# ---------------------------------------------------------------------------


def inspect_negatives(params: ModelParams, vocab: Vocabulary, examples,
                      cfg: TrainConfig, limit: int | None = None) -> list[dict]:
    """Dump per-step positive/negative samples for teacher-forced examples.

    Uses the same acquisition the trainer would use under ``cfg``: K
    dropout-masked distributions when MC is on, the single plain
    distribution otherwise, or top-k/top-p selection."""
    kind = cfg.template_kind()
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(3)[2])
    ucfg = cfg.uncertainty_config()
    dump = []
    for example in examples[:limit]:
        x_ids, y_in, gold = encode_example(example, vocab, kind)
        with ad.no_grad():
            hidden = forward_hidden(params, pad_batch([x_ids]), pad_batch([y_in])).data[0]
        steps = []
        for position, gold_id in enumerate(gold):
            state = hidden[position]
            if cfg.negative_strategy == "topk":
                sets = topk_negatives(lm_head(params, state), gold_id, cfg.topk_k)
            elif cfg.negative_strategy == "topp":
                sets = topp_negatives(lm_head(params, state), gold_id, cfg.topp_p)
            elif cfg.use_mc:
                sets = acquire_samples(mc_distributions(params, state, ucfg, rng), gold_id)
            else:
                sets = acquire_samples([lm_head(params, state)], gold_id)
            steps.append({
                "position": position,
                "gold_token": vocab.tokens[gold_id],
                "positives": [round(p, 6) for p in sets.positives],
                "negatives": [[round(prob, 6), vocab.tokens[token]]
                              for prob, token in sets.negatives],
            })
        dump.append({"sentence": example.text, "steps": steps})
    return dump
