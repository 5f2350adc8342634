"""Exact-match quad scoring and the model-evaluation helpers built on it.

A predicted quad counts only if all four normalized elements equal a
gold quad of the same example. Elements are compared case-insensitively
with collapsed whitespace; implicit elements match only implicit
elements, never the literal surface words. Quads are deduplicated per
example (set semantics), and precision/recall are micro-averaged over
the corpus.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .codec import AspectQuad, TemplateKind, parse
from .corpus import Vocabulary
from .model import ModelParams, greedy_decode_batch

_IMPLICIT_KEY = "\x00implicit\x00"  # cannot collide with surface text


def _norm(text: str | None) -> str:
    if text is None:
        return _IMPLICIT_KEY
    return " ".join(text.split()).lower()


def quad_key(quad: AspectQuad) -> tuple[str, str, str, str]:
    return (_norm(quad.at), _norm(quad.ot), _norm(quad.ac), _norm(quad.sp))


@dataclass(frozen=True)
class ScoreReport:
    precision: float
    recall: float
    f1: float
    n_gold: int
    n_predicted: int
    n_matched: int
    per_example: tuple[dict, ...] = ()

    def as_dict(self, with_examples: bool = False) -> dict:
        out = {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "gold": self.n_gold,
            "predicted": self.n_predicted,
            "matched": self.n_matched,
        }
        if with_examples:
            out["examples"] = list(self.per_example)
        return out

    def table(self) -> str:
        lines = [
            f"{'precision':>10}  {'recall':>10}  {'f1':>10}  {'gold':>6}  {'pred':>6}  {'match':>6}",
            f"{self.precision:>10.4f}  {self.recall:>10.4f}  {self.f1:>10.4f}"
            f"  {self.n_gold:>6d}  {self.n_predicted:>6d}  {self.n_matched:>6d}",
        ]
        return "\n".join(lines)

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), sort_keys=True)


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def score(predicted: list[list[AspectQuad]], gold: list[list[AspectQuad]],
          unparseable: list[int] | None = None) -> ScoreReport:
    """Micro-averaged exact-quad precision/recall/F1 over aligned examples.

    ``unparseable`` optionally carries per-example counts of prediction
    chunks that failed to parse; they are reported in the diagnostics
    (they already lower recall by producing fewer predictions).
    """
    if len(predicted) != len(gold):
        raise ValueError(f"prediction/gold length mismatch: {len(predicted)} vs {len(gold)}")
    if unparseable is not None and len(unparseable) != len(gold):
        raise ValueError("unparseable counts must align with examples")
    total_gold = total_pred = total_match = 0
    per_example = []
    for i, (pred_quads, gold_quads) in enumerate(zip(predicted, gold)):
        pred_set = {quad_key(q) for q in pred_quads}
        gold_set = {quad_key(q) for q in gold_quads}
        matched = len(pred_set & gold_set)
        total_gold += len(gold_set)
        total_pred += len(pred_set)
        total_match += matched
        per_example.append({
            "index": i,
            "gold": len(gold_set),
            "predicted": len(pred_set),
            "matched": matched,
            "unparseable_chunks": unparseable[i] if unparseable is not None else 0,
        })
    precision = _ratio(total_match, total_pred)
    recall = _ratio(total_match, total_gold)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return ScoreReport(precision, recall, f1, total_gold, total_pred, total_match,
                       tuple(per_example))


def predict_quads(params: ModelParams, vocab: Vocabulary, examples,
                  kind: TemplateKind, max_len: int = 64,
                  batch_size: int = 64) -> tuple[list[list[AspectQuad]], list[int]]:
    """Greedy-decode every example and parse the outputs into quads.

    Returns the per-example quad lists and per-example counts of chunks
    that did not parse."""
    sources = [vocab.encode(e.text) for e in examples]
    predictions: list[list[AspectQuad]] = []
    bad_chunks: list[int] = []
    for start in range(0, len(sources), batch_size):
        batch = sources[start: start + batch_size]
        for ids in greedy_decode_batch(params, batch, max_len=max_len):
            quads, diagnostics = parse(vocab.decode(ids), kind)
            predictions.append(quads)
            bad_chunks.append(len(diagnostics))
    return predictions, bad_chunks


def evaluate_model(params: ModelParams, vocab: Vocabulary, examples,
                   kind: TemplateKind, max_len: int = 64) -> ScoreReport:
    predictions, bad_chunks = predict_quads(params, vocab, examples, kind, max_len)
    return score(predictions, [list(e.quads) for e in examples], unparseable=bad_chunks)


def nested_subset_indices(n_items: int, ratio: float, seed: int) -> list[int]:
    """Indices of the seeded ratio-subset; subsets are nested across
    ratios (a smaller ratio's subset is contained in a larger one's)."""
    import math

    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"ratios must lie in (0, 1], got {ratio}")
    size = math.ceil(ratio * n_items)
    if size < 1:
        raise ValueError(f"ratio {ratio} selects no training examples")
    order = np.random.default_rng(seed).permutation(n_items)
    return sorted(int(i) for i in order[:size])


def low_resource_run(split, ratios, base_cfg, subset_seed: int | None = None,
                     verbose: bool = False) -> list[dict]:
    """Train on nested fractions of the train split, with and without the
    unlikelihood objective, and report test F1 plus the delta per ratio."""
    from .corpus import CorpusSplit
    from .training import baseline_of, train  # local import: trainer depends on this module

    n_train = len(split.train)
    seed = base_cfg.seed if subset_seed is None else subset_seed
    chosen = {ratio: nested_subset_indices(n_train, ratio, seed) for ratio in ratios}
    kind = base_cfg.template_kind()
    rows = []
    for ratio in ratios:
        subset = tuple(split.train[i] for i in chosen[ratio])
        size = len(subset)
        sub_split = CorpusSplit(train=subset, dev=split.dev, test=split.test)
        scores = {}
        for label, cfg in (("baseline", baseline_of(base_cfg)), ("unlikelihood", base_cfg)):
            params, vocab, _ = train(cfg, sub_split)
            scores[label] = evaluate_model(params, vocab, split.test, kind,
                                           base_cfg.max_decode_len).f1
        row = {"ratio": ratio, "n_train": size, "baseline_f1": scores["baseline"],
               "unlikelihood_f1": scores["unlikelihood"],
               "delta": scores["unlikelihood"] - scores["baseline"]}
        rows.append(row)
        if verbose:
            print(f"ratio {ratio:.2f}: baseline={row['baseline_f1']:.4f} "
                  f"unlikelihood={row['unlikelihood_f1']:.4f} delta={row['delta']:+.4f}")
    return rows
