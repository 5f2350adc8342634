"""Dataset files, tokenization, vocabulary, and synthetic corpora.

File format: UTF-8 JSON lines, one example per line:

    {"sentence": "service was excellent",
     "quads": [{"at": "service", "ot": "excellent",
                "ac": "service#general", "sp": "positive"}]}

``"NULL"`` in ``at``/``ot`` marks an implicit element. Unknown fields are
rejected. Loaded corpora are immutable and safe to share across threads.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .codec import SSEP, AspectQuad, SENTIMENT_TO_WORD, SLOT_MARKERS, Template, TemplateKind, make_quad, render

IMPLICIT_FILE_MARKER = "NULL"

# Reserved tokens occupy the lowest ids, in exactly this order.
PAD, BOS, EOS, UNK = "<pad>", "<s>", "</s>", "<unk>"
RESERVED_TOKENS = (PAD, BOS, EOS, UNK, SSEP) + tuple(SLOT_MARKERS.values())

PAD_ID, BOS_ID, EOS_ID, UNK_ID = 0, 1, 2, 3


class CorpusError(ValueError):
    """A dataset file or generator request is invalid."""


@dataclass(frozen=True)
class Example:
    """One sentence with its gold quads."""

    sentence: tuple[str, ...]
    quads: tuple[AspectQuad, ...]

    @property
    def text(self) -> str:
        return " ".join(self.sentence)


@dataclass(frozen=True)
class CorpusSplit:
    train: tuple[Example, ...]
    dev: tuple[Example, ...]
    test: tuple[Example, ...]

    def counts(self) -> dict[str, dict[str, int]]:
        """Sentence and quad counts per part."""
        return {
            name: {"sentences": len(part), "quads": sum(len(e.quads) for e in part)}
            for name, part in (("train", self.train), ("dev", self.dev), ("test", self.test))
        }


_QUAD_FIELDS = {"at", "ot", "ac", "sp"}


def _quad_from_json(obj: object, where: str) -> AspectQuad:
    if not isinstance(obj, dict):
        raise CorpusError(f"{where}: quad must be an object, got {type(obj).__name__}")
    unknown = set(obj) - _QUAD_FIELDS
    if unknown:
        raise CorpusError(f"{where}: unknown quad fields {sorted(unknown)}")
    missing = _QUAD_FIELDS - set(obj)
    if missing:
        raise CorpusError(f"{where}: missing quad fields {sorted(missing)}")
    for name in _QUAD_FIELDS:
        if not isinstance(obj[name], str):
            raise CorpusError(f"{where}: field {name!r} must be a string")
    at = None if obj["at"] == IMPLICIT_FILE_MARKER else obj["at"]
    ot = None if obj["ot"] == IMPLICIT_FILE_MARKER else obj["ot"]
    try:
        return make_quad(at, ot, obj["ac"], obj["sp"])
    except ValueError as exc:
        raise CorpusError(f"{where}: {exc}") from exc


def _quad_to_json(quad: AspectQuad) -> dict[str, str]:
    return {
        "at": IMPLICIT_FILE_MARKER if quad.implicit_at else quad.at,
        "ot": IMPLICIT_FILE_MARKER if quad.implicit_ot else quad.ot,
        "ac": quad.ac,
        "sp": quad.sp,
    }


def load_examples(path: str | Path, require_quads: bool = True) -> list[Example]:
    """Load one JSONL part. ``require_quads=False`` admits prediction-output
    files whose quad lists may be empty."""
    examples = []
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            where = f"{path}:{line_no}"
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{where}: invalid JSON: {exc}") from exc
            if not isinstance(obj, dict):
                raise CorpusError(f"{where}: expected an object per line")
            unknown = set(obj) - {"sentence", "quads"}
            if unknown:
                raise CorpusError(f"{where}: unknown fields {sorted(unknown)}")
            if "sentence" not in obj or "quads" not in obj:
                raise CorpusError(f"{where}: need both 'sentence' and 'quads'")
            if not isinstance(obj["sentence"], str) or not obj["sentence"].split():
                raise CorpusError(f"{where}: sentence must be a non-empty string")
            if not isinstance(obj["quads"], list):
                raise CorpusError(f"{where}: quads must be a list")
            if require_quads and not obj["quads"]:
                raise CorpusError(f"{where}: training examples need at least one quad")
            quads = tuple(_quad_from_json(q, where) for q in obj["quads"])
            examples.append(Example(tuple(obj["sentence"].split()), quads))
    return examples


def save_examples(examples: list[Example] | tuple[Example, ...], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for example in examples:
            obj = {"sentence": example.text, "quads": [_quad_to_json(q) for q in example.quads]}
            handle.write(json.dumps(obj, ensure_ascii=False) + "\n")


def load_split(directory: str | Path, require_quads: bool = True) -> CorpusSplit:
    directory = Path(directory)
    return CorpusSplit(
        train=tuple(load_examples(directory / "train.jsonl", require_quads)),
        dev=tuple(load_examples(directory / "dev.jsonl", require_quads)),
        test=tuple(load_examples(directory / "test.jsonl", require_quads)),
    )


def save_split(split: CorpusSplit, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_examples(split.train, directory / "train.jsonl")
    save_examples(split.dev, directory / "dev.jsonl")
    save_examples(split.test, directory / "test.jsonl")


class Vocabulary:
    """Token <-> id bijection with fixed reserved ids.

    Lookup tries an exact match first (template markers are
    case-sensitive), then the lowercased form; everything else is <unk>.
    """

    def __init__(self, tokens: list[str] | tuple[str, ...]):
        if tuple(tokens[: len(RESERVED_TOKENS)]) != RESERVED_TOKENS:
            raise CorpusError("vocabulary must start with the reserved tokens")
        if len(set(tokens)) != len(tokens):
            raise CorpusError("vocabulary tokens must be unique")
        self.tokens = tuple(tokens)
        self._ids = {tok: i for i, tok in enumerate(tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def token_id(self, token: str) -> int:
        hit = self._ids.get(token)
        if hit is not None:
            return hit
        return self._ids.get(token.lower(), UNK_ID)

    def encode(self, text: str) -> list[int]:
        return [self.token_id(tok) for tok in text.split()]

    def decode(self, ids, skip_special: bool = True) -> str:
        words = []
        for i in ids:
            tok = self.tokens[int(i)]
            if skip_special and tok in (PAD, BOS, EOS):
                continue
            words.append(tok)
        return " ".join(words)

    def content_hash(self) -> str:
        return hashlib.sha256("\n".join(self.tokens).encode("utf-8")).hexdigest()


# Surface words every template can emit; always in the vocabulary.
TEMPLATE_SURFACE_WORDS = tuple(sorted(set(SENTIMENT_TO_WORD.values()) | {"it", "null", "because", "is", "(", ")", ","}))

_ALL_TEMPLATE_KINDS = (TemplateKind.paraphrase(), TemplateKind.special_symbols(), TemplateKind.gas())


def build_vocabulary(train: tuple[Example, ...] | list[Example]) -> Vocabulary:
    """Vocabulary over train sentences plus every word any template can
    produce for the train quads, so teacher-forced targets are never OOV."""
    words = set(TEMPLATE_SURFACE_WORDS)
    for example in train:
        words.update(tok.lower() for tok in example.sentence)
        for kind in _ALL_TEMPLATE_KINDS:
            for tok in render(list(example.quads), kind).text.split():
                if tok not in RESERVED_TOKENS:
                    words.add(tok.lower())
    return Vocabulary(RESERVED_TOKENS + tuple(sorted(words)))


# ---------------------------------------------------------------------------
# Synthetic corpus generator
# ---------------------------------------------------------------------------

# Aspect surfaces per category. Singular/plural pairs (food/foods) are
# deliberate: they are exactly the near-miss predictions the unlikelihood
# objective is meant to suppress.
DEFAULT_CATEGORY_ASPECTS: dict[str, tuple[str, ...]] = {
    "food#quality": (
        "food", "foods", "pizza", "pizzas", "burger", "burgers", "pasta", "sushi",
        "salad", "salads", "soup", "soups", "bread", "cake", "cakes", "steak",
        "steaks", "dessert", "desserts", "spring rolls", "noodles", "dumplings",
        "pancakes", "fries", "ribs", "tacos", "curry", "lasagna", "risotto",
        "sandwich", "sandwiches", "wings", "oysters", "salmon", "tuna", "bacon",
    ),
    "drinks#quality": (
        "coffee", "tea", "wine", "wines", "beer", "beers", "juice", "juices",
        "cocktail", "cocktails", "smoothie", "smoothies", "lemonade", "espresso",
        "latte", "cider",
    ),
    "service#general": (
        "service", "staff", "waiter", "waiters", "waitress", "bartender",
        "manager", "host", "hostess", "crew", "delivery", "reception", "chef",
        "kitchen", "cashier",
    ),
    "ambience#general": (
        "ambience", "atmosphere", "decor", "music", "lighting", "seating",
        "patio", "vibe", "interior", "terrace", "garden", "rooftop", "booth",
        "booths",
    ),
    "restaurant#prices": (
        "prices", "price", "bill", "cost", "portions", "deals", "menu", "specials",
    ),
    "location#general": (
        "location", "neighborhood", "parking", "view", "street", "entrance",
    ),
    "restaurant#general": (
        "place", "restaurant", "spot", "experience", "visit", "brunch", "dinner",
        "lunch", "breakfast", "buffet",
    ),
}

# Opinion surfaces per polarity, with semantically-near pairs
# (excellent/great, tasty/delicious, awful/terrible) kept adjacent.
DEFAULT_POLARITY_OPINIONS: dict[str, tuple[str, ...]] = {
    "positive": (
        "excellent", "great", "wonderful", "amazing", "good", "tasty",
        "delicious", "fantastic", "superb", "lovely", "fresh", "friendly",
        "attentive", "fast", "cozy", "charming", "generous", "fabulous",
        "terrific", "pleasant", "delightful", "outstanding", "crispy", "juicy",
    ),
    "neutral": (
        "ok", "okay", "average", "fine", "decent", "acceptable", "ordinary",
        "standard", "passable", "unremarkable", "reasonable", "plain",
    ),
    "negative": (
        "bad", "awful", "terrible", "horrible", "bland", "stale", "rude",
        "slow", "noisy", "cramped", "overpriced", "greasy", "soggy", "dirty",
        "dreadful", "disappointing", "cold", "salty", "burnt", "watery",
        "chewy", "tasteless",
    ),
}

# Category assigned to quads whose aspect term is implicit ("it was ...").
IMPLICIT_ASPECT_CATEGORY = "restaurant#general"


@dataclass(frozen=True)
class SyntheticSpec:
    """Sizes and grammar knobs for a generated corpus."""

    train: int
    dev: int
    test: int
    seed: int = 0
    max_clauses: int = 3
    implicit_aspect_rate: float = 0.1
    category_aspects: dict[str, tuple[str, ...]] = field(
        default_factory=lambda: dict(DEFAULT_CATEGORY_ASPECTS))
    polarity_opinions: dict[str, tuple[str, ...]] = field(
        default_factory=lambda: dict(DEFAULT_POLARITY_OPINIONS))

    def __post_init__(self):
        if min(self.train, self.dev, self.test) < 0 or self.train + self.dev + self.test <= 0:
            raise CorpusError("split sizes must be non-negative and sum to > 0")
        if not 0 <= self.implicit_aspect_rate < 1:
            raise CorpusError("implicit_aspect_rate must be in [0, 1)")


def generate_synthetic(spec: SyntheticSpec) -> CorpusSplit:
    """Generate a seeded corpus from the clause grammar
    ``"<aspect> was <opinion> [and ...]"``.

    Every gold quad is consistent with its surface text: the opinion term
    is the literal clause word, polarity follows the opinion inventory,
    and the category follows the aspect inventory. Sentences are unique
    across the whole corpus, so the splits are disjoint by text.
    """
    rng = np.random.default_rng(spec.seed)
    aspect_entries = [(surface, category)
                      for category, surfaces in sorted(spec.category_aspects.items())
                      for surface in surfaces]
    opinion_entries = [(surface, polarity)
                       for polarity, surfaces in sorted(spec.polarity_opinions.items())
                       for surface in surfaces]
    if not aspect_entries or not opinion_entries:
        raise CorpusError("aspect and opinion inventories must be non-empty")

    total = spec.train + spec.dev + spec.test
    clause_counts = np.arange(1, spec.max_clauses + 1)
    clause_weights = 1.0 / (2.0 ** np.arange(spec.max_clauses))
    clause_weights /= clause_weights.sum()

    seen: set[str] = set()
    examples: list[Example] = []
    attempts = 0
    max_attempts = 60 * total
    while len(examples) < total:
        attempts += 1
        if attempts > max_attempts:
            raise CorpusError(
                f"grammar inventory too small: produced {len(examples)} of "
                f"{total} distinct sentences after {max_attempts} attempts")
        n_clauses = int(rng.choice(clause_counts, p=clause_weights))
        aspect_idx = rng.choice(len(aspect_entries), size=n_clauses, replace=False)
        clauses = []
        quads = []
        for idx in aspect_idx:
            opinion, polarity = opinion_entries[int(rng.integers(len(opinion_entries)))]
            if rng.random() < spec.implicit_aspect_rate:
                clauses.append(f"it was {opinion}")
                quads.append(AspectQuad(None, opinion, IMPLICIT_ASPECT_CATEGORY, polarity))
            else:
                aspect, category = aspect_entries[int(idx)]
                clauses.append(f"{aspect} was {opinion}")
                quads.append(AspectQuad(aspect, opinion, category, polarity))
        text = " and ".join(clauses)
        if text in seen or len({(q.at, q.ot, q.ac, q.sp) for q in quads}) != len(quads):
            continue
        seen.add(text)
        examples.append(Example(tuple(text.split()), tuple(quads)))

    return CorpusSplit(
        train=tuple(examples[: spec.train]),
        dev=tuple(examples[spec.train: spec.train + spec.dev]),
        test=tuple(examples[spec.train + spec.dev:]),
    )
