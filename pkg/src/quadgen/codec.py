"""Template codec: aspect sentiment quads <-> templated target sequences.

A quad is (aspect term, opinion term, aspect category, sentiment polarity).
Quads are serialized into one of three target-template families so a
sequence-to-sequence model can generate them, and parsed back out of
arbitrary model output. Parsing never raises on bad input; every
unrecoverable chunk becomes a :class:`ParseDiagnostic`.

All functions here are pure and safe to call concurrently.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field

IMPLICIT = None  # sentinel for implicit aspect/opinion terms

SSEP = "[SSEP]"  # joins multiple quads in one target sequence

# Surface forms for implicit elements and sentiment polarity.
IMPLICIT_ASPECT_WORD = "it"
IMPLICIT_OPINION_WORD = "NULL"

SENTIMENT_TO_WORD = {"positive": "great", "neutral": "ok", "negative": "bad"}
WORD_TO_SENTIMENT = {w: s for s, w in SENTIMENT_TO_WORD.items()}

SLOT_MARKERS = {"AT": "[AT]", "OT": "[OT]", "AC": "[AC]", "SP": "[SP]"}
DEFAULT_SLOT_ORDER = ("AT", "OT", "AC", "SP")

_ALL_MARKERS = (SSEP,) + tuple(SLOT_MARKERS.values())


class CodecError(ValueError):
    """A quad cannot be projected onto a template surface."""


class Template(enum.Enum):
    PARAPHRASE = "paraphrase"
    SPECIAL_SYMBOLS = "special_symbols"
    GAS = "gas"


@dataclass(frozen=True)
class TemplateKind:
    """A template family plus, for SPECIAL_SYMBOLS, the slot order."""

    template: Template
    order: tuple[str, ...] = DEFAULT_SLOT_ORDER

    def __post_init__(self):
        if sorted(self.order) != sorted(DEFAULT_SLOT_ORDER):
            raise ValueError(f"order must be a permutation of {DEFAULT_SLOT_ORDER}, got {self.order}")
        if self.template is not Template.SPECIAL_SYMBOLS and self.order != DEFAULT_SLOT_ORDER:
            raise ValueError(f"{self.template.value} template has a fixed element order")

    @staticmethod
    def paraphrase() -> "TemplateKind":
        return TemplateKind(Template.PARAPHRASE)

    @staticmethod
    def special_symbols(order: tuple[str, ...] = DEFAULT_SLOT_ORDER) -> "TemplateKind":
        return TemplateKind(Template.SPECIAL_SYMBOLS, tuple(order))

    @staticmethod
    def gas() -> "TemplateKind":
        return TemplateKind(Template.GAS)

    @staticmethod
    def from_name(name: str, order: tuple[str, ...] | None = None) -> "TemplateKind":
        template = Template(name.lower())
        if order is not None and template is Template.SPECIAL_SYMBOLS:
            return TemplateKind(template, tuple(order))
        return TemplateKind(template)


def _normalize_ws(text: str) -> str:
    return " ".join(text.split())


@dataclass(frozen=True)
class AspectQuad:
    """One (at, ot, ac, sp) tuple. ``at``/``ot`` are None when implicit."""

    at: str | None
    ot: str | None
    ac: str
    sp: str

    def __post_init__(self):
        if self.sp not in SENTIMENT_TO_WORD:
            raise ValueError(f"sp must be one of {sorted(SENTIMENT_TO_WORD)}, got {self.sp!r}")
        for name, term in (("at", self.at), ("ot", self.ot)):
            if term is not None and not term.strip():
                raise ValueError(f"explicit {name} must be a non-empty token sequence")
        if self.ac.count("#") != 1:
            raise ValueError(f"ac must contain exactly one '#', got {self.ac!r}")
        entity, attribute = self.ac.split("#")
        if not entity or not attribute:
            raise ValueError(f"ac halves must be non-empty, got {self.ac!r}")
        # Single-token halves keep the '#'<->' ' projection invertible.
        if any(ch.isspace() for ch in self.ac):
            raise ValueError(f"ac must not contain whitespace, got {self.ac!r}")

    @property
    def implicit_at(self) -> bool:
        return self.at is None

    @property
    def implicit_ot(self) -> bool:
        return self.ot is None


def make_quad(at: str | None, ot: str | None, ac: str, sp: str) -> AspectQuad:
    """Build an AspectQuad, normalizing whitespace in explicit terms."""
    at = _normalize_ws(at) if at is not None else None
    ot = _normalize_ws(ot) if ot is not None else None
    return AspectQuad(at, ot, _normalize_ws(ac), sp)


@dataclass(frozen=True)
class QuadSurface:
    """Template-ready word forms of one quad."""

    x_at: str
    x_ot: str
    x_ac: str
    x_sp: str


@dataclass(frozen=True)
class TargetSequence:
    """A rendered or generated target: surface text plus optional token ids."""

    text: str
    tokens: tuple[int, ...] = ()


@dataclass(frozen=True)
class ParseDiagnostic:
    """One unparseable chunk: where it sat, what it said, what went wrong."""

    chunk_index: int
    chunk_text: str
    reason: str


def project(quad: AspectQuad, position: str = "") -> QuadSurface:
    """Map a quad to its surface values: implicit at -> "it", implicit
    ot -> "NULL", '#' in ac -> space, polarity -> {great, ok, bad}.

    Raises CodecError when the quad cannot round-trip through a template
    (explicit terms colliding with the implicit surface words, or terms
    containing template markers). ``position`` prefixes error messages.
    """
    where = f"{position}: " if position else ""
    if quad.implicit_at:
        x_at = IMPLICIT_ASPECT_WORD
    else:
        if quad.at.lower() == IMPLICIT_ASPECT_WORD:
            raise CodecError(f"{where}explicit at {quad.at!r} collides with the implicit-aspect surface word")
        x_at = quad.at
    if quad.implicit_ot:
        x_ot = IMPLICIT_OPINION_WORD
    else:
        if quad.ot.lower() == IMPLICIT_OPINION_WORD.lower():
            raise CodecError(f"{where}explicit ot {quad.ot!r} collides with the implicit-opinion surface word")
        x_ot = quad.ot
    for name, term in (("at", x_at), ("ot", x_ot)):
        if any(marker in term for marker in _ALL_MARKERS):
            raise CodecError(f"{where}{name} {term!r} contains a template marker")
    if "#" not in quad.ac:
        raise CodecError(f"{where}malformed ac {quad.ac!r}: missing '#'")
    x_ac = quad.ac.replace("#", " ")
    return QuadSurface(x_at, x_ot, x_ac, SENTIMENT_TO_WORD[quad.sp])


def _render_one(surface: QuadSurface, kind: TemplateKind) -> str:
    if kind.template is Template.PARAPHRASE:
        return f"{surface.x_ac} is {surface.x_sp} because {surface.x_at} is {surface.x_ot}"
    if kind.template is Template.SPECIAL_SYMBOLS:
        values = {"AT": surface.x_at, "OT": surface.x_ot, "AC": surface.x_ac, "SP": surface.x_sp}
        return " ".join(f"{SLOT_MARKERS[slot]} {values[slot]}" for slot in kind.order)
    # GAS tuple form; punctuation is space-separated so a word-level
    # tokenizer keeps '(' ',' ')' as standalone tokens.
    return f"( {surface.x_at} , {surface.x_ot} , {surface.x_ac} , {surface.x_sp} )"


def render(quads: list[AspectQuad], kind: TemplateKind) -> TargetSequence:
    """Serialize quads into one target sequence, joined by [SSEP].

    Input order is preserved; duplicates are kept.
    """
    if not quads:
        raise CodecError("render requires at least one quad")
    parts = [_render_one(project(q, position=f"quad {i}"), kind) for i, q in enumerate(quads)]
    return TargetSequence(text=f" {SSEP} ".join(parts))


def _unproject(x_at: str, x_ot: str, x_ac: str, x_sp: str) -> AspectQuad:
    """Invert the surface projection; raises ValueError on bad pieces."""
    if not x_at or not x_ot or not x_ac or not x_sp:
        raise ValueError("empty template slot")
    at = IMPLICIT if x_at.lower() == IMPLICIT_ASPECT_WORD else x_at
    ot = IMPLICIT if x_ot.lower() == IMPLICIT_OPINION_WORD.lower() else x_ot
    sp = WORD_TO_SENTIMENT.get(x_sp.lower())
    if sp is None:
        raise ValueError(f"unknown sentiment word {x_sp!r}")
    ac_words = x_ac.split(" ")
    if len(ac_words) != 2:
        raise ValueError(f"aspect category {x_ac!r} is not an 'entity attribute' pair")
    return AspectQuad(at, ot, f"{ac_words[0]}#{ac_words[1]}", sp)


def _parse_paraphrase(chunk: str) -> AspectQuad:
    # "<ac> is <sp> because <at> is <ot>": first " because " splits the
    # clauses, first " is " splits the head, last " is " splits the tail
    # (free-text opinions may themselves contain " is ").
    head, sep, tail = chunk.partition(" because ")
    if not sep:
        raise ValueError("missing ' because '")
    x_ac, sep, x_sp = head.partition(" is ")
    if not sep:
        raise ValueError("missing ' is ' in category clause")
    x_at, sep, x_ot = tail.rpartition(" is ")
    if not sep:
        raise ValueError("missing ' is ' in cause clause")
    return _unproject(x_at, x_ot, x_ac, x_sp)


def _parse_special_symbols(chunk: str) -> AspectQuad:
    # Marker order is not assumed; each of the four must occur exactly once.
    positions = []
    for slot, marker in SLOT_MARKERS.items():
        first = chunk.find(marker)
        if first < 0:
            raise ValueError(f"missing marker {marker}")
        if chunk.find(marker, first + 1) >= 0:
            raise ValueError(f"duplicated marker {marker}")
        positions.append((first, slot, marker))
    positions.sort()
    if positions[0][0] != 0 and chunk[: positions[0][0]].strip():
        raise ValueError("stray text before first marker")
    values = {}
    for (start, slot, marker), nxt in itertools.zip_longest(positions, positions[1:]):
        end = nxt[0] if nxt else len(chunk)
        values[slot] = chunk[start + len(marker):end].strip()
    return _unproject(values["AT"], values["OT"], values["AC"], values["SP"])


def _parse_gas(chunk: str) -> AspectQuad:
    if not (chunk.startswith("(") and chunk.endswith(")")):
        raise ValueError("not a parenthesized tuple")
    body = chunk[1:-1].strip()
    parts = [p.strip() for p in body.split(",")]
    if len(parts) != 4:
        raise ValueError(f"expected 4 comma-separated values, got {len(parts)}")
    return _unproject(*parts)


_PARSERS = {
    Template.PARAPHRASE: _parse_paraphrase,
    Template.SPECIAL_SYMBOLS: _parse_special_symbols,
    Template.GAS: _parse_gas,
}


def parse(seq: TargetSequence | str, kind: TemplateKind) -> tuple[list[AspectQuad], list[ParseDiagnostic]]:
    """Decode quads out of a target sequence. Total: never raises.

    Splits on [SSEP]; each chunk is parsed against the template. Chunks
    that do not fit (including empty chunks from doubled or trailing
    separators) are skipped and reported as diagnostics. Marker matching
    is case-sensitive; everything else is matched case-insensitively but
    preserved verbatim in the returned quads.
    """
    text = seq.text if isinstance(seq, TargetSequence) else seq
    quads: list[AspectQuad] = []
    diagnostics: list[ParseDiagnostic] = []
    parser = _PARSERS[kind.template]
    for i, raw_chunk in enumerate(text.split(SSEP)):
        chunk = _normalize_ws(raw_chunk)
        if not chunk:
            diagnostics.append(ParseDiagnostic(i, raw_chunk, "empty chunk"))
            continue
        try:
            quads.append(parser(chunk))
        except ValueError as exc:
            diagnostics.append(ParseDiagnostic(i, raw_chunk, str(exc)))
    return quads, diagnostics
