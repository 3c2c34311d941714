"""Deterministic surface-text analysis.

Tokenization, sentence splitting, a capitalization-based proper-noun
heuristic, the P1/P2 predicate proxies, and feature extraction for the
router and the sentence selector. Everything here is pure and
dependency-light by design: no tagger, no learned components.

Lexicons ship as plain-text config files (one term per line) under
``regime_router/data`` and can be overridden per call.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path

_WORD_RE = re.compile(r"\w+", re.UNICODE)
_TERMINALS = ".?!"

REGIME_Q_DOMINANT = "Q_dominant"
REGIME_B_DOMINANT = "B_dominant"
REGIME_UNCOVERED = "uncovered"

ROUTER_FEATURE_NAMES = (
    "q_comparison_word",
    "q_ynstart",
    "q_entity_count",
    "b_new_entity_count",
    "b_rel_frac",
)
SENTENCE_FEATURE_NAMES = (
    "new_entity_count",
    "has_relation_verb",
    "position_frac",
    "length_tokens",
    "ne_density",
)


def _load_terms(name: str, override: Path | str | None = None) -> frozenset[str]:
    if override is not None:
        text = Path(override).read_text(encoding="utf-8")
    else:
        text = resources.files("regime_router.data").joinpath(name).read_text(encoding="utf-8")
    return frozenset(line.strip().lower() for line in text.splitlines() if line.strip())


@dataclass(frozen=True)
class Lexicons:
    """The five term lists the heuristics consume, all lowercase."""

    comparison: frozenset[str]
    ynstart: frozenset[str]
    relation_verbs: frozenset[str]
    span_stopwords: frozenset[str]
    abbreviations: frozenset[str]

    @staticmethod
    def load(
        comparison: Path | str | None = None,
        ynstart: Path | str | None = None,
        relation_verbs: Path | str | None = None,
        span_stopwords: Path | str | None = None,
        abbreviations: Path | str | None = None,
    ) -> Lexicons:
        return Lexicons(
            comparison=_load_terms("comparison_words.txt", comparison),
            ynstart=_load_terms("ynstart_words.txt", ynstart),
            relation_verbs=_load_terms("relation_verbs.txt", relation_verbs),
            span_stopwords=_load_terms("span_stopwords.txt", span_stopwords),
            abbreviations=_load_terms("abbreviations.txt", abbreviations),
        )


@lru_cache(maxsize=1)
def default_lexicons() -> Lexicons:
    return Lexicons.load()


@dataclass(frozen=True)
class Sentence:
    text: str
    start: int
    end: int


@dataclass(frozen=True)
class Token:
    surface: str
    start: int
    end: int
    sentence_initial: bool


@dataclass(frozen=True)
class TokenizedText:
    tokens: tuple[Token, ...]


@dataclass(frozen=True)
class EntitySpan:
    """A run of capitalized tokens; token indices are inclusive."""

    first_token: int
    last_token: int
    surface: str

    @property
    def token_count(self) -> int:
        return self.last_token - self.first_token + 1


@dataclass(frozen=True)
class PredicateAssignment:
    p1: bool
    p2: bool
    regime: str


@dataclass(frozen=True)
class RouterFeatures:
    q_comparison_word: int
    q_ynstart: int
    q_entity_count: int
    b_new_entity_count: int
    b_rel_frac: float

    def as_vector(self) -> list[float]:
        return [
            float(self.q_comparison_word),
            float(self.q_ynstart),
            float(self.q_entity_count),
            float(self.b_new_entity_count),
            float(self.b_rel_frac),
        ]


@dataclass(frozen=True)
class SentenceFeatures:
    new_entity_count: int
    has_relation_verb: int
    position_frac: float
    length_tokens: int
    ne_density: float

    def as_vector(self) -> list[float]:
        return [
            float(self.new_entity_count),
            float(self.has_relation_verb),
            float(self.position_frac),
            float(self.length_tokens),
            float(self.ne_density),
        ]


def _abbreviation_before(text: str, dot_index: int, abbreviations: frozenset[str]) -> bool:
    # Collect the word (letters and internal dots) immediately left of the dot.
    j = dot_index
    while j > 0 and (text[j - 1].isalpha() or text[j - 1] == "."):
        j -= 1
    word = text[j:dot_index].rstrip(".")
    if not word:
        return False
    if len(word) == 1 and word.isalpha() and word.isupper():
        return True  # initials such as "J." in "J. Smith"
    return word.lower() in abbreviations


def split_sentences(text: str, lex: Lexicons | None = None) -> list[Sentence]:
    """Split on ``.?!`` followed by whitespace+capital or end of text.

    An abbreviation guard suppresses period boundaries after known
    abbreviations and single-letter initials. Returned spans cover every
    non-whitespace character exactly once; no sentence is empty.
    """
    lex = lex or default_lexicons()
    sentences: list[Sentence] = []
    n = len(text)

    def emit(seg_start: int, seg_end: int) -> None:
        lo, hi = seg_start, seg_end
        while lo < hi and text[lo].isspace():
            lo += 1
        while hi > lo and text[hi - 1].isspace():
            hi -= 1
        if lo < hi:
            sentences.append(Sentence(text=text[lo:hi], start=lo, end=hi))

    start = 0
    i = 0
    while i < n:
        if text[i] not in _TERMINALS:
            i += 1
            continue
        j = i
        while j + 1 < n and text[j + 1] in _TERMINALS:
            j += 1
        # Look past the punctuation run for whitespace then a capital.
        k = j + 1
        while k < n and text[k].isspace():
            k += 1
        if k >= n:
            boundary = True
        elif k == j + 1:
            boundary = False  # no whitespace between punctuation and next char
        elif not text[k].isupper():
            boundary = False
        elif text[i] == "." and i == j and _abbreviation_before(text, i, lex.abbreviations):
            boundary = False
        else:
            boundary = True
        if boundary:
            emit(start, j + 1)
            start = j + 1
        i = j + 1
    emit(start, n)
    return sentences


def tokenize(text: str, lex: Lexicons | None = None) -> TokenizedText:
    """Word tokenization with char spans and sentence-initial flags."""
    sentences = split_sentences(text, lex)
    starts = [s.start for s in sentences]
    tokens: list[Token] = []
    si = 0  # next sentence whose initial token is pending
    for m in _WORD_RE.finditer(text):
        initial = False
        while si < len(starts) and m.start() >= starts[si]:
            initial = True
            si += 1
        tokens.append(Token(surface=m.group(), start=m.start(), end=m.end(), sentence_initial=initial))
    return TokenizedText(tokens=tuple(tokens))


def _is_capitalized(surface: str) -> bool:
    return bool(surface) and surface[0].isupper()


def proper_noun_spans(t: TokenizedText, lex: Lexicons | None = None) -> list[EntitySpan]:
    """Maximal runs of capitalized tokens, filtered by the span rules.

    A sentence-initial capitalized token is excluded unless its run
    continues with another capitalized token or the same surface recurs
    capitalized at a non-initial position elsewhere. Stopword tokens
    ("The", "A", question words, ...) never start a span, though they may
    continue one.
    """
    lex = lex or default_lexicons()
    toks = t.tokens
    caps = [_is_capitalized(tok.surface) for tok in toks]
    mid_caps = {tok.surface for tok, c in zip(toks, caps) if c and not tok.sentence_initial}
    spans: list[EntitySpan] = []
    i = 0
    while i < len(toks):
        if not caps[i] or toks[i].surface.lower() in lex.span_stopwords:
            i += 1
            continue
        j = i
        while j + 1 < len(toks) and caps[j + 1]:
            j += 1
        lone_initial = toks[i].sentence_initial and j == i and toks[i].surface not in mid_caps
        if not lone_initial:
            spans.append(
                EntitySpan(
                    first_token=i,
                    last_token=j,
                    surface=" ".join(tok.surface for tok in toks[i : j + 1]),
                )
            )
        i = j + 1
    return spans


def span_surfaces(spans: list[EntitySpan]) -> set[str]:
    """Distinct normalized surfaces; the unit of entity counting."""
    return {normalize_text(s.surface) for s in spans}


def normalize_text(s: str) -> str:
    """Lowercase and collapse whitespace; the match normalization for P1/P2."""
    return " ".join(s.lower().split())


def p1_proxy(question: str, hop2_title: str) -> bool:
    """True iff the normalized hop-2 title is a substring of the question."""
    title = normalize_text(hop2_title)
    if not title:
        return False
    return title in normalize_text(question)


def p2_proxy(bridge_body: str, hop2_title: str, lex: Lexicons | None = None) -> bool:
    """True iff some single sentence of the bridge contains the title."""
    title = normalize_text(hop2_title)
    if not title:
        return False
    return any(title in normalize_text(s.text) for s in split_sentences(bridge_body, lex))


def assign_regime(p1: bool, p2: bool) -> PredicateAssignment:
    """Predicate-to-regime mapping: p1 wins; p2 qualifies; else uncovered."""
    if p1:
        regime = REGIME_Q_DOMINANT
    elif p2:
        regime = REGIME_B_DOMINANT
    else:
        regime = REGIME_UNCOVERED
    return PredicateAssignment(p1=p1, p2=p2, regime=regime)


def router_features(
    question: str,
    b_rel: str,
    bridge_body: str,
    lex: Lexicons | None = None,
) -> RouterFeatures:
    """The five router features, all computable from surface text alone."""
    lex = lex or default_lexicons()
    q_toks = tokenize(question, lex)
    lowered = [tok.surface.lower() for tok in q_toks.tokens]
    q_comparison = int(any(w in lex.comparison for w in lowered))
    q_ynstart = int(bool(lowered) and lowered[0] in lex.ynstart)
    q_surfaces = span_surfaces(proper_noun_spans(q_toks, lex))

    b_toks = tokenize(b_rel, lex)
    b_surfaces = span_surfaces(proper_noun_spans(b_toks, lex))
    new_count = len(b_surfaces - q_surfaces)

    brel_len = len(b_toks.tokens)
    body_len = len(tokenize(bridge_body, lex).tokens)
    frac = 0.0 if brel_len == 0 or body_len == 0 else min(1.0, brel_len / body_len)

    return RouterFeatures(
        q_comparison_word=q_comparison,
        q_ynstart=q_ynstart,
        q_entity_count=len(q_surfaces),
        b_new_entity_count=new_count,
        b_rel_frac=frac,
    )


def sentence_features(
    sent: str,
    question: str,
    index: int,
    total: int,
    lex: Lexicons | None = None,
) -> SentenceFeatures:
    """The five selector features for one sentence of a bridge passage."""
    if total < 1 or not (0 <= index < total):
        raise ValueError(f"index {index} out of range for total {total}")
    lex = lex or default_lexicons()
    s_toks = tokenize(sent, lex)
    spans = proper_noun_spans(s_toks, lex)
    s_surfaces = span_surfaces(spans)
    q_surfaces = span_surfaces(proper_noun_spans(tokenize(question, lex), lex))

    length = len(s_toks.tokens)
    covered = sum(sp.token_count for sp in spans)
    has_verb = int(any(tok.surface.lower() in lex.relation_verbs for tok in s_toks.tokens))
    return SentenceFeatures(
        new_entity_count=len(s_surfaces - q_surfaces),
        has_relation_verb=has_verb,
        position_frac=index / max(total - 1, 1),
        length_tokens=length,
        ne_density=0.0 if length == 0 else min(1.0, covered / length),
    )


def write_features_csv(path: Path | str, header: tuple[str, ...], rows: list[list[float]]) -> None:
    """Dump feature vectors as CSV under the fixed 5-column header."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            if len(row) != len(header):
                raise ValueError(f"row width {len(row)} != header width {len(header)}")
            writer.writerow(row)
