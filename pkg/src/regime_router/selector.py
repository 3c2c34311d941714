"""Relation-sentence selection.

Scores every sentence of a bridge passage with a linear model over
SentenceFeatures and returns the argmax (lowest index on ties). Oracle
labels come from title containment; training expands each annotated
passage into per-sentence binary rows.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import Passage
from .linear_model import (
    LinearModel,
    TrainConfig,
    fold_bounds,
    predict_proba,
    train,
    with_feature_names,
)
from .text_analysis import (
    SENTENCE_FEATURE_NAMES,
    Lexicons,
    default_lexicons,
    normalize_text,
    sentence_features,
    split_sentences,
)


class AnnotationError(ValueError):
    pass


@dataclass(frozen=True)
class SelectionResult:
    chosen: tuple[str, int, float] | None  # (sentence text, index, confidence)
    abstained: bool


@dataclass(frozen=True)
class AnnotatedBridge:
    bridge: Passage
    question: str
    gold_sentence_index: int


def oracle_label(bridge: Passage, hop2_title: str, lex: Lexicons | None = None) -> int | None:
    """Lowest index of a sentence containing the normalized title, if any."""
    title = normalize_text(hop2_title)
    if not title:
        return None
    for i, sent in enumerate(split_sentences(bridge.body, lex)):
        if title in normalize_text(sent.text):
            return i
    return None


def _expand(annotated: list[AnnotatedBridge], lex: Lexicons | None) -> tuple[np.ndarray, np.ndarray]:
    rows: list[list[float]] = []
    labels: list[float] = []
    for item in annotated:
        sents = split_sentences(item.bridge.body, lex)
        if not (0 <= item.gold_sentence_index < len(sents)):
            raise AnnotationError(
                f"gold sentence index {item.gold_sentence_index} out of range "
                f"for bridge {item.bridge.id!r} with {len(sents)} sentences"
            )
        for i, sent in enumerate(sents):
            feats = sentence_features(sent.text, item.question, i, len(sents), lex)
            rows.append(feats.as_vector())
            labels.append(1.0 if i == item.gold_sentence_index else 0.0)
    return np.asarray(rows, dtype=float), np.asarray(labels, dtype=float)


def train_selector(
    annotated: list[AnnotatedBridge],
    cfg: TrainConfig | None = None,
    lex: Lexicons | None = None,
) -> LinearModel:
    """Per-sentence binary expansion (gold = 1), then linear_model.train."""
    X, y = _expand(annotated, lex)
    if X.shape[0] < 2:
        raise AnnotationError("need at least 2 expanded sentence rows")
    model = train(X, y, cfg)
    return with_feature_names(model, SENTENCE_FEATURE_NAMES)


def select(
    bridge: Passage,
    question: str,
    model: LinearModel,
    abstain_threshold: float = 0.0,
    lex: Lexicons | None = None,
) -> SelectionResult:
    """Argmax sentence by predicted probability; lowest index wins ties."""
    lex = lex or default_lexicons()
    sents = split_sentences(bridge.body, lex)
    if not sents:
        return SelectionResult(chosen=None, abstained=True)
    best_i = 0
    best_p = -1.0
    for i, sent in enumerate(sents):
        feats = sentence_features(sent.text, question, i, len(sents), lex)
        p = predict_proba(model, feats.as_vector())
        if p > best_p:
            best_i, best_p = i, p
    if abstain_threshold > 0.0 and best_p < abstain_threshold:
        return SelectionResult(chosen=None, abstained=True)
    return SelectionResult(chosen=(sents[best_i].text, best_i, best_p), abstained=False)


def selector_accuracy(
    annotated: list[AnnotatedBridge],
    model: LinearModel | None = None,
    k: int = 5,
    cfg: TrainConfig | None = None,
    lex: Lexicons | None = None,
) -> float:
    """Fraction of passages whose argmax matches the annotated index.

    With an explicit model the given model is scored as-is. Without one,
    the estimate is out-of-fold: passages are split into contiguous folds
    and each is scored by a selector trained on the other folds.
    """
    if not annotated:
        raise AnnotationError("no annotated passages")
    if model is not None:
        hits = sum(_argmax_hit(item, model, lex) for item in annotated)
        return hits / len(annotated)
    n = len(annotated)
    if n < k:
        raise AnnotationError(f"need at least k={k} annotated passages, got {n}")
    hits = 0
    for lo, hi in fold_bounds(n, k):
        held_out = annotated[lo:hi]
        rest = annotated[:lo] + annotated[hi:]
        fold_model = train_selector(rest, cfg, lex)
        hits += sum(_argmax_hit(item, fold_model, lex) for item in held_out)
    return hits / n


def _argmax_hit(item: AnnotatedBridge, model: LinearModel, lex: Lexicons | None) -> int:
    result = select(item.bridge, item.question, model, lex=lex)
    if result.abstained:
        return 0
    return int(result.chosen[1] == item.gold_sentence_index)


def load_annotations(
    path: Path | str,
    passages: dict[str, Passage],
    questions: dict[str, str],
) -> list[AnnotatedBridge]:
    """Read annotations.jsonl rows {"bridge_id","question_id","gold_sentence_index"}."""
    items: list[AnnotatedBridge] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise AnnotationError(f"{Path(path).name}:{lineno}: invalid JSON ({exc.msg})") from exc
            bridge_id = str(obj.get("bridge_id", ""))
            question_id = str(obj.get("question_id", ""))
            if bridge_id not in passages:
                raise AnnotationError(f"{Path(path).name}:{lineno}: unknown bridge id {bridge_id!r}")
            if question_id not in questions:
                raise AnnotationError(f"{Path(path).name}:{lineno}: unknown question id {question_id!r}")
            idx = obj.get("gold_sentence_index")
            if not isinstance(idx, int) or idx < 0:
                raise AnnotationError(f"{Path(path).name}:{lineno}: bad gold_sentence_index")
            items.append(
                AnnotatedBridge(
                    bridge=passages[bridge_id],
                    question=questions[question_id],
                    gold_sentence_index=idx,
                )
            )
    return items
