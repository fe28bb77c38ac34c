"""Distractor generation, similarity-based selection, and probe assembly.

Candidates come from three strategies: antonyms of the gold property,
properties of the other simile components (knowledge base plus a
generative commonsense adapter), and frequent corpus modifiers of those
components. The most challenging three are kept, measured by cosine
similarity between concatenated (sentence embedding, property-position
embedding) features of the original and candidate-substituted sentences.
"""

from __future__ import annotations

import itertools
from collections import Counter
from dataclasses import dataclass, replace
from typing import Iterable, Protocol, Sequence

import numpy as np

from simile_probe.errors import InvariantViolation, PreconditionError, ProbeBuildError
from simile_probe.knowledge import (
    CommonsenseAdapter,
    CooccurrenceIndex,
    KnowledgeBase,
    rank_cooccurrence,
)
from simile_probe.lm import MaskedLM, pool_span, sentence_embedding
from simile_probe.records import MASK_SENTINEL, ProbeItem, SimileRecord, span_len

ORIGIN_ANTONYM = "property_antonym"
ORIGIN_TOPIC = "topic_property"
ORIGIN_VEHICLE = "vehicle_property"
ORIGIN_EVENT = "event_property"
ORIGIN_COOCCURRENCE = "corpus_cooccurrence"

# Merge priority when the same word arrives from several strategies.
_ORIGIN_TIER = {
    ORIGIN_ANTONYM: 0,
    ORIGIN_TOPIC: 1,
    ORIGIN_VEHICLE: 1,
    ORIGIN_EVENT: 1,
    ORIGIN_COOCCURRENCE: 2,
}

LABEL_UNREVIEWED = "unreviewed"
LABEL_TRUE_NEGATIVE = "true_negative"
LABEL_REJECTED = "rejected"


@dataclass(frozen=True)
class DistractorCandidate:
    """A candidate wrong answer with its provenance."""

    word: str
    origin: str
    frequency: int | None = None
    similarity: float | None = None
    human_label: str = LABEL_UNREVIEWED

    def __post_init__(self):
        if self.origin not in _ORIGIN_TIER:
            raise InvariantViolation(f"unknown candidate origin {self.origin!r}")
        if self.origin == ORIGIN_COOCCURRENCE and (self.frequency is None or self.frequency <= 1):
            raise InvariantViolation("co-occurrence candidates must carry frequency > 1")
        if self.similarity is not None and not -1.0 <= self.similarity <= 1.0 + 1e-9:
            raise InvariantViolation(f"similarity {self.similarity} outside [-1, 1]")


def generate_candidates(
    record: SimileRecord,
    kb: KnowledgeBase,
    commonsense: CommonsenseAdapter,
    corpus_stats: CooccurrenceIndex,
) -> list[DistractorCandidate]:
    """Union of the three candidate strategies, deduplicated.

    Duplicates keep the highest-priority origin (antonym, then component
    property, then co-occurrence). The gold property itself and
    multi-word phrases are excluded. Empty adapters yield an empty list;
    the caller decides whether to drop the probe.
    """
    gold = record.prop.lower()
    merged: dict[str, DistractorCandidate] = {}

    def admit(candidate: DistractorCandidate) -> None:
        word = candidate.word.lower()
        if word == gold or not word or " " in candidate.word:
            return
        held = merged.get(word)
        if held is None or _ORIGIN_TIER[candidate.origin] < _ORIGIN_TIER[held.origin]:
            merged[word] = candidate

    for word in kb.antonyms(record.prop):
        admit(DistractorCandidate(word=word, origin=ORIGIN_ANTONYM))

    components = (
        (record.topic, ORIGIN_TOPIC),
        (record.vehicle, ORIGIN_VEHICLE),
        (record.event, ORIGIN_EVENT),
    )
    for text, origin in components:
        if not text:
            continue
        for word in kb.has_property(text):
            admit(DistractorCandidate(word=word, origin=origin))
        for word in commonsense.properties(text):
            admit(DistractorCandidate(word=word, origin=origin))
    for text, _ in components:
        if not text:
            continue
        for word, freq in rank_cooccurrence(text, corpus_stats):
            admit(DistractorCandidate(word=word, origin=ORIGIN_COOCCURRENCE, frequency=freq))
    return list(merged.values())


def filter_single_token(
    candidates: Iterable[DistractorCandidate], model: MaskedLM
) -> list[DistractorCandidate]:
    """Keep candidates that are single tokens under the model tokenizer,
    so the probe stays a single-mask cloze."""
    kept = []
    for candidate in candidates:
        ids = model.subtoken_ids(candidate.word)
        if ids is not None and len(ids) == 1:
            kept.append(candidate)
    return kept


def _candidate_feature(record: SimileRecord, word: str | None, encoder: MaskedLM) -> np.ndarray:
    """Concatenated (sentence embedding, property-position embedding).

    ``word=None`` encodes the original sentence; otherwise the property
    span is replaced by the candidate word.
    """
    begin, end = record.property_span
    if word is None:
        tokens: Sequence[str] = record.tokens
        prop_span = record.property_span
    else:
        tokens = record.tokens[:begin] + (word,) + record.tokens[end:]
        prop_span = (begin, begin + 1)
    encoding, hidden = encoder.encode(tokens)
    return np.concatenate([sentence_embedding(encoding, hidden), pool_span(encoding, hidden, prop_span)])


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    denom = float(np.linalg.norm(a) * np.linalg.norm(b))
    if denom == 0.0:
        return 0.0
    return float(np.dot(a, b) / denom)


def rank_distractors(
    record: SimileRecord,
    candidates: Sequence[DistractorCandidate],
    encoder: MaskedLM,
) -> list[DistractorCandidate]:
    """All candidates sorted by challenge (descending cosine similarity of
    candidate-sentence features to the original-sentence feature), ties
    broken by input order. Similarity fields are filled."""
    original = _candidate_feature(record, None, encoder)
    scored = []
    for candidate in candidates:
        feature = _candidate_feature(record, candidate.word, encoder)
        scored.append(replace(candidate, similarity=_cosine(original, feature)))
    order = sorted(range(len(scored)), key=lambda i: (-scored[i].similarity, i))
    return [scored[i] for i in order]


def select_distractors(
    record: SimileRecord,
    candidates: Sequence[DistractorCandidate],
    encoder: MaskedLM,
) -> list[DistractorCandidate]:
    """The three most challenging candidates; raises when fewer than
    three are available so the caller can drop the probe."""
    if len(candidates) < 3:
        raise ProbeBuildError(
            f"need at least 3 distractor candidates, got {len(candidates)} "
            f"for record {record.record_id}"
        )
    return rank_distractors(record, candidates, encoder)[:3]


_PERMUTATIONS_4 = list(itertools.permutations(range(4)))


def build_probe(
    record: SimileRecord,
    distractors: Sequence[DistractorCandidate],
    rng_seed: int,
) -> ProbeItem:
    """Mask the property span and lay out the four options.

    The seed indexes the 24 permutations of the option order, so seeds
    0..23 enumerate every layout of a fixed item and equal seeds rebuild
    identical items. ``distractor_origins`` aligns with the non-gold
    options in option order.
    """
    if span_len(record.property_span) != 1:
        raise PreconditionError(
            f"property span of record {record.record_id} must be normalized to one token"
        )
    if len(distractors) != 3:
        raise ProbeBuildError(f"expected exactly 3 distractors, got {len(distractors)}")
    gold = record.prop
    words = [d.word for d in distractors]
    if len({w.lower() for w in words} | {gold.lower()}) != 4:
        raise ProbeBuildError(f"options are not distinct: gold={gold!r}, distractors={words}")
    begin, end = record.property_span
    masked = record.tokens[:begin] + (MASK_SENTINEL,) + record.tokens[end:]
    ordered = [gold] + words  # slot 0 is gold pre-shuffle
    perm = _PERMUTATIONS_4[rng_seed % len(_PERMUTATIONS_4)]
    options = tuple(ordered[i] for i in perm)
    answer_index = options.index(gold)
    origin_by_word = {d.word: d.origin for d in distractors}
    origins = tuple(origin_by_word[w] for w in options if w != gold)
    return ProbeItem(
        masked_tokens=masked,
        options=options,
        answer_index=answer_index,
        distractor_origins=origins,
        source_record=record,
    )


# ---------------------------------------------------------------------------
# Inter-annotator agreement
# ---------------------------------------------------------------------------


def fleiss_kappa(labels: Sequence[Sequence]) -> float:
    """Fleiss' kappa for an annotator-by-item matrix of categorical labels."""
    n_raters = len(labels)
    if n_raters < 2:
        raise PreconditionError("fleiss_kappa needs at least 2 raters")
    n_items = len(labels[0])
    if n_items < 2:
        raise PreconditionError("fleiss_kappa needs at least 2 items")
    if any(len(row) != n_items for row in labels):
        raise PreconditionError("every item must have the same number of ratings")

    categories = sorted({lab for row in labels for lab in row}, key=repr)
    counts = np.zeros((n_items, len(categories)))
    cat_index = {c: j for j, c in enumerate(categories)}
    for row in labels:
        for i, lab in enumerate(row):
            counts[i, cat_index[lab]] += 1

    p_item = (np.square(counts).sum(axis=1) - n_raters) / (n_raters * (n_raters - 1))
    p_bar = float(p_item.mean())
    p_cat = counts.sum(axis=0) / (n_items * n_raters)
    p_expected = float(np.square(p_cat).sum())
    if p_expected >= 1.0:
        return 1.0
    return (p_bar - p_expected) / (1.0 - p_expected)


# ---------------------------------------------------------------------------
# Human confirmation of true-negativity
# ---------------------------------------------------------------------------


class PromptSession(Protocol):
    """Line-oriented interactive protocol (stdin/stdout or scripted)."""

    def say(self, text: str) -> None: ...

    def ask(self, prompt: str) -> str: ...


@dataclass
class ConfirmationResult:
    items: list[ProbeItem]
    excluded: list[tuple[ProbeItem, str]]
    transcript: list[dict]


def _judge_distractor(
    item: ProbeItem,
    word: str,
    session: PromptSession,
    annotators: int,
    transcript: list[dict],
) -> list[str]:
    judgments = []
    for annotator in range(annotators):
        answer = ""
        while answer not in ("y", "n", "u"):
            answer = session.ask(
                f"annotator {annotator + 1}: is {word!r} a true negative? [y/n/u] "
            ).strip().lower()
        judgments.append(answer)
        transcript.append(
            {"item_id": item.item_id, "distractor": word, "annotator": annotator, "judgment": answer}
        )
    return judgments


def confirm_distractors(
    items: Sequence[ProbeItem],
    pools: dict[str, Sequence[DistractorCandidate]],
    session: PromptSession,
    *,
    annotators: int = 3,
    replace_threshold: int = 2,
) -> ConfirmationResult:
    """Collect per-annotator true-negative judgments on every distractor.

    A distractor that at least ``replace_threshold`` annotators do not
    confirm (answers ``n`` or ``u``) is swapped for the next-ranked pool
    candidate, which is judged in turn. Items whose pool runs dry are
    excluded with a reason. ``pools`` maps item_id to the ranked
    candidates beyond the selected three.
    """
    result = ConfirmationResult(items=[], excluded=[], transcript=[])
    for item in items:
        session.say(f"\n{item.sentence}")
        session.say("options: " + ", ".join(item.options))
        options = list(item.options)
        origins = list(item.distractor_origins)
        pool = list(pools.get(item.item_id, ()))
        failed = False
        for slot, word in enumerate(options):
            if slot == item.answer_index:
                continue
            while True:
                judgments = _judge_distractor(item, options[slot], session, annotators, result.transcript)
                not_confirmed = sum(1 for j in judgments if j != "y")
                if not_confirmed < replace_threshold:
                    break
                replacement = _next_replacement(pool, options, item.answer)
                if replacement is None:
                    failed = True
                    break
                origin_slot = sum(1 for s in range(slot) if s != item.answer_index)
                session.say(f"replacing {options[slot]!r} with {replacement.word!r}")
                options[slot] = replacement.word
                origins[origin_slot] = replacement.origin
            if failed:
                break
        if failed:
            result.excluded.append((item, "replacement pool exhausted"))
            continue
        if options != list(item.options):
            item = replace(item, options=tuple(options), distractor_origins=tuple(origins))
        result.items.append(item)
    return result


def _next_replacement(
    pool: list[DistractorCandidate], options: Sequence[str], gold: str
) -> DistractorCandidate | None:
    used = {o.lower() for o in options} | {gold.lower()}
    while pool:
        candidate = pool.pop(0)
        if candidate.word.lower() not in used:
            return candidate
    return None


def candidate_origin_counts(candidates: Iterable[DistractorCandidate]) -> Counter:
    return Counter(c.origin for c in candidates)
