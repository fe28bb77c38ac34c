"""Closed-simile extraction, component annotation, and dataset statistics.

The strict pattern matches ``as ADJ as (a|an|the) [modifiers] NOUN`` on
POS-tagged tokens; up to ``max_gap`` modifier tokens may sit between the
determiner and the vehicle noun ("as innocent as a newborn lamb"). The
loose pattern (``pattern_mode="loose"``) drops the determiner requirement
and only demands a nominal somewhere before the comparison and a noun
somewhere after it; it is used to mine supervision data.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

from simile_probe.errors import NormalizationError, PreconditionError
from simile_probe.records import SimileRecord, Span, position_of, span_len
from simile_probe.tagging import (
    ADJ,
    ADV,
    NOUN,
    NUM,
    PRON,
    VERB,
    DependencyAdapter,
    RuleBasedTagger,
    SynonymLookup,
    Tagger,
    tokenize,
)

_DETERMINERS = ("a", "an", "the")
# VERB here admits participial modifiers ("a burning ember"); after a
# determiner a finite verb cannot occur anyway.
_MODIFIER_TAGS = (ADJ, ADV, NUM, VERB)


@dataclass
class MiningResult:
    """Extraction output plus a count of lines that could not be tagged."""

    records: list[SimileRecord] = field(default_factory=list)
    skipped_lines: int = 0

    def __len__(self) -> int:
        return len(self.records)


def _strict_matches(tokens: Sequence[str], tags: Sequence[str], max_gap: int) -> list[tuple[Span, Span, tuple[Span, Span]]]:
    """Yield (property_span, vehicle_span, comparator_spans) per pattern hit."""
    matches = []
    n = len(tokens)
    i = 0
    while i + 3 < n:
        if (
            tokens[i].lower() == "as"
            and tags[i + 1] == ADJ
            and tokens[i + 2].lower() == "as"
            and tokens[i + 3].lower() in _DETERMINERS
        ):
            vehicle = None
            for j in range(i + 4, min(i + 5 + max_gap, n)):
                if tags[j] == NOUN:
                    vehicle = j
                    break
                if tags[j] not in _MODIFIER_TAGS:
                    break
            if vehicle is not None:
                matches.append(
                    (
                        (i + 1, i + 2),
                        (vehicle, vehicle + 1),
                        ((i, i + 1), (i + 2, i + 3)),
                    )
                )
                i = vehicle + 1
                continue
        i += 1
    return matches


def _loose_matches(tokens: Sequence[str], tags: Sequence[str]) -> list[tuple[Span, Span, tuple[Span, Span]]]:
    matches = []
    n = len(tokens)
    i = 0
    while i + 2 < n:
        if tokens[i].lower() == "as" and tags[i + 1] == ADJ and tokens[i + 2].lower() == "as":
            has_subject = any(tags[k] in (NOUN, PRON) for k in range(i))
            vehicle = next((j for j in range(i + 3, n) if tags[j] == NOUN), None)
            if has_subject and vehicle is not None:
                matches.append(
                    (
                        (i + 1, i + 2),
                        (vehicle, vehicle + 1),
                        ((i, i + 1), (i + 2, i + 3)),
                    )
                )
                i = vehicle + 1
                continue
        i += 1
    return matches


def extract_similes(
    lines: Iterable[str],
    tagger: Tagger,
    *,
    pattern_mode: str = "strict",
    source: str = "user",
    max_gap: int = 3,
) -> MiningResult:
    """Extract one SimileRecord per comparator-pattern hit.

    Lines the tagger cannot process are skipped and counted, never fatal.
    Topic and event spans are left empty for ``annotate_components``.
    """
    if pattern_mode not in ("strict", "loose"):
        raise PreconditionError(f"unknown pattern_mode {pattern_mode!r}")
    result = MiningResult()
    for line in lines:
        tokens = tokenize(line)
        if not tokens:
            continue
        try:
            tags = tagger.tag(tokens)
            if len(tags) != len(tokens):
                raise ValueError("tagger returned wrong number of tags")
        except Exception:
            result.skipped_lines += 1
            continue
        finder = _strict_matches(tokens, tags, max_gap) if pattern_mode == "strict" else _loose_matches(tokens, tags)
        for prop_span, vehicle_span, comparators in finder:
            result.records.append(
                SimileRecord(
                    tokens=tuple(tokens),
                    property_span=prop_span,
                    vehicle_span=vehicle_span,
                    comparator_spans=comparators,
                    source=source,
                )
            )
    return result


def annotate_components(
    record: SimileRecord,
    parser: DependencyAdapter,
    tagger: Tagger | None = None,
) -> SimileRecord:
    """Fill topic and event spans from a shallow parse of the sentence.

    Already-annotated records are returned unchanged. A record whose
    subject cannot be found keeps an empty topic span and is flagged for
    human review.
    """
    if span_len(record.property_span) < 1 or not record.comparator_spans:
        raise PreconditionError("record must have property and comparator spans filled")
    if span_len(record.topic_span) and span_len(record.event_span):
        return record
    tagger = tagger or RuleBasedTagger()
    tags = tagger.tag(record.tokens)
    before = record.comparator_spans[0][0]
    topic, event = parser.subject_and_predicate(record.tokens, tags, before)
    if span_len(record.topic_span):
        topic = record.topic_span
    if span_len(record.event_span):
        event = record.event_span
    return replace(
        record,
        topic_span=topic,
        event_span=event,
        needs_review=record.needs_review or span_len(topic) == 0,
    )


def _shift_span(span: Span, at: int, delta: int) -> Span:
    b, e = span
    if b >= at:
        return (b + delta, e + delta)
    return span


def normalize_property(record: SimileRecord, synonyms: SynonymLookup) -> SimileRecord:
    """Reduce a multi-token property to a single-token synonym.

    Raises NormalizationError when the lookup offers no single-token
    replacement; callers drop and count such records.
    """
    if span_len(record.property_span) < 1:
        raise PreconditionError("property span is empty")
    if span_len(record.property_span) == 1:
        return record
    begin, end = record.property_span
    candidates = synonyms.single_token_synonyms(record.prop)
    if not candidates:
        raise NormalizationError(
            f"no single-token synonym for property {record.prop!r}",
            reason="no_single_token_synonym",
        )
    replacement = candidates[0]
    delta = 1 - (end - begin)
    tokens = record.tokens[:begin] + (replacement,) + record.tokens[end:]
    return replace(
        record,
        tokens=tokens,
        property_span=(begin, begin + 1),
        topic_span=_shift_span(record.topic_span, end, delta),
        vehicle_span=_shift_span(record.vehicle_span, end, delta),
        event_span=_shift_span(record.event_span, end, delta),
        comparator_spans=tuple(_shift_span(s, end, delta) for s in record.comparator_spans),
    )


def normalize_records(
    records: Iterable[SimileRecord], synonyms: SynonymLookup
) -> tuple[list[SimileRecord], Counter]:
    """Normalize a batch; returns surviving records and drop-reason counts."""
    kept: list[SimileRecord] = []
    dropped: Counter = Counter()
    for record in records:
        try:
            kept.append(normalize_property(record, synonyms))
        except NormalizationError as err:
            dropped[err.reason] += 1
    return kept, dropped


def classify_position(record: SimileRecord) -> str:
    """Which equal third of the sentence holds the first comparator token."""
    if not record.comparator_spans:
        raise PreconditionError("comparator_spans must be filled")
    return position_of(len(record.tokens), record.comparator_spans[0][0])


@dataclass
class DatasetStats:
    n_sentences: int
    unique_topics: int
    unique_properties: int
    unique_vehicles: int
    unique_events: int
    unique_topic_vehicle_pairs: int
    unique_topic_property_vehicle_triples: int
    min_length: int
    avg_length: float
    max_length: int
    position_fractions: dict[str, float]

    def as_dict(self) -> dict:
        return {
            "#sentence": self.n_sentences,
            "#unique_topic": self.unique_topics,
            "#unique_property": self.unique_properties,
            "#unique_vehicle": self.unique_vehicles,
            "#unique_event": self.unique_events,
            "#unique_topic_vehicle": self.unique_topic_vehicle_pairs,
            "#unique_topic_property_vehicle": self.unique_topic_property_vehicle_triples,
            "min_length": self.min_length,
            "avg_length": round(self.avg_length, 2),
            "max_length": self.max_length,
            "@start": round(self.position_fractions["start"], 4),
            "@middle": round(self.position_fractions["middle"], 4),
            "@end": round(self.position_fractions["end"], 4),
        }


def dataset_stats(records: Sequence[SimileRecord]) -> DatasetStats:
    """Usage-frequency and context-diversity statistics for a record set."""
    if not records:
        raise PreconditionError("cannot compute statistics of an empty record set")
    topics, props, vehicles, events = set(), set(), set(), set()
    tv_pairs, tpv_triples = set(), set()
    lengths = []
    positions = Counter()
    for r in records:
        t, p, v, e = (r.topic.lower(), r.prop.lower(), r.vehicle.lower(), r.event.lower())
        if t:
            topics.add(t)
        if p:
            props.add(p)
        if v:
            vehicles.add(v)
        if e:
            events.add(e)
        if t and v:
            tv_pairs.add((t, v))
        if t and p and v:
            tpv_triples.add((t, p, v))
        lengths.append(len(r.tokens))
        positions[classify_position(r)] += 1
    n = len(records)
    return DatasetStats(
        n_sentences=n,
        unique_topics=len(topics),
        unique_properties=len(props),
        unique_vehicles=len(vehicles),
        unique_events=len(events),
        unique_topic_vehicle_pairs=len(tv_pairs),
        unique_topic_property_vehicle_triples=len(tpv_triples),
        min_length=min(lengths),
        avg_length=sum(lengths) / n,
        max_length=max(lengths),
        position_fractions={pos: positions[pos] / n for pos in ("start", "middle", "end")},
    )


def partition_review(records: Iterable[SimileRecord]) -> tuple[list[SimileRecord], list[SimileRecord]]:
    """Split records into (clean, needs-human-review)."""
    clean, review = [], []
    for r in records:
        (review if r.needs_review else clean).append(r)
    return clean, review
