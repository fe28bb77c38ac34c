"""Core data model: simile records with component spans, and probe items.

Spans are half-open ``(begin, end)`` token index ranges over the surface
token sequence. An empty span is represented as ``(i, i)`` and means the
component is not (yet) annotated.
"""

from __future__ import annotations

import json
import uuid
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from simile_probe.errors import InvariantViolation

Span = tuple[int, int]

MASK_SENTINEL = "[MASK]"
UNK_SENTINEL = "[UNK]"

SOURCES = ("general_corpus", "quizzes", "supervision", "user")
CATEGORIES = ("qualities", "condition", "sense", "measurement", "color", "time", "emotion")
POSITIONS = ("start", "middle", "end")


def span_len(span: Span) -> int:
    return span[1] - span[0]


def spans_overlap(a: Span, b: Span) -> bool:
    if span_len(a) == 0 or span_len(b) == 0:
        return False
    return a[0] < b[1] and b[0] < a[1]


@dataclass(frozen=True)
class SimileRecord:
    """One closed simile with token spans for its five components.

    ``topic_span`` and ``event_span`` may be empty until component
    annotation runs; ``comparator_spans`` covers both "as" tokens (two
    spans) or the single "like" token (one span).
    """

    tokens: tuple[str, ...]
    property_span: Span
    vehicle_span: Span
    comparator_spans: tuple[Span, ...]
    topic_span: Span = (0, 0)
    event_span: Span = (0, 0)
    source: str = "user"
    category: str | None = None
    needs_review: bool = False
    record_id: str = field(default_factory=lambda: uuid.uuid4().hex[:12])

    def __post_init__(self):
        validate_record(self)

    def span_text(self, span: Span) -> str:
        return " ".join(self.tokens[span[0] : span[1]])

    @property
    def topic(self) -> str:
        return self.span_text(self.topic_span)

    @property
    def prop(self) -> str:
        return self.span_text(self.property_span)

    @property
    def vehicle(self) -> str:
        return self.span_text(self.vehicle_span)

    @property
    def event(self) -> str:
        return self.span_text(self.event_span)

    @property
    def sentence(self) -> str:
        return " ".join(self.tokens)

    @property
    def position(self) -> str:
        """Sentence third ("start"/"middle"/"end") holding the first comparator token."""
        return position_of(len(self.tokens), self.comparator_spans[0][0])

    def with_spans(self, **spans) -> "SimileRecord":
        return replace(self, **spans)


def position_of(n_tokens: int, anchor: int) -> str:
    """Split ``n_tokens`` into three equal thirds (remainder tokens assigned
    to the earlier thirds) and return the third containing ``anchor``."""
    if not 0 <= anchor < n_tokens:
        raise InvariantViolation(f"anchor {anchor} outside sentence of {n_tokens} tokens")
    base, rem = divmod(n_tokens, 3)
    bounds = []
    start = 0
    for i in range(3):
        size = base + (1 if i < rem else 0)
        bounds.append((start, start + size))
        start += size
    for name, (lo, hi) in zip(POSITIONS, bounds):
        if lo <= anchor < hi:
            return name
    raise AssertionError("unreachable")


def validate_record(record: SimileRecord) -> None:
    """Raise InvariantViolation unless the record satisfies its invariants."""
    n = len(record.tokens)
    if n == 0:
        raise InvariantViolation("record has no tokens")
    named = {
        "topic": record.topic_span,
        "property": record.property_span,
        "vehicle": record.vehicle_span,
        "event": record.event_span,
    }
    all_spans = list(named.items()) + [
        (f"comparator[{i}]", s) for i, s in enumerate(record.comparator_spans)
    ]
    for name, (b, e) in all_spans:
        if not (0 <= b <= e <= n):
            raise InvariantViolation(f"{name} span ({b},{e}) out of bounds for {n} tokens")
    for i, (name_a, a) in enumerate(all_spans):
        for name_b, b in all_spans[i + 1 :]:
            if spans_overlap(a, b):
                raise InvariantViolation(f"{name_a} span {a} overlaps {name_b} span {b}")
    if span_len(record.property_span) < 1:
        raise InvariantViolation("property span must cover at least one token")
    if not record.comparator_spans:
        raise InvariantViolation("comparator_spans must be non-empty")
    if record.source not in SOURCES:
        raise InvariantViolation(f"unknown source {record.source!r}")
    if record.category is not None and record.category not in CATEGORIES:
        raise InvariantViolation(f"unknown category {record.category!r}")


@dataclass(frozen=True)
class ProbeItem:
    """A masked simile sentence with four options, exactly one correct.

    ``masked_tokens`` is the record's token sequence with the property
    span replaced by a single mask sentinel. ``source_record`` carries
    the component spans needed for ablations and analysis.
    """

    masked_tokens: tuple[str, ...]
    options: tuple[str, str, str, str]
    answer_index: int
    distractor_origins: tuple[str, str, str]
    source_record: SimileRecord
    item_id: str = field(default_factory=lambda: uuid.uuid4().hex[:12])

    def __post_init__(self):
        validate_probe_item(self)

    @property
    def answer(self) -> str:
        return self.options[self.answer_index]

    @property
    def mask_index(self) -> int:
        return self.masked_tokens.index(MASK_SENTINEL)

    @property
    def sentence(self) -> str:
        return " ".join(self.masked_tokens)


def validate_probe_item(item: ProbeItem) -> None:
    if item.masked_tokens.count(MASK_SENTINEL) != 1:
        raise InvariantViolation(
            f"expected exactly one mask sentinel, found {item.masked_tokens.count(MASK_SENTINEL)}"
        )
    if len(item.options) != 4:
        raise InvariantViolation(f"expected 4 options, got {len(item.options)}")
    if len(set(item.options)) != 4:
        raise InvariantViolation(f"options are not pairwise distinct: {item.options}")
    if not 0 <= item.answer_index <= 3:
        raise InvariantViolation(f"answer_index {item.answer_index} outside [0,3]")
    if len(item.distractor_origins) != 3:
        raise InvariantViolation("expected exactly 3 distractor origins")
    gold = item.source_record.prop
    if item.options[item.answer_index] != gold:
        raise InvariantViolation(
            f"options[{item.answer_index}]={item.options[item.answer_index]!r} "
            f"does not equal gold property {gold!r}"
        )


# ---------------------------------------------------------------------------
# JSONL serialization
# ---------------------------------------------------------------------------


def record_to_dict(record: SimileRecord) -> dict:
    return {
        "record_id": record.record_id,
        "tokens": list(record.tokens),
        "spans": {
            "topic": list(record.topic_span),
            "property": list(record.property_span),
            "vehicle": list(record.vehicle_span),
            "event": list(record.event_span),
            "comparators": [list(s) for s in record.comparator_spans],
        },
        "source": record.source,
        "category": record.category,
        "position": record.position,
        "needs_review": record.needs_review,
    }


def record_from_dict(data: dict) -> SimileRecord:
    spans = data["spans"]
    return SimileRecord(
        tokens=tuple(data["tokens"]),
        topic_span=tuple(spans["topic"]),
        property_span=tuple(spans["property"]),
        vehicle_span=tuple(spans["vehicle"]),
        event_span=tuple(spans["event"]),
        comparator_spans=tuple(tuple(s) for s in spans["comparators"]),
        source=data.get("source", "user"),
        category=data.get("category"),
        needs_review=data.get("needs_review", False),
        record_id=data.get("record_id", uuid.uuid4().hex[:12]),
    )


def item_to_dict(item: ProbeItem) -> dict:
    return {
        "item_id": item.item_id,
        "masked_tokens": list(item.masked_tokens),
        "options": list(item.options),
        "answer_index": item.answer_index,
        "origins": list(item.distractor_origins),
        "record_id": item.source_record.record_id,
    }


def item_from_dict(data: dict, records_by_id: dict[str, SimileRecord]) -> ProbeItem:
    record = records_by_id[data["record_id"]]
    return ProbeItem(
        masked_tokens=tuple(data["masked_tokens"]),
        options=tuple(data["options"]),
        answer_index=data["answer_index"],
        distractor_origins=tuple(data["origins"]),
        source_record=record,
        item_id=data.get("item_id", uuid.uuid4().hex[:12]),
    )


def write_jsonl(path: str | Path, rows: Iterable[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")


def read_jsonl(path: str | Path) -> Iterator[dict]:
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield json.loads(line)


def save_records(path: str | Path, records: Sequence[SimileRecord]) -> None:
    write_jsonl(path, (record_to_dict(r) for r in records))


def load_records(path: str | Path) -> list[SimileRecord]:
    return [record_from_dict(d) for d in read_jsonl(path)]


def save_items(path: str | Path, items: Sequence[ProbeItem]) -> None:
    write_jsonl(path, (item_to_dict(i) for i in items))


def load_items(items_path: str | Path, records_path: str | Path) -> list[ProbeItem]:
    records = {r.record_id: r for r in load_records(records_path)}
    return [item_from_dict(d, records) for d in read_jsonl(items_path)]
