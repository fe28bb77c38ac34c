"""Format shim mapping released probe files into the internal schema.

Accepts JSON, JSONL, or CSV rows with flexible column names: a sentence
carrying one ``[MASK]`` (or a separate property column to mask), four
options (one list or letter columns), an answer letter/index/word, and
optional component words and category. Component spans are reconstructed
by token matching; the comparator is located around the mask.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from simile_probe.records import (
    CATEGORIES,
    MASK_SENTINEL,
    ProbeItem,
    SimileRecord,
    Span,
)
from simile_probe.tagging import tokenize

EXPECTED_COUNTS = {"general_corpus": 775, "quizzes": 858}

_SENTENCE_KEYS = ("sentence", "text", "question", "masked_sentence")
_OPTION_LIST_KEYS = ("options", "choices", "candidates")
_ANSWER_KEYS = ("answer", "label", "correct", "answer_index", "gold")
_LETTERS = "ABCD"


@dataclass
class ImportResult:
    items: list[ProbeItem] = field(default_factory=list)
    skipped: list[tuple[int, str]] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def records(self) -> list[SimileRecord]:
        return [item.source_record for item in self.items]


def _iter_rows(path: Path) -> list[dict]:
    suffix = path.suffix.lower()
    if suffix == ".csv":
        with path.open(encoding="utf-8", newline="") as fh:
            return list(csv.DictReader(fh))
    text = path.read_text(encoding="utf-8")
    if suffix == ".jsonl":
        return [json.loads(line) for line in text.splitlines() if line.strip()]
    data = json.loads(text)
    if isinstance(data, dict):
        for key in ("data", "items", "examples"):
            if key in data and isinstance(data[key], list):
                return data[key]
        raise ValueError("JSON object has no recognizable item list")
    return data


def _first_key(row: dict, keys: Sequence[str]):
    for key in keys:
        if key in row and row[key] not in (None, ""):
            return row[key]
    return None


def _extract_options(row: dict) -> list[str] | None:
    listed = _first_key(row, _OPTION_LIST_KEYS)
    if isinstance(listed, str):
        try:
            listed = json.loads(listed)
        except json.JSONDecodeError:
            listed = [p.strip() for p in listed.split("|")]
    if isinstance(listed, list) and len(listed) == 4:
        return [str(o) for o in listed]
    for pattern in (_LETTERS, [f"option{c}" for c in _LETTERS], [f"option{i}" for i in range(1, 5)]):
        values = [row.get(k) for k in pattern]
        if all(v not in (None, "") for v in values):
            return [str(v) for v in values]
    return None


def _extract_answer_index(row: dict, options: list[str]) -> int | None:
    raw = _first_key(row, _ANSWER_KEYS)
    if raw is None:
        return None
    if isinstance(raw, bool):
        return None
    if isinstance(raw, int):
        return raw if 0 <= raw <= 3 else None
    raw = str(raw).strip()
    if raw.isdigit() and 0 <= int(raw) <= 3 and raw not in options:
        return int(raw)
    if len(raw) == 1 and raw.upper() in _LETTERS:
        return _LETTERS.index(raw.upper())
    lowered = [o.lower() for o in options]
    if raw.lower() in lowered:
        return lowered.index(raw.lower())
    return None


def _find_word_span(tokens: Sequence[str], word: str, *, exclude: set[int]) -> Span:
    target = tokenize(word)
    if not target:
        return (0, 0)
    lowered = [t.lower() for t in tokens]
    goal = [t.lower() for t in target]
    for i in range(len(tokens) - len(goal) + 1):
        if lowered[i : i + len(goal)] == goal and not any(
            j in exclude for j in range(i, i + len(goal))
        ):
            return (i, i + len(goal))
    return (0, 0)


def _comparator_spans(tokens: Sequence[str], mask_at: int) -> tuple[Span, ...]:
    lowered = [t.lower() for t in tokens]
    if mask_at > 0 and lowered[mask_at - 1] == "as":
        after = next((j for j in range(mask_at + 1, len(tokens)) if lowered[j] == "as"), None)
        if after is not None:
            return ((mask_at - 1, mask_at), (after, after + 1))
    like = next((j for j in range(len(tokens)) if lowered[j] == "like"), None)
    if like is not None:
        return ((like, like + 1),)
    first_as = next((j for j in range(len(tokens)) if lowered[j] == "as"), None)
    if first_as is not None:
        return ((first_as, first_as + 1),)
    return ()


def _row_to_item(row: dict, source: str) -> ProbeItem:
    options = _extract_options(row)
    if options is None:
        raise ValueError("no 4-option set found")
    answer_index = _extract_answer_index(row, options)
    if answer_index is None:
        raise ValueError("no answer key found")

    sentence = _first_key(row, _SENTENCE_KEYS)
    masked_tokens = None
    if isinstance(sentence, list):
        masked_tokens = [str(t) for t in sentence]
    elif isinstance(row.get("masked_tokens"), list):
        masked_tokens = [str(t) for t in row["masked_tokens"]]
    elif isinstance(sentence, str):
        masked_tokens = tokenize(sentence)
    if not masked_tokens:
        raise ValueError("no sentence found")

    gold = options[answer_index]
    if MASK_SENTINEL not in masked_tokens:
        prop_span = _find_word_span(masked_tokens, str(row.get("property") or gold), exclude=set())
        if prop_span == (0, 0):
            raise ValueError("sentence has no mask and the property is not present")
        if prop_span[1] - prop_span[0] != 1:
            raise ValueError("property covers more than one token; cannot mask")
        masked_tokens = list(masked_tokens)
        masked_tokens[prop_span[0]] = MASK_SENTINEL
    if masked_tokens.count(MASK_SENTINEL) != 1:
        raise ValueError(f"expected one mask, found {masked_tokens.count(MASK_SENTINEL)}")

    mask_at = masked_tokens.index(MASK_SENTINEL)
    full_tokens = list(masked_tokens)
    full_tokens[mask_at] = gold
    comparators = _comparator_spans(full_tokens, mask_at)
    if not comparators:
        raise ValueError("no comparator token found")

    taken = {mask_at}
    for span in comparators:
        taken.update(range(span[0], span[1]))
    spans: dict[str, Span] = {}
    for component in ("vehicle", "topic", "event"):
        word = row.get(component)
        spans[component] = (
            _find_word_span(full_tokens, str(word), exclude=taken) if word else (0, 0)
        )
        taken.update(range(spans[component][0], spans[component][1]))

    category = str(row["category"]).lower() if row.get("category") else None
    if category is not None and category not in CATEGORIES:
        category = None

    record = SimileRecord(
        tokens=tuple(full_tokens),
        property_span=(mask_at, mask_at + 1),
        vehicle_span=spans["vehicle"],
        topic_span=spans["topic"],
        event_span=spans["event"],
        comparator_spans=comparators,
        source=source,
        category=category,
        needs_review=spans["vehicle"] == (0, 0),
    )
    return ProbeItem(
        masked_tokens=tuple(masked_tokens),
        options=tuple(options),
        answer_index=answer_index,
        distractor_origins=("imported",) * 3,
        source_record=record,
    )


def import_released_dataset(
    path: str | Path, dataset_hint: str | None = None
) -> ImportResult:
    """Map a published probe file into ProbeItems.

    Rows that cannot be mapped are skipped with a reason; a count
    mismatch against the published dataset size produces a warning with
    the difference, never a failure.
    """
    path = Path(path)
    source = dataset_hint if dataset_hint in ("general_corpus", "quizzes") else "user"
    result = ImportResult()
    rows = _iter_rows(path)
    for i, row in enumerate(rows):
        try:
            result.items.append(_row_to_item(row, source))
        except (ValueError, KeyError) as err:
            result.skipped.append((i, str(err)))
    expected = EXPECTED_COUNTS.get(dataset_hint or "")
    if expected is not None and len(result.items) != expected:
        result.warnings.append(
            f"{dataset_hint}: imported {len(result.items)} items, published size is "
            f"{expected} (difference {len(result.items) - expected}; "
            f"{len(result.skipped)} rows skipped)"
        )
    return result
