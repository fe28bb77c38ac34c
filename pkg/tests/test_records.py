"""Data-model invariants, position rule, and JSONL round-trips."""

import random

import pytest

from simile_probe.errors import InvariantViolation
from simile_probe.records import (
    MASK_SENTINEL,
    ProbeItem,
    SimileRecord,
    load_items,
    load_records,
    position_of,
    save_items,
    save_records,
    validate_record,
)

from conftest import make_record, random_record


def _thirds_oracle(n: int) -> list[tuple[int, int]]:
    """Independent thirds computation: sizes differ by at most one and the
    remainder goes to the earlier thirds."""
    base, rem = divmod(n, 3)
    sizes = [base + (1 if i < rem else 0) for i in range(3)]
    bounds, start = [], 0
    for size in sizes:
        bounds.append((start, start + size))
        start += size
    return bounds


class TestPositionRule:
    def test_boundary_start(self):
        assert position_of(9, 0) == "start"

    def test_exact_thirds_middle(self):
        assert position_of(9, 4) == "middle"

    def test_matches_oracle_for_all_small_sentences(self):
        names = ("start", "middle", "end")
        for n in range(1, 13):
            bounds = _thirds_oracle(n)
            for anchor in range(n):
                expected = next(
                    name for name, (lo, hi) in zip(names, bounds) if lo <= anchor < hi
                )
                assert position_of(n, anchor) == expected, (n, anchor)

    def test_remainder_goes_to_earlier_thirds(self):
        # 10 tokens -> thirds of sizes 4,3,3
        assert position_of(10, 3) == "start"
        assert position_of(10, 4) == "middle"

    def test_out_of_bounds_anchor(self):
        with pytest.raises(InvariantViolation):
            position_of(5, 5)


class TestRecordInvariants:
    def test_valid_record_accepted(self):
        record = make_record("He is as brave as a lion", prop="brave", vehicle="lion",
                             topic="He", event="is")
        validate_record(record)
        assert record.prop == "brave"
        assert record.vehicle == "lion"

    def test_overlapping_spans_rejected(self):
        with pytest.raises(InvariantViolation, match="overlaps"):
            SimileRecord(
                tokens=("a", "b", "c", "d"),
                property_span=(1, 3),
                vehicle_span=(2, 4),
                comparator_spans=((0, 1),),
            )

    def test_out_of_bounds_span_rejected(self):
        with pytest.raises(InvariantViolation, match="out of bounds"):
            SimileRecord(
                tokens=("a", "b"),
                property_span=(1, 3),
                vehicle_span=(0, 1),
                comparator_spans=((0, 1),),
            )

    def test_empty_property_rejected(self):
        with pytest.raises(InvariantViolation, match="property"):
            SimileRecord(
                tokens=("a", "b", "c"),
                property_span=(1, 1),
                vehicle_span=(2, 3),
                comparator_spans=((0, 1),),
            )

    def test_missing_comparator_rejected(self):
        with pytest.raises(InvariantViolation, match="comparator"):
            SimileRecord(
                tokens=("a", "b", "c"),
                property_span=(1, 2),
                vehicle_span=(2, 3),
                comparator_spans=(),
            )

    def test_position_is_pure_function_of_spans(self):
        rng = random.Random(7)
        for _ in range(100):
            record = random_record(rng)
            anchor = record.comparator_spans[0][0]
            assert record.position == position_of(len(record.tokens), anchor)


class TestProbeItemInvariants:
    def _item(self, **overrides):
        record = make_record("He is as brave as a lion", prop="brave", vehicle="lion",
                             topic="He", event="is")
        fields = dict(
            masked_tokens=("He", "is", "as", MASK_SENTINEL, "as", "a", "lion"),
            options=("brave", "timid", "golden", "busy"),
            answer_index=0,
            distractor_origins=("property_antonym", "vehicle_property", "corpus_cooccurrence"),
            source_record=record,
        )
        fields.update(overrides)
        return ProbeItem(**fields)

    def test_valid_item(self):
        item = self._item()
        assert item.answer == "brave"
        assert item.mask_index == 3

    def test_requires_exactly_one_mask(self):
        with pytest.raises(InvariantViolation, match="mask"):
            self._item(masked_tokens=("He", "is", "as", "brave", "as", "a", "lion"))
        with pytest.raises(InvariantViolation, match="mask"):
            self._item(masked_tokens=(MASK_SENTINEL, "is", "as", MASK_SENTINEL, "as", "a", "lion"))

    def test_options_must_be_distinct(self):
        with pytest.raises(InvariantViolation, match="distinct"):
            self._item(options=("brave", "brave", "golden", "busy"))

    def test_answer_must_match_gold_property(self):
        with pytest.raises(InvariantViolation, match="gold"):
            self._item(options=("timid", "brave", "golden", "busy"))  # index 0 is not gold


class TestJsonlRoundTrip:
    def test_records_round_trip(self, tmp_path):
        rng = random.Random(11)
        records = [random_record(rng) for _ in range(20)]
        path = tmp_path / "records.jsonl"
        save_records(path, records)
        loaded = load_records(path)
        assert loaded == records

    def test_items_round_trip(self, tmp_path):
        record = make_record("He is as brave as a lion", prop="brave", vehicle="lion",
                             topic="He", event="is")
        item = ProbeItem(
            masked_tokens=("He", "is", "as", MASK_SENTINEL, "as", "a", "lion"),
            options=("timid", "brave", "golden", "busy"),
            answer_index=1,
            distractor_origins=("property_antonym", "vehicle_property", "corpus_cooccurrence"),
            source_record=record,
        )
        save_records(tmp_path / "records.jsonl", [record])
        save_items(tmp_path / "items.jsonl", [item])
        loaded = load_items(tmp_path / "items.jsonl", tmp_path / "records.jsonl")
        assert loaded == [item]
