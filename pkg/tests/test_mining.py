"""Extraction pattern, component annotation, normalization, statistics."""

import random

import pytest

from simile_probe.errors import NormalizationError, PreconditionError
from simile_probe.mining import (
    annotate_components,
    classify_position,
    dataset_stats,
    extract_similes,
    normalize_property,
    normalize_records,
    partition_review,
)
from simile_probe.records import validate_record
from simile_probe.tagging import StaticSynonyms, tokenize

from conftest import make_record, random_record

# Hand-run of the strict pattern over this corpus: only lines 2 and 5
# contain "as ADJ as (a|an|the) ... NOUN" (line 4 lacks the determiner).
TOY_CORPUS = [
    "The cat sat on the mat .",
    "He is as brave as a lion .",
    "It rained all day yesterday .",
    "Her hands were as cold as ice .",
    "She runs as fast as a cheetah .",
]


class TestExtractSimiles:
    def test_paper_example(self, tagger):
        result = extract_similes(["The old lady walks as slow as a snail"], tagger)
        assert len(result.records) == 1
        record = result.records[0]
        assert record.prop == "slow"
        assert record.vehicle == "snail"
        assert [record.tokens[b] for b, _ in record.comparator_spans] == ["as", "as"]

    def test_empty_input(self, tagger):
        assert extract_similes([], tagger).records == []

    def test_toy_corpus_matches_manual_pattern_run(self, tagger):
        result = extract_similes(TOY_CORPUS, tagger)
        assert [(r.prop, r.vehicle) for r in result.records] == [
            ("brave", "lion"),
            ("fast", "cheetah"),
        ]

    def test_as_well_as_is_not_a_simile(self, tagger):
        result = extract_similes(["This is as well as that thing ."], tagger)
        assert result.records == []

    def test_intervening_modifiers_up_to_three(self, tagger):
        hit = extract_similes(["He is as innocent as a small newborn fluffy lamb ."], tagger)
        assert [r.vehicle for r in hit.records] == ["lamb"]
        miss = extract_similes(
            ["He is as innocent as a small newborn fluffy white lamb ."], tagger
        )
        assert miss.records == []

    def test_two_matches_in_one_line(self, tagger):
        line = "He is as sly as a fox and as quiet as a mouse ."
        result = extract_similes([line], tagger)
        assert [(r.prop, r.vehicle) for r in result.records] == [
            ("sly", "fox"),
            ("quiet", "mouse"),
        ]

    def test_untaggable_line_skipped_and_counted(self):
        class FlakyTagger:
            def tag(self, tokens):
                if tokens[0] == "bad":
                    raise RuntimeError("cannot tag")
                return ["NOUN"] * len(tokens)

            def is_plural(self, word):
                return False

        result = extract_similes(["bad line here", "plain words only"], FlakyTagger())
        assert result.skipped_lines == 1
        assert result.records == []

    def test_loose_pattern_for_supervision(self, tagger):
        line = "And the great hall was as silent as a tomb while he spoke"
        assert extract_similes([line], tagger, pattern_mode="loose").records
        # no nominal before the comparison -> rejected even in loose mode
        assert not extract_similes(["as silent as a tomb"], tagger, pattern_mode="loose").records

    def test_outputs_satisfy_record_invariants(self, tagger):
        rng = random.Random(3)
        words = ["the", "a", "dog", "run", "as", "slow", "fast", "tree", "and", "very", "."]
        lines = [" ".join(rng.choices(words, k=rng.randint(1, 14))) for _ in range(300)]
        for record in extract_similes(lines, tagger).records:
            validate_record(record)
            assert record.prop
            assert record.vehicle


class TestAnnotateComponents:
    def test_parse_oracle_sentence(self, tagger, parser):
        record = extract_similes(["Johan runs as fast as a deer"], tagger).records[0]
        annotated = annotate_components(record, parser, tagger)
        assert annotated.topic == "Johan"
        assert annotated.event == "runs"
        assert not annotated.needs_review

    def test_already_annotated_returned_unchanged(self, tagger, parser):
        record = make_record("Johan runs as fast as a deer", prop="fast", vehicle="deer",
                             topic="Johan", event="runs")
        assert annotate_components(record, parser, tagger) is record

    def test_subjectless_fragment_flagged_for_review(self, tagger, parser):
        record = extract_similes(["as busy as a bee"], tagger).records[0]
        annotated = annotate_components(record, parser, tagger)
        assert annotated.topic_span == (0, 0)
        assert annotated.needs_review

    def test_idempotent(self, tagger, parser):
        record = extract_similes(["The old lady walks as slow as a snail"], tagger).records[0]
        once = annotate_components(record, parser, tagger)
        assert annotate_components(once, parser, tagger) == once

    def test_input_not_mutated(self, tagger, parser):
        record = extract_similes(["Johan runs as fast as a deer"], tagger).records[0]
        annotate_components(record, parser, tagger)
        assert record.topic_span == (0, 0)


# Hand-built synonym table used by normalization tests.
SYNONYMS = StaticSynonyms(
    {
        "very slow": ["sluggish", "slow"],
        "extremely bright": ["radiant"],
        "dead tired": ["exhausted"],
        "bone dry": ["parched"],
        "ice cold": ["freezing"],
        "rock hard": ["solid"],
        "razor sharp": ["keen"],
        "crystal clear": ["lucid"],
        "pitch black": ["dark"],
        "snow white": ["pale", "white as snow"],
    }
)


class TestNormalizeProperty:
    def _two_token_record(self):
        return make_record(
            "The turtle moved as very slow as a dream", prop="very slow", vehicle="dream"
        )

    def test_single_token_unchanged(self):
        record = make_record("He is as brave as a lion", prop="brave", vehicle="lion")
        assert normalize_property(record, SYNONYMS) is record

    def test_multi_token_replaced_from_table(self):
        record = self._two_token_record()
        normalized = normalize_property(record, SYNONYMS)
        assert normalized.prop == "sluggish"
        assert normalized.property_span[1] - normalized.property_span[0] == 1
        # spans after the property shift left by one
        assert normalized.vehicle == "dream"
        assert len(normalized.tokens) == len(record.tokens) - 1

    def test_multi_token_synonym_entries_are_filtered(self):
        record = make_record("Her dress was as snow white as milk", prop="snow white",
                             vehicle="milk")
        # "white as snow" (multi-word) is skipped; "pale" wins
        assert normalize_property(record, SYNONYMS).prop == "pale"

    def test_no_synonym_drops_with_reason(self):
        record = self._two_token_record()
        with pytest.raises(NormalizationError) as err:
            normalize_property(record, StaticSynonyms({}))
        assert err.value.reason == "no_single_token_synonym"

    def test_batch_counts_drops(self):
        records = [
            self._two_token_record(),
            make_record("He is as brave as a lion", prop="brave", vehicle="lion"),
        ]
        kept, dropped = normalize_records(records, StaticSynonyms({}))
        assert len(kept) == 1
        assert dropped["no_single_token_synonym"] == 1

    def test_idempotent_and_all_single_token(self):
        rng = random.Random(5)
        records = [random_record(rng) for _ in range(50)] + [self._two_token_record()]
        kept, _ = normalize_records(records, SYNONYMS)
        for record in kept:
            assert record.property_span[1] - record.property_span[0] == 1
            assert normalize_property(record, SYNONYMS) is record


class TestClassifyPosition:
    def test_comparator_at_token_zero_of_nine(self):
        record = make_record("as brave as a lion in the dark night", prop="brave", vehicle="lion")
        assert len(record.tokens) == 9
        assert classify_position(record) == "start"

    def test_comparator_at_token_four_of_nine(self):
        record = make_record("The small boy was as brave as a lion", prop="brave", vehicle="lion")
        assert record.comparator_spans[0] == (4, 5)
        assert classify_position(record) == "middle"

    def test_partition_sums_to_one(self):
        rng = random.Random(9)
        records = [random_record(rng) for _ in range(200)]
        counts = {"start": 0, "middle": 0, "end": 0}
        for record in records:
            counts[classify_position(record)] += 1
        assert sum(counts.values()) == len(records)


class TestDatasetStats:
    def test_single_record_all_ones(self):
        record = make_record("He is as brave as a lion", prop="brave", vehicle="lion",
                             topic="He", event="is")
        stats = dataset_stats([record])
        assert stats.n_sentences == 1
        assert stats.unique_topics == 1
        assert stats.unique_properties == 1
        assert stats.unique_vehicles == 1
        assert stats.unique_events == 1
        assert stats.unique_topic_vehicle_pairs == 1
        assert stats.unique_topic_property_vehicle_triples == 1

    def test_shared_vehicle_hand_count(self):
        a = make_record("The man is as brave as a lion", prop="brave", vehicle="lion",
                        topic="man", event="is")
        b = make_record("The girl is as fierce as a lion", prop="fierce", vehicle="lion",
                        topic="girl", event="is")
        stats = dataset_stats([a, b])
        assert stats.unique_vehicles == 1
        assert stats.unique_topic_vehicle_pairs == 2
        assert stats.unique_topic_property_vehicle_triples == 2

    def test_lengths(self):
        a = make_record("He is as brave as a lion", prop="brave", vehicle="lion")
        b = make_record("The man is as brave as a lion today", prop="brave", vehicle="lion")
        stats = dataset_stats([a, b])
        assert stats.min_length == 7
        assert stats.max_length == 9
        assert stats.avg_length == 8.0

    def test_empty_errors(self):
        with pytest.raises(PreconditionError):
            dataset_stats([])


def test_partition_review(tagger, parser):
    good = extract_similes(["Johan runs as fast as a deer"], tagger).records[0]
    bad = extract_similes(["as busy as a bee"], tagger).records[0]
    annotated = [annotate_components(r, parser, tagger) for r in (good, bad)]
    clean, review = partition_review(annotated)
    assert [r.prop for r in clean] == ["fast"]
    assert [r.prop for r in review] == ["busy"]


def test_tokenize_preserves_sentinels():
    assert tokenize("as [MASK] as a bee .") == ["as", "[MASK]", "as", "a", "bee", "."]
    assert tokenize("runs [UNK] fast") == ["runs", "[UNK]", "fast"]
