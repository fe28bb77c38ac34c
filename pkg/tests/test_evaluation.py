"""Option scoring, seeded evaluation, baselines, ablations, human quiz."""

import random

import numpy as np
import pytest

from simile_probe.distractors import DistractorCandidate, build_probe
from simile_probe.errors import OptionVocabularyError, PreconditionError, SessionAborted
from simile_probe.evaluation import (
    ablate,
    ablation_drops,
    conscore_baseline,
    emb_baseline,
    evaluate,
    evaluate_baseline,
    human_quiz,
    report_csv_rows,
    score_options,
    write_reports_csv,
)
from simile_probe.lm import DictEmbeddingTable, StubMaskedLM
from simile_probe.records import MASK_SENTINEL, UNK_SENTINEL

from conftest import ScriptedSession, make_record, random_distractor_words, random_record


def _probe(sentence, prop, vehicle, distractors, *, topic=None, event=None, seed=0, category=None):
    record = make_record(sentence, prop=prop, vehicle=vehicle, topic=topic, event=event,
                         category=category)
    cands = [DistractorCandidate(word=w, origin="vehicle_property") for w in distractors]
    return build_probe(record, cands, rng_seed=seed)


def _vocab_of(items):
    words = set()
    for item in items:
        words.update(w.lower() for w in item.masked_tokens if w != MASK_SENTINEL)
        words.update(w.lower() for w in item.options)
    return sorted(words)


@pytest.fixture
def lamb_item():
    # seed 0 keeps the gold option first
    return _probe(
        "My client is as innocent as a newborn lamb .",
        prop="innocent", vehicle="lamb", topic="client", event="is",
        distractors=["delicious", "legal", "guilty"],
    )


class TestScoreOptions:
    def test_stub_logits_pick_first(self, lamb_item):
        model = StubMaskedLM(
            _vocab_of([lamb_item]),
            word_logits={"innocent": 2.0, "delicious": 1.0, "legal": 0.0, "guilty": -1.0},
        )
        chosen, scores = score_options(lamb_item, model)
        assert chosen == 0
        assert scores[0] > scores[1] > scores[2] > scores[3]

    def test_all_equal_scores_tie_to_lowest_index(self, lamb_item):
        model = StubMaskedLM(_vocab_of([lamb_item]), word_logits={o: 1.0 for o in lamb_item.options})
        chosen, scores = score_options(lamb_item, model)
        assert chosen == 0
        assert np.allclose(scores, scores[0])

    def test_argmax_invariant_to_constant_shift(self, lamb_item):
        base = {"innocent": 0.5, "delicious": 2.0, "legal": 0.1, "guilty": -0.7}
        for shift in (0.0, 5.0, -31.0):
            model = StubMaskedLM(
                _vocab_of([lamb_item]), word_logits={k: v + shift for k, v in base.items()}
            )
            chosen, _ = score_options(lamb_item, model)
            assert chosen == 1

    def test_unknown_option_errors_naming_it(self, lamb_item):
        vocab = [w for w in _vocab_of([lamb_item]) if w != "guilty"]
        model = StubMaskedLM(vocab)
        with pytest.raises(OptionVocabularyError, match="guilty"):
            score_options(lamb_item, model)

    def test_context_scores_independent_of_option_order(self, lamb_item):
        """Mask log-probs depend only on context, so reshuffling the options
        never changes which word wins."""
        record = lamb_item.source_record
        cands = [DistractorCandidate(word=w, origin="vehicle_property")
                 for w in ("delicious", "legal", "guilty")]
        model = StubMaskedLM(_vocab_of([lamb_item]), seed=9)
        winners = set()
        for seed in range(24):
            item = build_probe(record, cands, rng_seed=seed)
            chosen, _ = score_options(item, model)
            winners.add(item.options[chosen])
        assert len(winners) == 1

    def test_multi_token_fallback_mean_of_joint_masks(self, lamb_item):
        model = StubMaskedLM(
            _vocab_of([lamb_item]) + ["de", "licious"],
            word_pieces={"delicious": ["de", "licious"]},
        )
        chosen, scores = score_options(lamb_item, model)
        mask_at = lamb_item.mask_index
        expanded = (
            lamb_item.masked_tokens[:mask_at]
            + (MASK_SENTINEL, MASK_SENTINEL)
            + lamb_item.masked_tokens[mask_at + 1 :]
        )
        _, rows = model.logprobs_at_masks(expanded)
        expected = (rows[0][model.index["de"]] + rows[1][model.index["licious"]]) / 2.0
        assert scores[1] == pytest.approx(expected)


def _fuzz_items(n, seed=0):
    rng = random.Random(seed)
    items = []
    for _ in range(n):
        record = random_record(rng)
        words = random_distractor_words(rng, record.prop)
        cands = [DistractorCandidate(word=w, origin="topic_property") for w in words]
        items.append(build_probe(record, cands, rng_seed=rng.randint(0, 10**6)))
    return items


class _OracleLogits:
    """Logit hook that always favors the gold word of the sentence."""

    def __init__(self, items):
        self.gold = {tuple(i.masked_tokens): i.answer for i in items}

    def __call__(self, tokens, word_idx):
        return {self.gold[tuple(tokens)]: 5.0}


class _RandomLogits:
    """Seeded random logits over the whole vocabulary."""

    def __init__(self, vocab, seed):
        self.vocab = vocab
        self.rng = np.random.default_rng(seed)

    def __call__(self, tokens, word_idx):
        return {w: float(x) for w, x in zip(self.vocab, self.rng.standard_normal(len(self.vocab)))}


class TestEvaluate:
    def test_oracle_stub_reaches_one(self):
        items = _fuzz_items(40, seed=1)
        model = StubMaskedLM(_vocab_of(items), logit_fn=_OracleLogits(items))
        report = evaluate(items, model, seeds=(0, 1, 2), dataset="toy")
        assert report.mean_accuracy == 1.0
        assert set(report.per_seed) == {0, 1, 2}
        assert report.per_dataset_accuracy == {"toy": 1.0}

    def test_uniform_random_stub_near_quarter(self):
        items = _fuzz_items(1000, seed=2)
        vocab = _vocab_of(items)
        model = StubMaskedLM(vocab, logit_fn=_RandomLogits(vocab, seed=7))
        report = evaluate(items, model, seeds=(0,), dataset="toy")
        assert report.mean_accuracy == pytest.approx(0.25, abs=0.03)

    def test_mean_is_mean_of_per_seed(self):
        items = _fuzz_items(30, seed=3)
        vocab = _vocab_of(items)

        def factory(seed):
            return StubMaskedLM(vocab, logit_fn=_RandomLogits(vocab, seed=seed))

        report = evaluate(items, factory, seeds=(0, 1, 2), dataset="toy")
        assert report.mean_accuracy == pytest.approx(
            sum(report.per_seed.values()) / 3, abs=1e-12
        )

    def test_accuracy_invariant_under_item_permutation(self):
        items = _fuzz_items(60, seed=4)
        vocab = _vocab_of(items)
        model = StubMaskedLM(vocab, seed=5)
        forward = evaluate(items, model, seeds=(0,), dataset="toy").mean_accuracy
        shuffled = list(items)
        random.Random(8).shuffle(shuffled)
        backward = evaluate(shuffled, model, seeds=(0,), dataset="toy").mean_accuracy
        assert forward == backward

    def test_category_accuracies_bounded(self):
        items = _fuzz_items(80, seed=6)
        model = StubMaskedLM(_vocab_of(items), seed=1)
        report = evaluate(items, model, seeds=(0,), dataset="toy")
        assert all(0.0 <= acc <= 1.0 for acc in report.per_category_accuracy.values())

    def test_empty_items_rejected(self):
        with pytest.raises(PreconditionError):
            evaluate([], StubMaskedLM(["a"]), seeds=(0,))


class TestEmbBaseline:
    TABLE = DictEmbeddingTable(
        {
            "lion": [1.0, 0.0, 0.0],
            "prowls": [0.0, 1.0, 0.0],
            "brave": [1.0, 1.0, 0.0],  # equals composite direction
            "timid": [-1.0, 0.0, 0.0],
            "golden": [0.0, 0.0, 1.0],
            "busy": [0.5, -0.5, 0.0],
        }
    )

    def _item(self, event=None):
        sentence = (
            "The knight prowls as brave as a lion ."
            if event
            else "The knight is as brave as a lion ."
        )
        return _probe(sentence, prop="brave", vehicle="lion", topic="knight", event=event,
                      distractors=["timid", "golden", "busy"])

    def test_option_equal_to_composite_wins(self):
        item = self._item(event="prowls")
        # composite = lion + prowls = [1,1,0] = "brave" exactly (distance 0)
        chosen = emb_baseline(item, self.TABLE)
        assert item.options[chosen] == "brave"

    def test_matches_manual_cosine_ranking(self):
        item = self._item(event="prowls")
        composite = np.array([1.0, 1.0, 0.0])
        manual = []
        for option in item.options:
            vec = np.array(self.TABLE.vec(option))
            manual.append(1 - float(np.dot(vec, composite) / (np.linalg.norm(vec) * np.linalg.norm(composite))))
        assert emb_baseline(item, self.TABLE) == int(np.argmin(manual))

    def test_empty_event_uses_vehicle_alone(self):
        item = self._item(event=None)
        # composite = lion = [1,0,0]; nearest by cosine among options:
        # brave cos=1/sqrt2, timid cos=-1, golden cos=0, busy cos=0.5/x ->
        # manual check below
        composite = np.array([1.0, 0.0, 0.0])
        manual = []
        for option in item.options:
            vec = np.array(self.TABLE.vec(option))
            manual.append(1 - float(np.dot(vec, composite) / (np.linalg.norm(vec) * np.linalg.norm(composite))))
        assert emb_baseline(item, self.TABLE) == int(np.argmin(manual))

    def test_unresolvable_vehicle_skipped_and_counted(self):
        item = _probe("The knight is as brave as a gryphon .", prop="brave", vehicle="gryphon",
                      topic="knight", distractors=["timid", "golden", "busy"])
        assert emb_baseline(item, self.TABLE) is None
        ok_item = self._item()
        result = evaluate_baseline([item, ok_item], self.TABLE, emb_baseline)
        assert result.n_skipped == 1
        assert result.n_scored == 1


class TestConScoreBaseline:
    def test_balanced_and_close_beats_far_or_unbalanced(self):
        table = DictEmbeddingTable(
            {
                "knight": [1.0, 0.0],
                "lion": [0.0, 1.0],
                "brave": [1.0, 1.0],    # equidistant, close to both
                "timid": [-1.0, -1.0],  # far from both
                "golden": [0.0, 1.0],   # identical to vehicle: unbalanced
                "busy": [3.0, 0.1],     # close to topic only
            }
        )
        item = _probe("The knight is as brave as a lion .", prop="brave", vehicle="lion",
                      topic="knight", distractors=["timid", "golden", "busy"])
        chosen = conscore_baseline(item, table)
        assert item.options[chosen] == "brave"

    def test_matches_manual_arithmetic(self):
        table = DictEmbeddingTable(
            {
                "knight": [1.0, 0.0],
                "lion": [0.0, 1.0],
                "brave": [0.6, 0.8],
                "timid": [0.9, 0.1],
                "golden": [0.2, 0.2],
                "busy": [-0.3, 0.9],
            }
        )
        item = _probe("The knight is as brave as a lion .", prop="brave", vehicle="lion",
                      topic="knight", distractors=["timid", "golden", "busy"])

        def cos_dist(a, b):
            a, b = np.array(a), np.array(b)
            return 1 - float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))

        manual = []
        for option in item.options:
            d_t = cos_dist(table.vec(option), [1.0, 0.0])
            d_v = cos_dist(table.vec(option), [0.0, 1.0])
            manual.append(-(d_t + d_v + abs(d_t - d_v)))
        assert conscore_baseline(item, table) == int(np.argmax(manual))

    def test_option_at_zero_distance_from_both_scores_zero_max(self):
        # topic and vehicle colinear, one option colinear with them
        table = DictEmbeddingTable(
            {
                "knight": [1.0, 0.0],
                "lion": [2.0, 0.0],
                "brave": [3.0, 0.0],
                "timid": [0.0, 1.0],
                "golden": [-1.0, 0.0],
                "busy": [1.0, 1.0],
            }
        )
        item = _probe("The knight is as brave as a lion .", prop="brave", vehicle="lion",
                      topic="knight", distractors=["timid", "golden", "busy"])
        chosen = conscore_baseline(item, table)
        assert item.options[chosen] == "brave"


JOHAN = "Johan runs as fast as a deer to the toilet after he had some spicy gravy ."


@pytest.fixture
def johan_item():
    return _probe(JOHAN, prop="fast", vehicle="deer", topic="Johan", event="runs",
                  distractors=["slow", "tall", "loud"])


class TestAblate:
    def test_event_becomes_copula(self, johan_item):
        ablated = ablate(johan_item, "event")
        assert ablated.sentence == (
            "Johan is as [MASK] as a deer to the toilet after he had some spicy gravy ."
        )

    def test_comparator_tokens_become_unknown(self, johan_item):
        ablated = ablate(johan_item, "comparator")
        assert ablated.sentence.startswith("Johan runs [UNK] [MASK] [UNK] a deer")
        assert len(ablated.masked_tokens) == len(johan_item.masked_tokens)

    def test_topic_and_vehicle_one_for_one(self, johan_item):
        topic = ablate(johan_item, "topic")
        assert topic.masked_tokens[0] == UNK_SENTINEL
        vehicle = ablate(johan_item, "vehicle")
        assert vehicle.sentence.startswith("Johan runs as [MASK] as a [UNK] to")
        assert len(topic.masked_tokens) == len(vehicle.masked_tokens) == len(johan_item.masked_tokens)

    def test_plural_topic_head_takes_are(self):
        item = _probe("The boys run as fast as a deer .", prop="fast", vehicle="deer",
                      topic="boys", event="run", distractors=["slow", "tall", "loud"])
        assert ablate(item, "event").sentence == "The boys are as [MASK] as a deer ."

    def test_random_is_deterministic_and_outside_components(self, johan_item):
        first = ablate(johan_item, "random", rng_seed=11)
        second = ablate(johan_item, "random", rng_seed=11)
        assert first.masked_tokens == second.masked_tokens
        changed = [
            i for i, (a, b) in enumerate(zip(first.masked_tokens, johan_item.masked_tokens))
            if a != b
        ]
        assert len(changed) == 1
        idx = changed[0]
        record = johan_item.source_record
        protected = {record.topic_span[0], record.vehicle_span[0], record.event_span[0],
                     record.property_span[0]}
        for span in record.comparator_spans:
            protected.update(range(*span))
        assert idx not in protected
        assert first.masked_tokens[idx] == UNK_SENTINEL

    def test_every_mode_keeps_exactly_one_mask(self, johan_item):
        for component in ("topic", "vehicle", "event", "comparator", "random"):
            ablated = ablate(johan_item, component)
            assert ablated.masked_tokens.count(MASK_SENTINEL) == 1

    def test_no_eligible_random_token_errors(self):
        # every token belongs to a component span: nothing left to hide
        item = _probe("lady walks as slow as snails", prop="slow", vehicle="snails",
                      topic="lady", event="walks", distractors=["fast", "tall", "hot"])
        with pytest.raises(PreconditionError, match="random"):
            ablate(item, "random")

    def test_missing_component_errors(self):
        item = _probe("as busy as a bee today", prop="busy", vehicle="bee",
                      distractors=["idle", "tall", "hot"])
        with pytest.raises(PreconditionError, match="topic"):
            ablate(item, "topic")

    def test_paired_design_same_underlying_items(self, johan_item):
        items = [johan_item]
        model = StubMaskedLM(_vocab_of(items), seed=0)
        drops = ablation_drops(items, model, components=("topic", "random"), seeds=(0,))
        assert set(drops) == {"none", "topic", "random"}
        base_report, base_drop = drops["none"]
        assert base_drop == 0.0
        for component in ("topic", "random"):
            report, drop = drops[component]
            assert report.n_items == base_report.n_items
            assert drop == pytest.approx(base_report.mean_accuracy - report.mean_accuracy)


class TestHumanQuiz:
    def _items(self):
        return _fuzz_items(4, seed=10)

    @staticmethod
    def _letters_for(items, rng_seed, pick):
        """Answer letters per presented item under quiz shuffling."""
        order = list(items)
        random.Random(rng_seed).shuffle(order)
        return ["ABCD"[pick(item)] for item in order]

    def test_unanimous_correct_reaches_one(self):
        items = self._items()
        per_item = self._letters_for(items, 0, lambda item: item.answer_index)
        answers = [letter for letter in per_item for _ in range(3)]
        report = human_quiz(items, 3, ScriptedSession(answers), rng_seed=0)
        assert report.mean_accuracy == 1.0

    def test_two_to_one_majority_taken(self):
        items = self._items()[:1]
        gold = items[0].answer_index
        wrong = (gold + 1) % 4
        answers = ["ABCD"[gold], "ABCD"[gold], "ABCD"[wrong]]
        report = human_quiz(items, 3, ScriptedSession(answers), rng_seed=0)
        assert report.mean_accuracy == 1.0

    def test_three_way_disagreement_readjudicated(self):
        items = self._items()[:1]
        gold = items[0].answer_index
        distinct = ["ABCD"[(gold + k) % 4] for k in range(3)]
        session = ScriptedSession(distinct + ["ABCD"[gold]])
        report = human_quiz(items, 3, session, rng_seed=0)
        assert report.mean_accuracy == 1.0
        assert any("consensus" in p for p in session.prompts)

    def test_aborted_session_saves_partial_transcript(self, tmp_path):
        items = self._items()
        transcript = tmp_path / "quiz.jsonl"
        with pytest.raises(SessionAborted):
            human_quiz(items, 3, ScriptedSession(["A", "B"]), rng_seed=0,
                       transcript_path=transcript)
        assert transcript.exists()
        assert len(transcript.read_text().splitlines()) == 2

    def test_fewer_than_three_annotators_rejected(self):
        with pytest.raises(PreconditionError):
            human_quiz(self._items(), 2, ScriptedSession([]))


class TestReportsCsv:
    def test_flat_rows_and_file(self, tmp_path):
        items = _fuzz_items(10, seed=11)
        model = StubMaskedLM(_vocab_of(items), seed=2)
        report = evaluate(items, model, seeds=(0, 1), dataset="toy")
        rows = report_csv_rows(report)
        assert ("stub", "zero_shot", "toy", "__all__", 0, report.per_seed[0]) in rows
        path = tmp_path / "results.csv"
        write_reports_csv(path, [report])
        header = path.read_text().splitlines()[0]
        assert header == "model,setting,dataset,category,seed,accuracy"
