"""Multiple-choice probing harness.

Scores the four options of each probe at the mask position, aggregates
accuracy over seeds / datasets / categories, runs the static-embedding
baselines, hides individual simile components to measure their
contribution, and administers the human quiz.
"""

from __future__ import annotations

import csv
import json
import random
import string
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from simile_probe.errors import (
    OptionVocabularyError,
    PreconditionError,
    SessionAborted,
)
from simile_probe.lm import EmbeddingTable, MaskedLM, mask_logprobs
from simile_probe.records import (
    MASK_SENTINEL,
    UNK_SENTINEL,
    ProbeItem,
    Span,
    span_len,
)
from simile_probe.tagging import RuleBasedTagger, Tagger

SETTINGS = ("zero_shot", "mlm_finetuned", "ke_finetuned", "human", "baseline")
ABLATABLE = ("topic", "vehicle", "event", "comparator", "random")

ModelOrFactory = MaskedLM | Callable[[int], MaskedLM]


@dataclass
class ExperimentReport:
    """Per-seed, per-category accuracies for one evaluation run."""

    model_name: str
    setting: str
    per_dataset_accuracy: dict[str, float] = field(default_factory=dict)
    per_category_accuracy: dict[str, float] = field(default_factory=dict)
    per_seed: dict[int, float] = field(default_factory=dict)
    mean_accuracy: float = 0.0
    n_items: int = 0
    ablated_component: str | None = None

    def as_dict(self) -> dict:
        return {
            "model_name": self.model_name,
            "setting": self.setting,
            "ablated_component": self.ablated_component,
            "per_dataset_accuracy": self.per_dataset_accuracy,
            "per_category_accuracy": self.per_category_accuracy,
            "per_seed": {str(k): v for k, v in self.per_seed.items()},
            "mean_accuracy": self.mean_accuracy,
            "n_items": self.n_items,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.as_dict(), indent=2))


def score_options(item: ProbeItem, model: MaskedLM) -> tuple[int, list[float]]:
    """Log-probability of each option token at the mask position.

    The chosen index is the argmax, ties broken by lowest index. Options
    that are not single tokens fall back to joint multi-mask scoring
    (mean per-subtoken log-probability); this path only serves imported
    legacy items, the pipeline guarantees single-token options.
    """
    logprobs = mask_logprobs(item.masked_tokens, model)
    scores: list[float] = []
    for option in item.options:
        ids = model.subtoken_ids(option)
        if not ids:
            raise OptionVocabularyError(option, model.name)
        if len(ids) == 1:
            scores.append(float(logprobs[ids[0]]))
        else:
            scores.append(_multi_token_score(item, ids, model))
    chosen = int(np.argmax(scores))
    return chosen, scores


def _multi_token_score(item: ProbeItem, ids: Sequence[int], model: MaskedLM) -> float:
    mask_at = item.mask_index
    expanded = (
        item.masked_tokens[:mask_at]
        + (MASK_SENTINEL,) * len(ids)
        + item.masked_tokens[mask_at + 1 :]
    )
    _, rows = model.logprobs_at_masks(expanded)
    if len(rows) != len(ids):
        raise PreconditionError(
            f"expected {len(ids)} mask positions after expansion, got {len(rows)}"
        )
    return float(np.mean([rows[j][tok] for j, tok in enumerate(ids)]))


def evaluate(
    items: Sequence[ProbeItem],
    model: ModelOrFactory,
    seeds: Sequence[int] = (0, 1, 2),
    *,
    setting: str = "zero_shot",
    dataset: str = "dataset",
    model_name: str | None = None,
) -> ExperimentReport:
    """Accuracy per seed plus the mean.

    Zero-shot scoring is deterministic, so seeds only matter when
    ``model`` is a factory mapping each seed to its own fine-tuned
    checkpoint.
    """
    if not items:
        raise PreconditionError("cannot evaluate an empty item list")
    if not seeds:
        raise PreconditionError("need at least one seed")
    per_seed: dict[int, float] = {}
    category_hits: dict[str, list[int]] = defaultdict(list)
    name = model_name
    for seed in seeds:
        handle = model(seed) if callable(model) else model
        name = name or handle.name
        correct = 0
        for item in items:
            chosen, _ = score_options(item, handle)
            hit = int(chosen == item.answer_index)
            correct += hit
            category = item.source_record.category
            if category:
                category_hits[category].append(hit)
        per_seed[seed] = correct / len(items)
    mean = sum(per_seed.values()) / len(per_seed)
    per_category = {
        cat: sum(hits) / len(hits) for cat, hits in sorted(category_hits.items())
    }
    return ExperimentReport(
        model_name=name or "model",
        setting=setting,
        per_dataset_accuracy={dataset: mean},
        per_category_accuracy=per_category,
        per_seed=per_seed,
        mean_accuracy=mean,
        n_items=len(items),
    )


# ---------------------------------------------------------------------------
# Static-embedding baselines
# ---------------------------------------------------------------------------


def _span_vector(table: EmbeddingTable, text: str) -> np.ndarray | None:
    vectors = [table.vec(w) for w in text.split()]
    vectors = [v for v in vectors if v is not None]
    if not vectors:
        return None
    return np.sum(vectors, axis=0)


def _cosine_distance(a: np.ndarray, b: np.ndarray) -> float:
    denom = float(np.linalg.norm(a) * np.linalg.norm(b))
    if denom == 0.0:
        return 1.0
    return 1.0 - float(np.dot(a, b) / denom)


def emb_baseline(item: ProbeItem, table: EmbeddingTable) -> int | None:
    """Composite vector = vehicle + event embeddings; nearest option wins.

    Returns None when the vehicle or any option has no vector, so the
    caller can skip and count the item.
    """
    record = item.source_record
    composite = _span_vector(table, record.vehicle)
    if composite is None:
        return None
    event_vec = _span_vector(table, record.event) if record.event else None
    if event_vec is not None:
        composite = composite + event_vec
    distances = []
    for option in item.options:
        vec = table.vec(option)
        if vec is None:
            return None
        distances.append(_cosine_distance(vec, composite))
    return int(np.argmin(distances))


def conscore_baseline(item: ProbeItem, table: EmbeddingTable) -> int | None:
    """Prefer options with small and balanced distance to topic and vehicle.

    score(o) = -(d(o,t) + d(o,v) + |d(o,t) - d(o,v)|), cosine distances.
    The formula reconstructs the published qualitative criterion.
    """
    record = item.source_record
    topic_vec = _span_vector(table, record.topic)
    vehicle_vec = _span_vector(table, record.vehicle)
    if topic_vec is None or vehicle_vec is None:
        return None
    scores = []
    for option in item.options:
        vec = table.vec(option)
        if vec is None:
            return None
        d_t = _cosine_distance(vec, topic_vec)
        d_v = _cosine_distance(vec, vehicle_vec)
        scores.append(-(d_t + d_v + abs(d_t - d_v)))
    return int(np.argmax(scores))


@dataclass
class BaselineResult:
    accuracy: float
    n_scored: int
    n_skipped: int


def evaluate_baseline(
    items: Sequence[ProbeItem],
    table: EmbeddingTable,
    chooser: Callable[[ProbeItem, EmbeddingTable], int | None],
) -> BaselineResult:
    correct = scored = skipped = 0
    for item in items:
        chosen = chooser(item, table)
        if chosen is None:
            skipped += 1
            continue
        scored += 1
        correct += int(chosen == item.answer_index)
    if scored == 0:
        raise PreconditionError("baseline could not score any item")
    return BaselineResult(accuracy=correct / scored, n_scored=scored, n_skipped=skipped)


# ---------------------------------------------------------------------------
# Component-hiding ablations
# ---------------------------------------------------------------------------


def ablate(
    item: ProbeItem,
    component: str,
    rng_seed: int = 0,
    tagger: Tagger | None = None,
) -> ProbeItem:
    """Hide one simile component in the masked sentence.

    Topic, vehicle, and comparator tokens become the unknown sentinel
    one-for-one; the event collapses to a copula agreeing with the topic
    head; ``random`` hides one uniformly chosen token outside every
    component span. The returned item shares the source record and id of
    the original (paired design), so accuracy drops can be compared on
    identical underlying items.
    """
    if component not in ABLATABLE:
        raise PreconditionError(f"unknown component {component!r}; expected one of {ABLATABLE}")
    record = item.source_record
    tokens = list(item.masked_tokens)
    if len(tokens) != len(record.tokens):
        raise PreconditionError(
            "masked sentence is not aligned with its record (was it already ablated?)"
        )

    def blank(span: Span) -> None:
        for i in range(span[0], span[1]):
            tokens[i] = UNK_SENTINEL

    if component in ("topic", "vehicle"):
        span = record.topic_span if component == "topic" else record.vehicle_span
        if span_len(span) == 0:
            raise PreconditionError(f"record {record.record_id} has no {component} span")
        blank(span)
    elif component == "comparator":
        for span in record.comparator_spans:
            blank(span)
    elif component == "event":
        if span_len(record.event_span) == 0:
            raise PreconditionError(f"record {record.record_id} has no event span")
        tagger = tagger or RuleBasedTagger()
        copula = "is"
        if span_len(record.topic_span):
            head = record.tokens[record.topic_span[1] - 1]
            if tagger.is_plural(head):
                copula = "are"
        begin, end = record.event_span
        tokens[begin:end] = [copula]
    else:  # random
        protected = set()
        for span in (record.topic_span, record.vehicle_span, record.event_span, record.property_span):
            protected.update(range(span[0], span[1]))
        for span in record.comparator_spans:
            protected.update(range(span[0], span[1]))
        eligible = [
            i for i, tok in enumerate(tokens) if i not in protected and tok != MASK_SENTINEL
        ]
        if not eligible:
            raise PreconditionError(
                f"record {record.record_id} has no token eligible for random ablation"
            )
        tokens[random.Random(rng_seed).choice(eligible)] = UNK_SENTINEL
    return replace(item, masked_tokens=tuple(tokens))


def ablation_drops(
    items: Sequence[ProbeItem],
    model: ModelOrFactory,
    components: Sequence[str] = ABLATABLE,
    seeds: Sequence[int] = (0,),
    rng_seed: int = 0,
    dataset: str = "dataset",
) -> dict[str, tuple[ExperimentReport, float]]:
    """Evaluate each ablation on the same underlying items.

    Returns component -> (report, absolute accuracy drop vs unablated).
    """
    base = evaluate(items, model, seeds, setting="zero_shot", dataset=dataset)
    out: dict[str, tuple[ExperimentReport, float]] = {"none": (base, 0.0)}
    for component in components:
        ablated = [ablate(item, component, rng_seed=rng_seed) for item in items]
        report = evaluate(ablated, model, seeds, setting="zero_shot", dataset=dataset)
        report.ablated_component = component
        out[component] = (report, base.mean_accuracy - report.mean_accuracy)
    return out


# ---------------------------------------------------------------------------
# Human quiz
# ---------------------------------------------------------------------------

_LETTERS = string.ascii_uppercase


def human_quiz(
    items: Sequence[ProbeItem],
    annotators: int,
    session,
    *,
    rng_seed: int = 0,
    transcript_path: str | Path | None = None,
    dataset: str = "dataset",
) -> ExperimentReport:
    """Majority vote of human annotators over a shuffled item sample.

    When every annotator picks a different option, a re-adjudication
    prompt asks the group for a consensus letter. An aborted session
    saves the partial transcript and raises.
    """
    if annotators < 3:
        raise PreconditionError("human quiz needs at least 3 annotators")
    order = list(items)
    random.Random(rng_seed).shuffle(order)
    transcript: list[dict] = []
    correct = 0
    try:
        for item in order:
            session.say(f"\n{item.sentence}")
            for i, option in enumerate(item.options):
                session.say(f"  {_LETTERS[i]}. {option}")
            votes: Counter = Counter()
            for annotator in range(annotators):
                letter = _ask_letter(session, f"annotator {annotator + 1} answer: ", len(item.options))
                votes[letter] += 1
                transcript.append({"item_id": item.item_id, "annotator": annotator, "answer": letter})
            top = votes.most_common()
            if len(top) > 1 and top[0][1] == top[1][1]:
                letter = _ask_letter(session, "no majority; consensus answer: ", len(item.options))
                transcript.append({"item_id": item.item_id, "annotator": "consensus", "answer": letter})
            else:
                letter = top[0][0]
            correct += int(_LETTERS.index(letter) == item.answer_index)
    except (EOFError, KeyboardInterrupt) as err:
        if transcript_path is not None:
            _write_transcript(transcript_path, transcript)
        raise SessionAborted("quiz aborted; partial transcript saved") from err
    if transcript_path is not None:
        _write_transcript(transcript_path, transcript)
    accuracy = correct / len(order)
    return ExperimentReport(
        model_name="human",
        setting="human",
        per_dataset_accuracy={dataset: accuracy},
        per_seed={rng_seed: accuracy},
        mean_accuracy=accuracy,
        n_items=len(order),
    )


def _ask_letter(session, prompt: str, n_options: int) -> str:
    allowed = _LETTERS[:n_options]
    while True:
        answer = session.ask(prompt).strip().upper()
        if answer in allowed:
            return answer


def _write_transcript(path: str | Path, rows: list[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")


# ---------------------------------------------------------------------------
# Flat results CSV
# ---------------------------------------------------------------------------

CSV_HEADER = ("model", "setting", "dataset", "category", "seed", "accuracy")


def report_csv_rows(report: ExperimentReport) -> list[tuple]:
    rows = []
    for dataset in report.per_dataset_accuracy:
        for seed, acc in report.per_seed.items():
            rows.append((report.model_name, report.setting, dataset, "__all__", seed, acc))
        for category, acc in report.per_category_accuracy.items():
            rows.append((report.model_name, report.setting, dataset, category, "mean", acc))
    return rows


def write_reports_csv(path: str | Path, reports: Sequence[ExperimentReport]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for report in reports:
            writer.writerows(report_csv_rows(report))
