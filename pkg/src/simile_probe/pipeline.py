"""Pipeline orchestration with content-hash stage caching.

Stages (mine, distractors, confirm, build, finetune, eval, analyze) each
write their artifacts once under the run directory. A stage whose inputs
and config subset hash to the same key as the previous run is skipped,
leaving byte-identical outputs; a failed stage leaves earlier outputs
and the manifest intact, so reruns resume from the failure point.
"""

from __future__ import annotations

import hashlib
import json
import shutil
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from simile_probe import __version__, analysis, evaluation, records as rec
from simile_probe.backends import TinyMaskedLM, load_model
from simile_probe.config import ExperimentConfig, save_config
from simile_probe.distractors import (
    DistractorCandidate,
    build_probe,
    confirm_distractors,
    generate_candidates,
    rank_distractors,
)
from simile_probe.errors import PreconditionError, StageError
from simile_probe.knowledge import (
    CooccurrenceIndex,
    LexicalKnowledgeBase,
    StaticCommonsense,
)
from simile_probe.lm import MaskedLM, StubMaskedLM
from simile_probe.mining import (
    annotate_components,
    dataset_stats,
    extract_similes,
    normalize_records,
    partition_review,
)
from simile_probe.tagging import StaticSynonyms, make_parser, make_tagger
from simile_probe.training import TrainConfig, finetune

ALL_STAGES = ("mine", "distractors", "confirm", "build", "finetune", "eval", "analyze")


@dataclass
class StageOutcome:
    name: str
    cache_hit: bool
    output_dir: Path


@dataclass
class PipelineContext:
    config: ExperimentConfig
    run_dir: Path
    session: object | None = None
    _models: dict[str, MaskedLM] = field(default_factory=dict)

    def stage_dir(self, name: str) -> Path:
        return self.run_dir / name

    def model(self, spec: str, seed: int = 0) -> MaskedLM:
        key = f"{spec}@{seed}"
        if key not in self._models:
            self._models[key] = self._build_model(spec, seed)
        return self._models[key]

    def _build_model(self, spec: str, seed: int) -> MaskedLM:
        if spec in ("stub", "tiny"):
            vocab = self._pipeline_vocab()
            if spec == "stub":
                return StubMaskedLM(vocab, seed=seed, max_len=self.config.max_len)
            return TinyMaskedLM(vocab, seed=seed, max_len=self.config.max_len)
        return load_model(spec, device=self.config.device, max_len=self.config.max_len)

    def _pipeline_vocab(self) -> list[str]:
        """Words seen anywhere in the configured inputs; lets the offline
        stub/tiny backends cover the whole pipeline in dry runs."""
        from simile_probe.tagging import tokenize

        words: set[str] = set()
        for path in (self.config.corpus, self.config.supervision_corpus):
            if path and Path(path).exists():
                for line in Path(path).read_text(encoding="utf-8").splitlines():
                    words.update(w.lower() for w in tokenize(line))
        for key in ("knowledge_base", "commonsense", "cooccurrence"):
            path = getattr(self.config.adapters, key)
            if path and Path(path).exists():
                words.update(_json_words(Path(path)))
        for spec in self.config.datasets.values():
            for piece in str(spec).split(":"):
                if Path(piece).exists() and piece.endswith(".jsonl"):
                    for row in rec.read_jsonl(piece):
                        for token_key in ("tokens", "masked_tokens"):
                            words.update(w.lower() for w in row.get(token_key, []))
                        words.update(w.lower() for w in row.get("options", []))
        return sorted(words)


def _json_words(path: Path) -> set[str]:
    words: set[str] = set()

    def walk(node):
        if isinstance(node, dict):
            for key, value in node.items():
                words.add(str(key).lower())
                walk(value)
        elif isinstance(node, list):
            for value in node:
                walk(value)
        elif isinstance(node, str):
            words.add(node.lower())

    walk(json.loads(path.read_text()))
    return words


# ---------------------------------------------------------------------------
# Content-hash cache
# ---------------------------------------------------------------------------


def file_hash(path: str | Path) -> str:
    digest = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _stage_key(name: str, input_paths: Sequence[Path], config_subset: dict) -> str:
    digest = hashlib.sha256()
    digest.update(name.encode())
    digest.update(json.dumps(config_subset, sort_keys=True, default=str).encode())
    for path in sorted(Path(p) for p in input_paths):
        digest.update(str(path).encode())
        if path.exists():
            digest.update(file_hash(path).encode())
    return digest.hexdigest()


class _Manifest:
    def __init__(self, run_dir: Path):
        self.path = run_dir / "cache_manifest.json"
        self.data = json.loads(self.path.read_text()) if self.path.exists() else {}

    def hit(self, stage: str, key: str, output_dir: Path) -> bool:
        return self.data.get(stage) == key and output_dir.exists()

    def record(self, stage: str, key: str) -> None:
        self.data[stage] = key
        self.path.write_text(json.dumps(self.data, indent=2, sort_keys=True))


# ---------------------------------------------------------------------------
# Stage implementations
# ---------------------------------------------------------------------------


def _load_adapters(config: ExperimentConfig):
    a = config.adapters
    tagger = make_tagger(a.tagger)
    parser = make_parser(a.parser)
    synonyms = StaticSynonyms.from_json(a.synonyms) if a.synonyms else StaticSynonyms({})
    kb = LexicalKnowledgeBase.from_json(a.knowledge_base) if a.knowledge_base else LexicalKnowledgeBase()
    commonsense = StaticCommonsense.from_json(a.commonsense) if a.commonsense else StaticCommonsense()
    cooccurrence = CooccurrenceIndex.from_json(a.cooccurrence) if a.cooccurrence else CooccurrenceIndex()
    return tagger, parser, synonyms, kb, commonsense, cooccurrence


def _stage_mine(ctx: PipelineContext, out: Path) -> None:
    config = ctx.config
    if not config.corpus:
        raise PreconditionError("mine stage requires config key 'corpus'")
    tagger, parser, synonyms, *_ = _load_adapters(config)
    lines = Path(config.corpus).read_text(encoding="utf-8").splitlines()
    mined = extract_similes(lines, tagger, source="general_corpus")
    annotated = [annotate_components(r, parser, tagger) for r in mined.records]
    normalized, dropped = normalize_records(annotated, synonyms)
    clean, review = partition_review(normalized)
    rec.save_records(out / "records.jsonl", clean)
    rec.save_records(out / "review.jsonl", review)
    stats = dataset_stats(clean) if clean else None
    (out / "stats.json").write_text(
        json.dumps(
            {
                "mined": len(mined.records),
                "skipped_lines": mined.skipped_lines,
                "dropped": dict(dropped),
                "review": len(review),
                "stats": stats.as_dict() if stats else None,
            },
            indent=2,
        )
    )


def _candidate_to_dict(c: DistractorCandidate) -> dict:
    return {
        "word": c.word,
        "origin": c.origin,
        "frequency": c.frequency,
        "similarity": c.similarity,
        "human_label": c.human_label,
    }


def _candidate_from_dict(d: dict) -> DistractorCandidate:
    return DistractorCandidate(
        word=d["word"],
        origin=d["origin"],
        frequency=d.get("frequency"),
        similarity=d.get("similarity"),
        human_label=d.get("human_label", "unreviewed"),
    )


def _stage_distractors(ctx: PipelineContext, out: Path) -> None:
    config = ctx.config
    _, _, _, kb, commonsense, cooccurrence = _load_adapters(config)
    records = rec.load_records(ctx.stage_dir("mine") / "records.jsonl")
    encoder = ctx.model(config.selection_encoder)
    rows = []
    for record in records:
        candidates = generate_candidates(record, kb, commonsense, cooccurrence)
        ranked = rank_distractors(record, candidates, encoder) if candidates else []
        rows.append(
            {"record_id": record.record_id, "candidates": [_candidate_to_dict(c) for c in ranked]}
        )
    rec.write_jsonl(out / "selections.jsonl", rows)


def _stage_confirm(ctx: PipelineContext, out: Path) -> None:
    """Human true-negative confirmation; pass-through without a session."""
    selections_path = ctx.stage_dir("distractors") / "selections.jsonl"
    if ctx.session is None:
        shutil.copyfile(selections_path, out / "selections.jsonl")
        (out / "confirm_summary.json").write_text(
            json.dumps({"mode": "pass-through", "note": "no interactive session attached"})
        )
        return
    records = {r.record_id: r for r in rec.load_records(ctx.stage_dir("mine") / "records.jsonl")}
    rows = list(rec.read_jsonl(selections_path))
    items, pools, by_item = [], {}, {}
    for row in rows:
        candidates = [_candidate_from_dict(d) for d in row["candidates"]]
        if len(candidates) < 3:
            continue
        record = records[row["record_id"]]
        item = build_probe(record, candidates[:3], _probe_seed(ctx.config, record.record_id))
        items.append(item)
        pools[item.item_id] = candidates[3:]
        by_item[item.item_id] = row
    result = confirm_distractors(items, pools, ctx.session)
    for item in result.items:
        row = by_item[item.item_id]
        row["accepted"] = [o for i, o in enumerate(item.options) if i != item.answer_index]
    excluded_ids = {item.item_id for item, _ in result.excluded}
    for item_id in excluded_ids:
        by_item[item_id]["excluded"] = True
    rec.write_jsonl(out / "selections.jsonl", rows)
    rec.write_jsonl(out / "transcript.jsonl", result.transcript)
    (out / "confirm_summary.json").write_text(
        json.dumps({"mode": "interactive", "confirmed": len(result.items), "excluded": len(result.excluded)})
    )


def _probe_seed(config: ExperimentConfig, record_id: str) -> int:
    return (zlib.crc32(record_id.encode()) ^ config.seeds[0]) & 0x7FFFFFFF


def _stage_build(ctx: PipelineContext, out: Path) -> None:
    config = ctx.config
    records = {r.record_id: r for r in rec.load_records(ctx.stage_dir("mine") / "records.jsonl")}
    confirm_dir = ctx.stage_dir("confirm")
    selections_path = (
        confirm_dir / "selections.jsonl"
        if (confirm_dir / "selections.jsonl").exists()
        else ctx.stage_dir("distractors") / "selections.jsonl"
    )
    items = []
    dropped = 0
    for row in rec.read_jsonl(selections_path):
        if row.get("excluded"):
            dropped += 1
            continue
        candidates = [_candidate_from_dict(d) for d in row["candidates"]]
        if row.get("accepted"):
            by_word = {c.word: c for c in candidates}
            chosen = [by_word[w] for w in row["accepted"] if w in by_word][:3]
        else:
            chosen = candidates[:3]
        if len(chosen) < 3:
            dropped += 1
            continue
        record = records[row["record_id"]]
        items.append(build_probe(record, chosen, _probe_seed(config, record.record_id)))
    rec.save_items(out / "probes.jsonl", items)
    rec.save_records(out / "records.jsonl", [i.source_record for i in items])
    (out / "build_summary.json").write_text(json.dumps({"built": len(items), "dropped": dropped}))


def _stage_finetune(ctx: PipelineContext, out: Path) -> None:
    config = ctx.config
    if not config.supervision_corpus:
        raise PreconditionError("finetune stage requires config key 'supervision_corpus'")
    tagger, parser, synonyms, *_ = _load_adapters(config)
    lines = Path(config.supervision_corpus).read_text(encoding="utf-8").splitlines()
    mined = extract_similes(lines, tagger, pattern_mode="loose", source="supervision")
    annotated = [annotate_components(r, parser, tagger) for r in mined.records]
    normalized, _ = normalize_records(annotated, synonyms)
    usable = [r for r in normalized if r.prop]
    rec.save_records(out / "supervision_records.jsonl", usable)
    ke_variant = config.ke_variant if config.objective == "ours" else "none"
    for seed in config.seeds:
        model = ctx.model(config.model_name, seed=seed)
        train_config = TrainConfig(
            alpha=config.alpha,
            batch_size=config.batch_size,
            learning_rate=config.learning_rate,
            epochs=config.epochs,
            max_len=config.max_len,
            seed=seed,
            ke_variant=ke_variant,
        )
        finetune(usable, model, train_config, run_dir=out / str(seed))


def _dataset_paths(ctx: PipelineContext) -> dict[str, tuple[Path, Path]]:
    config = ctx.config
    datasets: dict[str, tuple[Path, Path]] = {}
    for name, spec in config.datasets.items():
        pieces = str(spec).split(":")
        if len(pieces) != 2:
            raise PreconditionError(
                f"dataset {name!r} must be 'probes.jsonl:records.jsonl', got {spec!r}"
            )
        datasets[name] = (Path(pieces[0]), Path(pieces[1]))
    if not datasets:
        build_dir = ctx.stage_dir("build")
        if (build_dir / "probes.jsonl").exists():
            datasets["built"] = (build_dir / "probes.jsonl", build_dir / "records.jsonl")
    if not datasets:
        raise PreconditionError("eval stage has no datasets (config.datasets or build output)")
    return datasets


def _eval_model_for(ctx: PipelineContext, seed: int) -> MaskedLM:
    finetune_dir = ctx.stage_dir("finetune") / str(seed) / "checkpoint"
    if finetune_dir.exists():
        key = f"checkpoint:{finetune_dir}"
        if key not in ctx._models:
            ctx._models[key] = load_model(
                str(finetune_dir), device=ctx.config.device, max_len=ctx.config.max_len
            )
        return ctx._models[key]
    return ctx.model(ctx.config.model_name, seed=seed)


def _stage_eval(ctx: PipelineContext, out: Path) -> None:
    config = ctx.config
    setting = "zero_shot"
    if ctx.stage_dir("finetune").exists():
        setting = "ke_finetuned" if config.objective == "ours" else "mlm_finetuned"
    reports = []
    details: list[dict] = []
    for name, (probes_path, records_path) in _dataset_paths(ctx).items():
        items = rec.load_items(probes_path, records_path)
        report = evaluation.evaluate(
            items,
            lambda seed: _eval_model_for(ctx, seed),
            seeds=config.seeds,
            setting=setting,
            dataset=name,
            model_name=config.model_name,
        )
        report.save(out / f"report_{name}.json")
        reports.append(report)
        model = _eval_model_for(ctx, config.seeds[0])
        for item in items:
            chosen, _ = evaluation.score_options(item, model)
            details.append(
                {
                    "item_id": item.item_id,
                    "dataset": name,
                    "seed": config.seeds[0],
                    "correct": chosen == item.answer_index,
                    "category": item.source_record.category,
                }
            )
    evaluation.write_reports_csv(out / "results.csv", reports)
    rec.write_jsonl(out / "details.jsonl", details)


def _stage_analyze(ctx: PipelineContext, out: Path) -> None:
    config = ctx.config
    datasets = _dataset_paths(ctx)
    model = _eval_model_for(ctx, config.seeds[0])
    distance_rows = {}
    for name, (_, records_path) in datasets.items():
        loaded = rec.load_records(records_path)
        distance_rows[name] = analysis.component_distances(loaded, model)
    analysis.distances_to_csv(out / "distances.csv", distance_rows)
    details_path = ctx.stage_dir("eval") / "details.jsonl"
    if details_path.exists():
        rows = list(rec.read_jsonl(details_path))
        breakdown = analysis.category_breakdown(
            [r["correct"] for r in rows], [r.get("category") for r in rows]
        )
        analysis.categories_to_csv(out / "categories.csv", breakdown)
    first = next(iter(datasets.values()))
    first_records = rec.load_records(first[1])
    if first_records and len(first_records[0].tokens) >= 3:
        projection = analysis.pca_coords(first_records[0].tokens, model)
        analysis.pca_to_csv(out / "pca.csv", projection)


_STAGE_FNS: dict[str, Callable[[PipelineContext, Path], None]] = {
    "mine": _stage_mine,
    "distractors": _stage_distractors,
    "confirm": _stage_confirm,
    "build": _stage_build,
    "finetune": _stage_finetune,
    "eval": _stage_eval,
    "analyze": _stage_analyze,
}

_STAGE_CONFIG_KEYS: dict[str, tuple[str, ...]] = {
    "mine": ("corpus", "adapters"),
    "distractors": ("selection_encoder", "adapters", "max_len"),
    "confirm": (),
    "build": ("seeds",),
    "finetune": (
        "supervision_corpus", "model_name", "objective", "ke_variant", "alpha",
        "batch_size", "learning_rate", "epochs", "max_len", "seeds", "adapters",
    ),
    "eval": ("model_name", "objective", "datasets", "seeds", "max_len"),
    "analyze": ("model_name", "datasets", "max_len"),
}


def _stage_inputs(ctx: PipelineContext, stage: str) -> list[Path]:
    config = ctx.config
    inputs: list[Path] = []
    adapters = [
        Path(p)
        for p in (
            config.adapters.synonyms,
            config.adapters.knowledge_base,
            config.adapters.commonsense,
            config.adapters.cooccurrence,
        )
        if p
    ]
    if stage == "mine" and config.corpus:
        inputs = [Path(config.corpus), *adapters]
    elif stage == "distractors":
        inputs = [ctx.stage_dir("mine") / "records.jsonl", *adapters]
    elif stage == "confirm":
        inputs = [ctx.stage_dir("distractors") / "selections.jsonl"]
    elif stage == "build":
        inputs = [
            ctx.stage_dir("mine") / "records.jsonl",
            ctx.stage_dir("confirm") / "selections.jsonl",
            ctx.stage_dir("distractors") / "selections.jsonl",
        ]
    elif stage == "finetune" and config.supervision_corpus:
        inputs = [Path(config.supervision_corpus), *adapters]
    elif stage in ("eval", "analyze"):
        inputs = [Path(p) for spec in config.datasets.values() for p in str(spec).split(":")]
        build_probes = ctx.stage_dir("build") / "probes.jsonl"
        if not config.datasets and build_probes.exists():
            inputs.append(build_probes)
        if stage == "analyze":
            details = ctx.stage_dir("eval") / "details.jsonl"
            if details.exists():
                inputs.append(details)
    return inputs


def default_stages(config: ExperimentConfig) -> list[str]:
    stages = []
    if config.corpus:
        stages += ["mine", "distractors", "confirm", "build"]
    if config.supervision_corpus:
        stages.append("finetune")
    if config.datasets or config.corpus:
        stages += ["eval", "analyze"]
    return stages


def run_pipeline(
    config: ExperimentConfig,
    stages: Sequence[str] | None = None,
    session: object | None = None,
) -> tuple[Path, list[StageOutcome]]:
    """Execute the requested stages under ``config.output_dir``."""
    config.validate_paths()
    stages = list(stages) if stages is not None else default_stages(config)
    unknown = set(stages) - set(ALL_STAGES)
    if unknown:
        raise PreconditionError(f"unknown stages: {sorted(unknown)}")
    run_dir = Path(config.output_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    save_config(config, run_dir / "config.yaml")
    (run_dir / "version.json").write_text(
        json.dumps({"code_version": __version__, "seeds": config.seeds})
    )
    ctx = PipelineContext(config=config, run_dir=run_dir, session=session)
    manifest = _Manifest(run_dir)
    outcomes: list[StageOutcome] = []
    for stage in stages:
        out_dir = ctx.stage_dir(stage)
        subset = {k: getattr(config, k) if k != "adapters" else config.adapters.__dict__
                  for k in _STAGE_CONFIG_KEYS[stage]}
        if stage == "confirm":
            subset["interactive"] = session is not None
        key = _stage_key(stage, _stage_inputs(ctx, stage), subset)
        if manifest.hit(stage, key, out_dir):
            outcomes.append(StageOutcome(stage, cache_hit=True, output_dir=out_dir))
            continue
        if out_dir.exists():
            shutil.rmtree(out_dir)
        out_dir.mkdir(parents=True)
        try:
            _STAGE_FNS[stage](ctx, out_dir)
        except PreconditionError:
            raise
        except Exception as err:
            raise StageError(stage, str(err)) from err
        manifest.record(stage, key)
        outcomes.append(StageOutcome(stage, cache_hit=False, output_dir=out_dir))
    return run_dir, outcomes
