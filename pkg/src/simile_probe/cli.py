"""Command-line entry point.

Exit codes: 0 success, 2 precondition violation, 3 stage/runtime failure.
"""

from __future__ import annotations

import argparse
import json
import random
import sys
from pathlib import Path

from simile_probe import records as rec
from simile_probe.backends import load_model
from simile_probe.config import load_config
from simile_probe.errors import PreconditionError, SimileProbeError
from simile_probe.lm import DictEmbeddingTable, StubMaskedLM
from simile_probe.tagging import StaticSynonyms, make_parser, make_tagger, tokenize


class StdioSession:
    def say(self, text: str) -> None:
        print(text)

    def ask(self, prompt: str) -> str:
        return input(prompt)


def _dataset_pair(spec: str) -> tuple[str, Path, Path]:
    """Parse ``name=probes.jsonl:records.jsonl``."""
    if "=" not in spec:
        raise PreconditionError(f"dataset spec {spec!r} must be name=probes:records")
    name, paths = spec.split("=", 1)
    pieces = paths.split(":")
    if len(pieces) != 2:
        raise PreconditionError(f"dataset spec {spec!r} must give probes:records paths")
    return name, Path(pieces[0]), Path(pieces[1])


def _load_dataset(spec: str):
    name, probes, records = _dataset_pair(spec)
    return name, rec.load_items(probes, records)


def _cli_model(spec: str, items=None, max_len: int = 128, device: str = "cpu"):
    if spec == "stub":
        words: set[str] = set()
        for item in items or ():
            words.update(w.lower() for w in item.masked_tokens)
            words.update(w.lower() for w in item.options)
            words.update(w.lower() for w in item.source_record.tokens)
        return StubMaskedLM(sorted(words), max_len=max_len)
    return load_model(spec, device=device, max_len=max_len)


def _seeds(text: str) -> list[int]:
    return [int(s) for s in text.split(",") if s != ""]


# ---------------------------------------------------------------------------
# Subcommand handlers
# ---------------------------------------------------------------------------


def cmd_mine(args) -> int:
    from simile_probe.mining import (
        annotate_components,
        dataset_stats,
        extract_similes,
        normalize_records,
        partition_review,
    )

    tagger = make_tagger(args.tagger)
    parser = make_parser(args.parser)
    synonyms = StaticSynonyms.from_json(args.synonyms) if args.synonyms else StaticSynonyms({})
    lines = Path(args.input).read_text(encoding="utf-8").splitlines()
    result = extract_similes(lines, tagger, pattern_mode=args.pattern, source=args.source)
    annotated = [annotate_components(r, parser, tagger) for r in result.records]
    normalized, dropped = normalize_records(annotated, synonyms)
    clean, review = partition_review(normalized)
    out = Path(args.output_dir)
    rec.save_records(out / "records.jsonl", clean)
    rec.save_records(out / "review.jsonl", review)
    summary = {
        "mined": len(result.records),
        "skipped_lines": result.skipped_lines,
        "dropped": dict(dropped),
        "kept": len(clean),
        "review": len(review),
    }
    if clean:
        summary["stats"] = dataset_stats(clean).as_dict()
    (out / "stats.json").write_text(json.dumps(summary, indent=2))
    print(json.dumps(summary, indent=2))
    return 0


def cmd_index(args) -> int:
    from simile_probe.knowledge import CooccurrenceIndex

    tagger = make_tagger(args.tagger)
    lines = Path(args.corpus).read_text(encoding="utf-8").splitlines()
    index = CooccurrenceIndex.build(lines, tagger, window=args.window)
    index.save(args.output)
    print(f"indexed modifiers for {len(index.counts)} head words -> {args.output}")
    return 0


def cmd_distractors(args) -> int:
    from simile_probe.distractors import filter_single_token, generate_candidates, rank_distractors
    from simile_probe.knowledge import CooccurrenceIndex, LexicalKnowledgeBase, StaticCommonsense
    from simile_probe.pipeline import _candidate_to_dict

    records = rec.load_records(args.records)
    kb = LexicalKnowledgeBase.from_json(args.kb) if args.kb else LexicalKnowledgeBase()
    commonsense = StaticCommonsense.from_json(args.commonsense) if args.commonsense else StaticCommonsense()
    cooccurrence = CooccurrenceIndex.from_json(args.cooccurrence) if args.cooccurrence else CooccurrenceIndex()
    vocab = sorted(
        {w.lower() for r in records for w in r.tokens}
        | {w.lower() for r in records for w in kb.antonyms(r.prop) + kb.has_property(r.vehicle)}
    )
    encoder = (
        StubMaskedLM(vocab, max_len=args.max_len)
        if args.encoder == "stub"
        else load_model(args.encoder, max_len=args.max_len)
    )
    eval_model = None
    if args.filter_model and args.filter_model != "stub":
        eval_model = load_model(args.filter_model, max_len=args.max_len)
    rows = []
    for record in records:
        candidates = generate_candidates(record, kb, commonsense, cooccurrence)
        if eval_model is not None:
            candidates = filter_single_token(candidates, eval_model)
        ranked = rank_distractors(record, candidates, encoder) if candidates else []
        rows.append({"record_id": record.record_id, "candidates": [_candidate_to_dict(c) for c in ranked]})
    rec.write_jsonl(args.output, rows)
    print(f"wrote candidate rankings for {len(rows)} records -> {args.output}")
    return 0


def cmd_build(args) -> int:
    from simile_probe.distractors import build_probe
    from simile_probe.pipeline import _candidate_from_dict

    records = {r.record_id: r for r in rec.load_records(args.records)}
    items = []
    dropped = 0
    for row in rec.read_jsonl(args.selections):
        candidates = [_candidate_from_dict(d) for d in row["candidates"]]
        if len(candidates) < 3 or row["record_id"] not in records:
            dropped += 1
            continue
        items.append(build_probe(records[row["record_id"]], candidates[:3], args.seed))
    out = Path(args.output_dir)
    rec.save_items(out / "probes.jsonl", items)
    rec.save_records(out / "records.jsonl", [i.source_record for i in items])
    print(f"built {len(items)} probes ({dropped} dropped) -> {out}")
    return 0


def cmd_confirm(args) -> int:
    from simile_probe.distractors import confirm_distractors
    from simile_probe.pipeline import _candidate_from_dict

    items = rec.load_items(args.probes, args.records)
    pools: dict[str, list] = {}
    if args.selections:
        by_record = {row["record_id"]: row for row in rec.read_jsonl(args.selections)}
        for item in items:
            row = by_record.get(item.source_record.record_id)
            if row:
                used = {o.lower() for o in item.options}
                pools[item.item_id] = [
                    c for c in map(_candidate_from_dict, row["candidates"])
                    if c.word.lower() not in used
                ]
    result = confirm_distractors(items, pools, StdioSession(), annotators=args.annotators)
    out = Path(args.output_dir)
    rec.save_items(out / "probes.jsonl", result.items)
    rec.save_records(out / "records.jsonl", [i.source_record for i in result.items])
    rec.write_jsonl(out / "transcript.jsonl", result.transcript)
    print(f"confirmed {len(result.items)} items, excluded {len(result.excluded)}")
    return 0


def cmd_eval(args) -> int:
    from simile_probe.evaluation import evaluate, evaluate_baseline, emb_baseline, conscore_baseline, write_reports_csv

    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    reports = []
    for spec in args.dataset:
        name, items = _load_dataset(spec)
        if args.baseline:
            table = DictEmbeddingTable.from_text(args.embeddings)
            chooser = emb_baseline if args.baseline == "emb" else conscore_baseline
            result = evaluate_baseline(items, table, chooser)
            print(f"{name}: {args.baseline} baseline accuracy {result.accuracy:.4f} "
                  f"({result.n_scored} scored, {result.n_skipped} skipped)")
            continue
        model = _cli_model(args.model, items, max_len=args.max_len, device=args.device)
        report = evaluate(
            items,
            model,
            seeds=_seeds(args.seeds),
            setting=args.setting,
            dataset=name,
            model_name=args.model,
        )
        report.save(out / f"report_{name}.json")
        reports.append(report)
        print(f"{name}: mean accuracy {report.mean_accuracy:.4f} over seeds {sorted(report.per_seed)}")
    if reports:
        write_reports_csv(out / "results.csv", reports)
    return 0


def cmd_ablate(args) -> int:
    from simile_probe.evaluation import ablation_drops

    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    components = ["topic", "vehicle", "event", "comparator", "random"] if args.component == "all" else [args.component]
    for spec in args.dataset:
        name, items = _load_dataset(spec)
        model = _cli_model(args.model, items, max_len=args.max_len, device=args.device)
        drops = ablation_drops(items, model, components, seeds=_seeds(args.seeds), dataset=name)
        summary = {}
        for component, (report, drop) in drops.items():
            report.save(out / f"report_{name}_{component}.json")
            summary[component] = {"accuracy": report.mean_accuracy, "drop": drop}
            print(f"{name}/{component}: accuracy {report.mean_accuracy:.4f} (drop {drop:+.4f})")
        (out / f"ablation_{name}.json").write_text(json.dumps(summary, indent=2))
    return 0


def cmd_quiz(args) -> int:
    from simile_probe.evaluation import human_quiz

    name, items = _load_dataset(args.dataset)
    if args.sample and args.sample < len(items):
        items = random.Random(args.seed).sample(items, args.sample)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = human_quiz(
        items,
        args.annotators,
        StdioSession(),
        rng_seed=args.seed,
        transcript_path=out / "quiz_transcript.jsonl",
        dataset=name,
    )
    report.save(out / f"report_human_{name}.json")
    print(f"human accuracy on {name}: {report.mean_accuracy:.4f}")
    return 0


def cmd_finetune(args) -> int:
    from simile_probe.pipeline import run_pipeline

    config = load_config(args.config)
    if args.objective:
        config.objective = args.objective
    if args.ke_variant:
        config.ke_variant = args.ke_variant
    if args.alpha is not None:
        config.alpha = args.alpha
    if args.seed is not None:
        config.seeds = [args.seed]
    run_dir, outcomes = run_pipeline(config, stages=["finetune"])
    for outcome in outcomes:
        print(f"stage {outcome.name}: {'cache hit' if outcome.cache_hit else 'ran'} -> {outcome.output_dir}")
    return 0


def cmd_sentiment(args) -> int:
    from simile_probe.sentiment import SentimentConfig, load_reviews, prepare_reviews, train_head

    raw = load_reviews(args.reviews)
    examples = prepare_reviews(raw, rng_seed=args.seed)
    model = load_model(args.encoder, max_len=args.max_len, device=args.device)
    rates = (args.lr,) if args.lr else tuple(float(x) for x in args.lrs.split(","))
    config = SentimentConfig(
        learning_rates=rates,
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=args.seed,
    )
    result = train_head(examples, model, config)
    payload = {
        "encoder": result.encoder_name,
        "test_accuracy": result.test_accuracy,
        "dev_accuracy": result.dev_accuracy,
        "best_learning_rate": result.best_learning_rate,
        "best_epoch": result.best_epoch,
    }
    if args.output:
        Path(args.output).parent.mkdir(parents=True, exist_ok=True)
        Path(args.output).write_text(json.dumps(payload, indent=2))
    print(json.dumps(payload, indent=2))
    return 0


def cmd_analyze(args) -> int:
    from simile_probe import analysis

    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.what == "distances":
        rows = {}
        for spec in args.dataset:
            name, probes, records_path = _dataset_pair(spec)
            loaded = rec.load_records(records_path)
            model = _cli_model(args.model, rec.load_items(probes, records_path), max_len=args.max_len)
            rows[f"{args.model}:{name}"] = analysis.component_distances(loaded, model)
            print(f"{name}: {rows[f'{args.model}:{name}'].as_dict()}")
        analysis.distances_to_csv(out / "distances.csv", rows)
    elif args.what == "pca":
        tokens = tokenize(args.sentence)
        model = _cli_model(args.model, None, max_len=args.max_len) if args.model != "stub" else StubMaskedLM(
            sorted({w.lower() for w in tokens}), max_len=args.max_len
        )
        projection = analysis.pca_coords(tokens, model)
        analysis.pca_to_csv(out / "pca.csv", projection)
        print(f"explained variance: {projection.explained_variance_ratio.tolist()}")
    else:  # categories
        rows = list(rec.read_jsonl(args.details))
        breakdown = analysis.category_breakdown(
            [r["correct"] for r in rows], [r.get("category") for r in rows]
        )
        analysis.categories_to_csv(out / "categories.csv", breakdown)
        if not breakdown:
            print("no categorized items in the details file")
        for category, stats in breakdown.items():
            print(f"{category}: {stats.accuracy:.4f} (n={stats.support})")
    return 0


def cmd_import(args) -> int:
    from simile_probe.importers import import_released_dataset

    result = import_released_dataset(args.input, dataset_hint=args.hint)
    out = Path(args.output_dir)
    rec.save_items(out / "probes.jsonl", result.items)
    rec.save_records(out / "records.jsonl", result.records)
    for warning in result.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    if result.skipped:
        rec.write_jsonl(out / "import_skipped.jsonl", [{"row": i, "reason": r} for i, r in result.skipped])
    print(f"imported {len(result.items)} items ({len(result.skipped)} rows skipped) -> {out}")
    return 0


def cmd_run(args) -> int:
    from simile_probe.pipeline import run_pipeline

    config = load_config(args.config)
    stages = args.stages.split(",") if args.stages else None
    session = StdioSession() if args.interactive else None
    run_dir, outcomes = run_pipeline(config, stages=stages, session=session)
    for outcome in outcomes:
        print(f"stage {outcome.name}: {'cache hit' if outcome.cache_hit else 'ran'} -> {outcome.output_dir}")
    print(f"run directory: {run_dir}")
    return 0


# ---------------------------------------------------------------------------
# Parser wiring
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="probe", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mine", help="extract closed similes from a text corpus")
    p.add_argument("--input", required=True)
    p.add_argument("--output-dir", required=True)
    p.add_argument("--pattern", choices=("strict", "loose"), default="strict")
    p.add_argument("--source", default="general_corpus")
    p.add_argument("--tagger", default="rule")
    p.add_argument("--parser", default="heuristic")
    p.add_argument("--synonyms")
    p.set_defaults(func=cmd_mine)

    p = sub.add_parser("index", help="build a modifier co-occurrence index")
    p.add_argument("--corpus", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--tagger", default="rule")
    p.add_argument("--window", type=int, default=3)
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("distractors", help="generate and rank distractor candidates")
    p.add_argument("--records", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--kb")
    p.add_argument("--commonsense")
    p.add_argument("--cooccurrence")
    p.add_argument("--encoder", default="stub")
    p.add_argument("--filter-model")
    p.add_argument("--max-len", type=int, default=128)
    p.set_defaults(func=cmd_distractors)

    p = sub.add_parser("build", help="assemble probe items from ranked candidates")
    p.add_argument("--records", required=True)
    p.add_argument("--selections", required=True)
    p.add_argument("--output-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("confirm", help="interactive true-negative confirmation")
    p.add_argument("--probes", required=True)
    p.add_argument("--records", required=True)
    p.add_argument("--selections")
    p.add_argument("--output-dir", required=True)
    p.add_argument("--annotators", type=int, default=3)
    p.set_defaults(func=cmd_confirm)

    p = sub.add_parser("eval", help="evaluate a model on probe datasets")
    p.add_argument("--dataset", action="append", required=True, metavar="NAME=PROBES:RECORDS")
    p.add_argument("--model", default="stub")
    p.add_argument("--setting", default="zero_shot",
                   choices=("zero_shot", "mlm_finetuned", "ke_finetuned"))
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--baseline", choices=("emb", "conscore"))
    p.add_argument("--embeddings", help="word-vector text file for baselines")
    p.add_argument("--max-len", type=int, default=128)
    p.add_argument("--device", default="cpu")
    p.add_argument("--output-dir", default="eval_out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="component-hiding ablations")
    p.add_argument("--dataset", action="append", required=True)
    p.add_argument("--model", default="stub")
    p.add_argument("--component", default="all",
                   choices=("all", "topic", "vehicle", "event", "comparator", "random"))
    p.add_argument("--seeds", default="0")
    p.add_argument("--max-len", type=int, default=128)
    p.add_argument("--device", default="cpu")
    p.add_argument("--output-dir", default="ablation_out")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("quiz", help="human evaluation session")
    p.add_argument("--dataset", required=True)
    p.add_argument("--sample", type=int, default=250)
    p.add_argument("--annotators", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output-dir", default="quiz_out")
    p.set_defaults(func=cmd_quiz)

    p = sub.add_parser("finetune", help="fine-tune with the mlm or joint objective")
    p.add_argument("--config", required=True)
    p.add_argument("--objective", choices=("mlm", "ours"))
    p.add_argument("--ke-variant", choices=("transe", "transh", "transd", "none"))
    p.add_argument("--alpha", type=float)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("sentiment", help="frozen-encoder sentiment probe")
    p.add_argument("--reviews", required=True)
    p.add_argument("--encoder", required=True)
    p.add_argument("--lr", type=float, help="single learning rate (skips the sweep)")
    p.add_argument("--lrs", default="2e-5,3e-5,4e-5")
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-len", type=int, default=128)
    p.add_argument("--device", default="cpu")
    p.add_argument("--output")
    p.set_defaults(func=cmd_sentiment)

    p = sub.add_parser("analyze", help="representation and category analysis")
    p.add_argument("what", choices=("distances", "pca", "categories"))
    p.add_argument("--dataset", action="append", default=[])
    p.add_argument("--model", default="stub")
    p.add_argument("--sentence", default="")
    p.add_argument("--details", help="details.jsonl from an eval run")
    p.add_argument("--max-len", type=int, default=128)
    p.add_argument("--output-dir", default="analysis_out")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("import", help="import a released probe dataset")
    p.add_argument("--input", required=True)
    p.add_argument("--hint", choices=("general_corpus", "quizzes"))
    p.add_argument("--output-dir", required=True)
    p.set_defaults(func=cmd_import)

    p = sub.add_parser("run", help="run the configured pipeline stages")
    p.add_argument("--config", required=True)
    p.add_argument("--stages", help="comma-separated subset of stages")
    p.add_argument("--interactive", action="store_true")
    p.set_defaults(func=cmd_run)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args) or 0
    except PreconditionError as err:
        print(f"precondition error: {err}", file=sys.stderr)
        return 2
    except SimileProbeError as err:
        print(f"error: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
