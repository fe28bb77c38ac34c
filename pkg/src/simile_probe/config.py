"""Experiment configuration: one structured file drives a pipeline run.

Every run directory receives a fully resolved copy of its config plus
the code version, so results stay reproducible.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from simile_probe.errors import PreconditionError


@dataclass
class AdapterConfig:
    tagger: str = "rule"
    parser: str = "heuristic"
    synonyms: str | None = None
    knowledge_base: str | None = None
    commonsense: str | None = None
    cooccurrence: str | None = None
    embeddings: str | None = None


@dataclass
class ExperimentConfig:
    model_name: str = "bert-base-uncased"
    selection_encoder: str = "roberta-large"
    device: str = "cpu"
    max_len: int = 128
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    objective: str = "mlm"  # mlm | ours
    ke_variant: str = "transe"
    alpha: float = 5.0
    batch_size: int = 16
    learning_rate: float = 1e-5
    epochs: int = 10
    output_dir: str = "runs/run"
    corpus: str | None = None
    supervision_corpus: str | None = None
    datasets: dict[str, str] = field(default_factory=dict)
    reviews: str | None = None
    adapters: AdapterConfig = field(default_factory=AdapterConfig)

    def __post_init__(self):
        if not self.seeds:
            raise PreconditionError("seeds must be non-empty")
        if self.objective not in ("mlm", "ours"):
            raise PreconditionError(f"unknown objective {self.objective!r}")

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    def referenced_paths(self) -> dict[str, str]:
        """Config keys that must point at existing files."""
        paths: dict[str, str] = {}
        for key in ("corpus", "supervision_corpus", "reviews"):
            value = getattr(self, key)
            if value:
                paths[key] = value
        for name, value in self.datasets.items():
            for i, piece in enumerate(str(value).split(":")):
                paths[f"datasets.{name}[{i}]"] = piece
        for key in ("synonyms", "knowledge_base", "commonsense", "cooccurrence", "embeddings"):
            value = getattr(self.adapters, key)
            if value:
                paths[f"adapters.{key}"] = value
        return paths

    def validate_paths(self) -> None:
        for key, value in self.referenced_paths().items():
            if not Path(value).exists():
                raise PreconditionError(f"config key {key!r} references missing path {value!r}")


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    text = path.read_text()
    data = yaml.safe_load(text) if path.suffix in (".yaml", ".yml") else json.loads(text)
    if not isinstance(data, dict):
        raise PreconditionError(f"config file {path} did not parse to a mapping")
    adapters = AdapterConfig(**data.pop("adapters", {}))
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(data) - known
    if unknown:
        raise PreconditionError(f"unknown config keys: {sorted(unknown)}")
    return ExperimentConfig(adapters=adapters, **data)


def save_config(config: ExperimentConfig, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(config.as_dict(), sort_keys=True))
