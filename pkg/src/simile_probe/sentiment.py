"""Frozen-encoder binary sentiment probe.

Rated reviews become a balanced positive/negative classification set
(1-2 stars negative, 4-5 positive, 3 dropped), split 6:2:2. Only a
two-layer perceptron on top of the frozen encoder's sequence-start
representation is trained; the encoder is checksummed before and after
to enforce the frozen contract.
"""

from __future__ import annotations

import csv
import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn

from simile_probe.backends import parameter_checksum
from simile_probe.errors import FrozenEncoderViolation, PreconditionError
from simile_probe.lm import MaskedLM, sentence_embedding
from simile_probe.tagging import tokenize

NEGATIVE_RATINGS = (1, 2)
POSITIVE_RATINGS = (4, 5)


@dataclass(frozen=True)
class ReviewExample:
    text: str
    rating: int
    label: str
    split: str


def label_for_rating(rating: int) -> str | None:
    if rating in NEGATIVE_RATINGS:
        return "negative"
    if rating in POSITIVE_RATINGS:
        return "positive"
    return None


def load_reviews(path: str | Path) -> list[tuple[str, int]]:
    """Read (text, rating) pairs from CSV or JSONL."""
    path = Path(path)
    rows: list[tuple[str, int]] = []
    if path.suffix.lower() in (".jsonl", ".json"):
        with path.open(encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    data = json.loads(line)
                    rows.append((data["text"], int(data["rating"])))
    else:
        with path.open(encoding="utf-8", newline="") as fh:
            for record in csv.DictReader(fh):
                rows.append((record["text"], int(record["rating"])))
    return rows


def prepare_reviews(raw: Sequence[tuple[str, int]], rng_seed: int) -> list[ReviewExample]:
    """Balanced, stratified train/dev/test reviews.

    Neutral (3-star) reviews are dropped, the majority class is
    downsampled to an exact 1:1 ratio, and each class is split 6:2:2.
    Deterministic given the seed.
    """
    by_label: dict[str, list[tuple[str, int]]] = {"positive": [], "negative": []}
    for text, rating in raw:
        if not 1 <= rating <= 5:
            raise PreconditionError(f"rating {rating} outside 1..5")
        label = label_for_rating(rating)
        if label is not None:
            by_label[label].append((text, rating))
    if not by_label["positive"] or not by_label["negative"]:
        raise PreconditionError(
            "a sentiment class is empty after filtering neutral reviews "
            f"(positive={len(by_label['positive'])}, negative={len(by_label['negative'])})"
        )
    rng = random.Random(rng_seed)
    keep = min(len(by_label["positive"]), len(by_label["negative"]))
    examples: list[ReviewExample] = []
    for label in ("negative", "positive"):
        pool = list(by_label[label])
        rng.shuffle(pool)
        pool = pool[:keep]
        n_train = round(0.6 * keep)
        n_dev = round(0.2 * keep)
        for i, (text, rating) in enumerate(pool):
            split = "train" if i < n_train else "dev" if i < n_train + n_dev else "test"
            examples.append(ReviewExample(text=text, rating=rating, label=label, split=split))
    return examples


def split_of(examples: Sequence[ReviewExample], split: str) -> list[ReviewExample]:
    return [e for e in examples if e.split == split]


# ---------------------------------------------------------------------------
# Head training over frozen features
# ---------------------------------------------------------------------------


@dataclass
class SentimentConfig:
    learning_rates: tuple[float, ...] = (2e-5, 3e-5, 4e-5)
    epochs: int = 200
    batch_size: int = 32
    seed: int = 0


@dataclass
class SentimentResult:
    test_accuracy: float
    dev_accuracy: float
    best_learning_rate: float
    best_epoch: int
    encoder_name: str
    per_lr_dev: dict[float, float] = field(default_factory=dict)


def extract_features(examples: Sequence[ReviewExample], encoder: MaskedLM) -> np.ndarray:
    """Sequence-start hidden state per review; cached by callers."""
    rows = []
    for example in examples:
        tokens = tokenize(example.text)[: encoder.max_len - 2]
        encoding, hidden = encoder.encode(tokens)
        rows.append(sentence_embedding(encoding, hidden))
    return np.stack(rows)


def _labels_tensor(examples: Sequence[ReviewExample]) -> torch.Tensor:
    return torch.tensor([1 if e.label == "positive" else 0 for e in examples], dtype=torch.long)


def _make_head(dim: int, seed: int) -> nn.Module:
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        return nn.Sequential(nn.Linear(dim, dim), nn.Tanh(), nn.Linear(dim, 2))


def _accuracy(head: nn.Module, features: torch.Tensor, labels: torch.Tensor) -> float:
    head.eval()
    with torch.no_grad():
        predictions = head(features).argmax(dim=-1)
    return float((predictions == labels).float().mean())


def train_head(
    examples: Sequence[ReviewExample],
    encoder: MaskedLM,
    config: SentimentConfig = SentimentConfig(),
) -> SentimentResult:
    """Train the MLP head; learning rate and epoch picked on dev accuracy.

    The encoder never receives gradients; its parameter checksum must be
    identical before and after, otherwise this raises.
    """
    train = split_of(examples, "train")
    dev = split_of(examples, "dev")
    test = split_of(examples, "test")
    if not train or not dev or not test:
        raise PreconditionError("need non-empty train/dev/test splits")

    module = getattr(encoder, "module", None)
    checksum_before = parameter_checksum(module) if module is not None else None

    feats = {
        "train": torch.tensor(extract_features(train, encoder), dtype=torch.float32),
        "dev": torch.tensor(extract_features(dev, encoder), dtype=torch.float32),
        "test": torch.tensor(extract_features(test, encoder), dtype=torch.float32),
    }
    labels = {"train": _labels_tensor(train), "dev": _labels_tensor(dev), "test": _labels_tensor(test)}
    dim = feats["train"].shape[1]

    best = None  # (dev_acc, lr, epoch, state_dict)
    per_lr_dev: dict[float, float] = {}
    for lr in config.learning_rates:
        head = _make_head(dim, config.seed)
        optimizer = torch.optim.AdamW(head.parameters(), lr=lr)
        rng = random.Random(config.seed)
        order = list(range(len(train)))
        best_for_lr = None
        for epoch in range(config.epochs):
            rng.shuffle(order)
            head.train()
            for start in range(0, len(order), config.batch_size):
                idx = order[start : start + config.batch_size]
                optimizer.zero_grad()
                logits = head(feats["train"][idx])
                loss = nn.functional.cross_entropy(logits, labels["train"][idx])
                loss.backward()
                optimizer.step()
            dev_acc = _accuracy(head, feats["dev"], labels["dev"])
            if best_for_lr is None or dev_acc > best_for_lr[0]:
                state = {k: v.clone() for k, v in head.state_dict().items()}
                best_for_lr = (dev_acc, epoch, state)
        per_lr_dev[lr] = best_for_lr[0]
        if best is None or best_for_lr[0] > best[0]:
            best = (best_for_lr[0], lr, best_for_lr[1], best_for_lr[2])

    if module is not None and parameter_checksum(module) != checksum_before:
        raise FrozenEncoderViolation(
            f"encoder {encoder.name} parameters changed during head training"
        )

    head = _make_head(dim, config.seed)
    head.load_state_dict(best[3])
    return SentimentResult(
        test_accuracy=_accuracy(head, feats["test"], labels["test"]),
        dev_accuracy=best[0],
        best_learning_rate=best[1],
        best_epoch=best[2],
        encoder_name=encoder.name,
        per_lr_dev=per_lr_dev,
    )
