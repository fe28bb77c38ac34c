"""Representation analysis: component distances, PCA views, category splits.

Output is plain data (and CSV emitters); plotting is left to external
tools.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from simile_probe.errors import DegenerateInputError, PreconditionError
from simile_probe.lm import MaskedLM, pool_span
from simile_probe.records import SimileRecord, span_len


@dataclass
class DistanceSummary:
    """Mean pairwise L2 distances between pooled component vectors."""

    mean_tp: float
    mean_pv: float
    mean_tv: float
    n_records: int
    n_skipped: int

    def as_dict(self) -> dict:
        return {
            "topic_property": self.mean_tp,
            "property_vehicle": self.mean_pv,
            "topic_vehicle": self.mean_tv,
            "n_records": self.n_records,
            "n_skipped": self.n_skipped,
        }


def component_distances(records: Sequence[SimileRecord], model: MaskedLM) -> DistanceSummary:
    """Average topic-property, property-vehicle, and topic-vehicle L2
    distances in the last hidden layer, over unmasked sentences.

    Records missing a topic or vehicle span are skipped and counted.
    """
    sums = np.zeros(3)
    used = skipped = 0
    for record in records:
        if span_len(record.topic_span) == 0 or span_len(record.vehicle_span) == 0:
            skipped += 1
            continue
        encoding, hidden = model.encode(record.tokens)
        t = pool_span(encoding, hidden, record.topic_span)
        p = pool_span(encoding, hidden, record.property_span)
        v = pool_span(encoding, hidden, record.vehicle_span)
        sums += (
            np.linalg.norm(t - p),
            np.linalg.norm(p - v),
            np.linalg.norm(t - v),
        )
        used += 1
    if used == 0:
        raise PreconditionError("no record had both topic and vehicle spans")
    means = sums / used
    return DistanceSummary(
        mean_tp=float(means[0]),
        mean_pv=float(means[1]),
        mean_tv=float(means[2]),
        n_records=used,
        n_skipped=skipped,
    )


@dataclass
class PcaProjection:
    coords: np.ndarray  # (n_tokens, 2)
    explained_variance_ratio: np.ndarray  # (2,)
    tokens: list[str]


def pca_coords(tokens: Sequence[str], model: MaskedLM) -> PcaProjection:
    """Project per-token last-layer vectors onto the sentence's top two
    principal components."""
    if len(tokens) < 3:
        raise PreconditionError(f"PCA needs at least 3 tokens, got {len(tokens)}")
    encoding, hidden = model.encode(tokens)
    matrix = np.stack(
        [pool_span(encoding, hidden, (i, i + 1)) for i in range(len(tokens))]
    )
    centered = matrix - matrix.mean(axis=0)
    _, singular, vt = np.linalg.svd(centered, full_matrices=False)
    tol = max(centered.shape) * np.finfo(centered.dtype).eps * (singular[0] if singular.size else 0)
    if np.sum(singular > tol) < 2:
        raise DegenerateInputError(
            "token matrix has rank < 2; cannot extract two principal components"
        )
    coords = centered @ vt[:2].T
    total = float(np.square(singular).sum())
    ratio = np.square(singular[:2]) / total
    return PcaProjection(coords=coords, explained_variance_ratio=ratio, tokens=list(tokens))


@dataclass
class CategoryAccuracy:
    accuracy: float
    support: int


def category_breakdown(
    correct: Sequence[bool],
    categories: Sequence[str | None],
) -> dict[str, CategoryAccuracy]:
    """Accuracy per category with support counts; uncategorized items are
    excluded."""
    if len(correct) != len(categories):
        raise PreconditionError("correctness flags and categories must align")
    hits: dict[str, list[int]] = {}
    for ok, category in zip(correct, categories):
        if category is None:
            continue
        hits.setdefault(category, []).append(int(ok))
    return {
        cat: CategoryAccuracy(accuracy=sum(v) / len(v), support=len(v))
        for cat, v in sorted(hits.items())
    }


# ---------------------------------------------------------------------------
# CSV emitters for external plotting
# ---------------------------------------------------------------------------


def distances_to_csv(path: str | Path, rows: dict[str, DistanceSummary]) -> None:
    """One row per encoder label."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["encoder", "topic_property", "property_vehicle", "topic_vehicle", "n_records", "n_skipped"])
        for label, summary in rows.items():
            writer.writerow(
                [label, summary.mean_tp, summary.mean_pv, summary.mean_tv, summary.n_records, summary.n_skipped]
            )


def pca_to_csv(path: str | Path, projection: PcaProjection) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["token", "pc1", "pc2"])
        for token, (x, y) in zip(projection.tokens, projection.coords):
            writer.writerow([token, float(x), float(y)])


def categories_to_csv(path: str | Path, breakdown: dict[str, CategoryAccuracy]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["category", "accuracy", "support"])
        for category, stats in breakdown.items():
            writer.writerow([category, stats.accuracy, stats.support])
