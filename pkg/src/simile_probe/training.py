"""Joint masked-prediction + knowledge-embedding fine-tuning.

The property is treated as the relation between topic and vehicle; the
knowledge term scores the (topic, property, vehicle) triple with a
translation-style objective (MSE of ``topic + property`` against
``vehicle`` by default) on the last-layer representations, with the
property read at its masked position so one forward pass serves both
loss terms. Total objective: ``alpha * ke + mlm``.

The hyperplane and dynamic-projection variants cannot index per-relation
parameter tables here (properties are open vocabulary), so their
relation-specific vectors are derived from the property embedding via
small learned linear maps.
"""

from __future__ import annotations

import csv
import os
import random
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from simile_probe.backends import TorchBatch, TorchMaskedLM
from simile_probe.errors import PreconditionError, TrainingDiverged
from simile_probe.records import MASK_SENTINEL, SimileRecord, span_len

KE_VARIANTS = ("transe", "transh", "transd", "none")


@dataclass
class TrainConfig:
    alpha: float = 5.0
    batch_size: int = 16
    learning_rate: float = 1e-5
    epochs: int = 10
    max_len: int = 128
    seed: int = 0
    ke_variant: str = "transe"

    def __post_init__(self):
        if self.ke_variant not in KE_VARIANTS:
            raise PreconditionError(f"unknown ke_variant {self.ke_variant!r}")
        if self.ke_variant != "none" and self.alpha <= 0:
            raise PreconditionError("alpha must be positive when a KE variant is active")


@dataclass
class ComponentEmbeddings:
    """Topic / property / vehicle vectors from the last hidden layer.

    Shapes are ``[..., hidden_dim]``; during training the property vector
    is the hidden state at the masked property position.
    """

    topic: torch.Tensor
    prop: torch.Tensor
    vehicle: torch.Tensor

    def __post_init__(self):
        shapes = {tuple(self.topic.shape), tuple(self.prop.shape), tuple(self.vehicle.shape)}
        if len(shapes) != 1:
            raise PreconditionError(f"component embedding shapes differ: {shapes}")
        for name, tensor in (("topic", self.topic), ("prop", self.prop), ("vehicle", self.vehicle)):
            if not torch.isfinite(tensor).all():
                raise PreconditionError(f"non-finite entries in {name} embedding")


class TransHParams(nn.Module):
    """Maps the property embedding to a hyperplane normal and translation."""

    def __init__(self, dim: int):
        super().__init__()
        self.normal_map = nn.Linear(dim, dim, bias=False)
        self.translation_map = nn.Linear(dim, dim, bias=False)


class TransDParams(nn.Module):
    """Maps property/entity embeddings to dynamic projection vectors."""

    def __init__(self, dim: int):
        super().__init__()
        self.relation_map = nn.Linear(dim, dim, bias=False)
        self.entity_map = nn.Linear(dim, dim, bias=False)


def make_ke_params(variant: str, dim: int, seed: int = 0) -> nn.Module | None:
    """Learned parameters required by a KE variant (None for transe/none)."""
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        if variant == "transh":
            return TransHParams(dim)
        if variant == "transd":
            return TransDParams(dim)
    return None


def ke_loss(
    emb: ComponentEmbeddings,
    variant: str = "transe",
    params: nn.Module | None = None,
) -> torch.Tensor:
    """Knowledge-embedding MSE for one or a batch of triples."""
    t, p, v = emb.topic, emb.prop, emb.vehicle
    if variant == "none":
        return torch.zeros((), dtype=t.dtype, device=t.device)
    if variant == "transe":
        return torch.mean((t + p - v) ** 2)
    if variant == "transh":
        if not isinstance(params, TransHParams):
            raise PreconditionError("transh requires TransHParams")
        w = F.normalize(params.normal_map(p), dim=-1)
        t_perp = t - (w * t).sum(dim=-1, keepdim=True) * w
        v_perp = v - (w * v).sum(dim=-1, keepdim=True) * w
        translation = params.translation_map(p)
        return torch.mean((t_perp + translation - v_perp) ** 2)
    if variant == "transd":
        if not isinstance(params, TransDParams):
            raise PreconditionError("transd requires TransDParams")
        u_p = params.relation_map(p)
        u_t = params.entity_map(t)
        u_v = params.entity_map(v)
        t_proj = u_p * (u_t * t).sum(dim=-1, keepdim=True) + t
        v_proj = u_p * (u_v * v).sum(dim=-1, keepdim=True) + v
        return torch.mean((t_proj + p - v_proj) ** 2)
    raise PreconditionError(f"unknown ke variant {variant!r}")


# ---------------------------------------------------------------------------
# Batched forward shared by both loss terms
# ---------------------------------------------------------------------------


def _mask_property(record: SimileRecord) -> tuple[str, ...]:
    begin, end = record.property_span
    return record.tokens[:begin] + (MASK_SENTINEL,) + record.tokens[end:]


@dataclass
class _BatchForward:
    hidden: torch.Tensor
    logits: torch.Tensor
    batch: TorchBatch
    gold_ids: list[int]
    mask_positions: list[int]


def _forward_batch(records: Sequence[SimileRecord], model: TorchMaskedLM) -> _BatchForward:
    for record in records:
        if span_len(record.property_span) != 1:
            raise PreconditionError(
                f"record {record.record_id} has a multi-token property; normalize upstream"
            )
    token_seqs = [_mask_property(r) for r in records]
    gold_ids = [model.gold_token_id(r.prop) for r in records]
    batch = model.batch_encode(token_seqs)
    hidden, logits = model.forward_states(batch)
    mask_positions = []
    for alignment in batch.alignments:
        if len(alignment.mask_positions) != 1:
            raise PreconditionError("expected exactly one mask per training sentence")
        mask_positions.append(alignment.mask_positions[0])
    return _BatchForward(hidden, logits, batch, gold_ids, mask_positions)


def _mlm_from_forward(fwd: _BatchForward) -> torch.Tensor:
    device = fwd.logits.device
    rows = torch.arange(len(fwd.gold_ids), device=device)
    mask_logits = fwd.logits[rows, torch.tensor(fwd.mask_positions, device=device)]
    targets = torch.tensor(fwd.gold_ids, device=device)
    return F.cross_entropy(mask_logits, targets)


def _pool_torch(hidden_row: torch.Tensor, indices: list[int]) -> torch.Tensor:
    return hidden_row[indices].mean(dim=0)


def _ke_from_forward(
    fwd: _BatchForward,
    records: Sequence[SimileRecord],
    variant: str,
    params: nn.Module | None,
) -> tuple[torch.Tensor, int]:
    """Mean per-example KE loss over records with complete triples."""
    topics, props, vehicles = [], [], []
    for i, record in enumerate(records):
        if span_len(record.topic_span) == 0 or span_len(record.vehicle_span) == 0:
            continue
        alignment = fwd.batch.alignments[i]
        topic_idx = alignment.span_subtokens(record.topic_span)
        vehicle_idx = alignment.span_subtokens(record.vehicle_span)
        if not topic_idx or not vehicle_idx:
            continue
        topics.append(_pool_torch(fwd.hidden[i], topic_idx))
        props.append(fwd.hidden[i, fwd.mask_positions[i]])
        vehicles.append(_pool_torch(fwd.hidden[i], vehicle_idx))
    if not topics:
        return torch.zeros((), dtype=fwd.hidden.dtype, device=fwd.hidden.device), 0
    emb = ComponentEmbeddings(
        topic=torch.stack(topics), prop=torch.stack(props), vehicle=torch.stack(vehicles)
    )
    return ke_loss(emb, variant, params), len(topics)


def mlm_property_loss(records: Sequence[SimileRecord], model: TorchMaskedLM) -> torch.Tensor:
    """Mean cross-entropy of the gold property token at its mask position."""
    return _mlm_from_forward(_forward_batch(records, model))


@dataclass
class JointLossResult:
    total: torch.Tensor
    mlm: torch.Tensor
    ke: torch.Tensor
    n_ke_examples: int = 0


def joint_loss(
    records: Sequence[SimileRecord],
    model: TorchMaskedLM,
    config: TrainConfig,
    ke_params: nn.Module | None = None,
) -> JointLossResult:
    """``alpha * ke + mlm`` from a single forward pass.

    With ``ke_variant="none"`` the result is exactly the MLM loss.
    """
    fwd = _forward_batch(records, model)
    mlm = _mlm_from_forward(fwd)
    if config.ke_variant == "none":
        zero = torch.zeros((), dtype=mlm.dtype, device=mlm.device)
        return JointLossResult(total=mlm, mlm=mlm, ke=zero)
    ke, n_examples = _ke_from_forward(fwd, records, config.ke_variant, ke_params)
    total = config.alpha * ke + mlm
    return JointLossResult(total=total, mlm=mlm, ke=ke, n_ke_examples=n_examples)


# ---------------------------------------------------------------------------
# Fine-tuning loop
# ---------------------------------------------------------------------------


@dataclass
class TrainingResult:
    model: TorchMaskedLM
    log_rows: list[dict] = field(default_factory=list)
    checkpoint_dir: Path | None = None

    def epoch_losses(self) -> list[float]:
        by_epoch: dict[int, list[float]] = {}
        for row in self.log_rows:
            by_epoch.setdefault(row["epoch"], []).append(row["total"])
        return [sum(v) / len(v) for _, v in sorted(by_epoch.items())]


def _atomic_save(model: TorchMaskedLM, target: Path) -> None:
    tmp = target.with_name(target.name + f".tmp{os.getpid()}")
    if tmp.exists():
        shutil.rmtree(tmp)
    model.save(tmp)
    if target.exists():
        shutil.rmtree(target)
    os.replace(tmp, target)


def finetune(
    train_records: Sequence[SimileRecord],
    model: TorchMaskedLM,
    config: TrainConfig,
    run_dir: str | Path | None = None,
) -> TrainingResult:
    """Optimize the joint objective over shuffled batches.

    Checkpoints land in ``run_dir/checkpoint`` after every epoch via
    write-then-rename; a non-finite loss aborts, leaving the last good
    checkpoint on disk. The per-step loss log is written to
    ``run_dir/train_log.csv``.
    """
    if not train_records:
        raise PreconditionError("no training records")
    run_dir = Path(run_dir) if run_dir is not None else None
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
    ke_params = make_ke_params(config.ke_variant, model.hidden_dim, seed=config.seed)
    parameters = list(model.module.parameters())
    if ke_params is not None:
        ke_params.to(next(model.module.parameters()).device)
        parameters += list(ke_params.parameters())
    optimizer = torch.optim.AdamW(parameters, lr=config.learning_rate)
    rng = random.Random(config.seed)
    torch.manual_seed(config.seed)
    result = TrainingResult(model=model)
    step = 0
    order = list(train_records)
    for epoch in range(config.epochs):
        rng.shuffle(order)
        model.module.train()
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            optimizer.zero_grad()
            losses = joint_loss(batch, model, config, ke_params)
            if not torch.isfinite(losses.total):
                if run_dir is not None:
                    _write_log(run_dir / "train_log.csv", result.log_rows)
                raise TrainingDiverged(
                    f"non-finite loss at step {step}; last good checkpoint is from "
                    f"epoch {epoch - 1 if epoch else 'none'}"
                )
            losses.total.backward()
            optimizer.step()
            result.log_rows.append(
                {
                    "step": step,
                    "epoch": epoch,
                    "mlm_loss": float(losses.mlm.detach()),
                    "ke_loss": float(losses.ke.detach()),
                    "total": float(losses.total.detach()),
                }
            )
            step += 1
        if run_dir is not None:
            checkpoint = run_dir / "checkpoint"
            _atomic_save(model, checkpoint)
            result.checkpoint_dir = checkpoint
    model.module.eval()
    if run_dir is not None:
        _write_log(run_dir / "train_log.csv", result.log_rows)
    return result


def _write_log(path: Path, rows: list[dict]) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["step", "epoch", "mlm_loss", "ke_loss", "total"])
        writer.writeheader()
        writer.writerows(rows)
