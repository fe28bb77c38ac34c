"""Model backends: HuggingFace masked LMs and a tiny trainable encoder.

Both speak the read-only ``MaskedLM`` protocol for probing and a
grad-enabled batch interface for fine-tuning. Checkpoint resolution
order: explicit local path, then ``$SIMILE_PROBE_MODEL_DIR/<name>``,
then the HuggingFace cache / hub.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from simile_probe.errors import (
    ModelUnavailableError,
    PreconditionError,
    SequenceTooLongError,
)
from simile_probe.lm import (
    CLS,
    DEFAULT_MAX_LEN,
    PAD,
    SEP,
    SPECIAL_TOKENS,
    AlignedEncoding,
    MaskedLM,
)
from simile_probe.records import MASK_SENTINEL, UNK_SENTINEL, Span

MODEL_DIR_ENV = "SIMILE_PROBE_MODEL_DIR"


@dataclass
class TorchBatch:
    """Padded model inputs plus per-example surface alignment."""

    inputs: dict[str, torch.Tensor]
    alignments: list[AlignedEncoding]

    def __len__(self) -> int:
        return len(self.alignments)


class TorchMaskedLM:
    """Shared eval-path implementation over a grad-enabled torch backend.

    Subclasses provide ``batch_encode`` and ``forward_states``; this base
    derives the single-example numpy interface probing needs.
    """

    name: str = "torch"
    max_len: int = DEFAULT_MAX_LEN
    hidden_dim: int = 0
    module: nn.Module
    device: str = "cpu"

    def batch_encode(self, token_seqs: Sequence[Sequence[str]]) -> TorchBatch:
        raise NotImplementedError

    def forward_states(self, batch: TorchBatch) -> tuple[torch.Tensor, torch.Tensor]:
        raise NotImplementedError

    def subtoken_ids(self, word: str) -> list[int] | None:
        raise NotImplementedError

    def input_embedding(self, word: str) -> np.ndarray | None:
        raise NotImplementedError

    def gold_token_id(self, word: str) -> int:
        ids = self.subtoken_ids(word)
        if ids is None or len(ids) != 1:
            raise PreconditionError(
                f"{word!r} is not a single token under {self.name}; normalize it upstream"
            )
        return ids[0]

    def encode(self, tokens: Sequence[str]) -> tuple[AlignedEncoding, np.ndarray]:
        self.module.eval()
        with torch.no_grad():
            batch = self.batch_encode([tokens])
            hidden, _ = self.forward_states(batch)
        return batch.alignments[0], hidden[0].cpu().numpy()

    def logprobs_at_masks(self, tokens: Sequence[str]) -> tuple[list[int], np.ndarray]:
        self.module.eval()
        with torch.no_grad():
            batch = self.batch_encode([tokens])
            _, logits = self.forward_states(batch)
        positions = batch.alignments[0].mask_positions
        if not positions:
            raise PreconditionError("no mask sentinel in input")
        rows = F.log_softmax(logits[0, positions], dim=-1)
        return positions, rows.cpu().numpy()


def parameter_checksum(module: nn.Module) -> str:
    """SHA-256 over all parameter bytes, in parameter order."""
    digest = hashlib.sha256()
    for _, param in sorted(module.state_dict().items()):
        digest.update(param.detach().cpu().numpy().tobytes())
    return digest.hexdigest()


# ---------------------------------------------------------------------------
# HuggingFace backend
# ---------------------------------------------------------------------------


def _resolve_checkpoint(name_or_path: str) -> str:
    path = Path(name_or_path)
    if path.exists():
        return str(path)
    model_dir = os.environ.get(MODEL_DIR_ENV)
    if model_dir:
        candidate = Path(model_dir) / name_or_path
        if candidate.exists():
            return str(candidate)
    return name_or_path


class HfMaskedLM(TorchMaskedLM):
    """HuggingFace AutoModelForMaskedLM behind the toolkit protocols."""

    def __init__(self, name_or_path: str, device: str = "cpu",
                 max_len: int = DEFAULT_MAX_LEN, layer: int = -1):
        try:
            from transformers import AutoModelForMaskedLM, AutoTokenizer
        except ImportError as err:  # pragma: no cover - transformers is a hard dep
            raise ModelUnavailableError(f"transformers not importable: {err}") from err
        resolved = _resolve_checkpoint(name_or_path)
        try:
            self.tokenizer = AutoTokenizer.from_pretrained(resolved, use_fast=True)
            self.module = AutoModelForMaskedLM.from_pretrained(resolved)
        except Exception as err:
            raise ModelUnavailableError(
                f"cannot load checkpoint {name_or_path!r} (resolved to {resolved!r}): {err}. "
                f"Provide a local directory, set ${MODEL_DIR_ENV}, or populate the "
                f"HuggingFace cache."
            ) from err
        self.name = name_or_path
        self.device = device
        self.max_len = max_len
        self.layer = layer
        self.module.to(device)
        self.module.eval()
        self.hidden_dim = self.module.config.hidden_size

    def _surface_to_model(self, word: str) -> str:
        if word == MASK_SENTINEL:
            return self.tokenizer.mask_token
        if word == UNK_SENTINEL:
            return self.tokenizer.unk_token
        return word

    def batch_encode(self, token_seqs: Sequence[Sequence[str]]) -> TorchBatch:
        seqs = [[self._surface_to_model(w) for w in seq] for seq in token_seqs]
        enc = self.tokenizer(
            seqs, is_split_into_words=True, padding=True, return_tensors="pt"
        )
        mask_id = self.tokenizer.mask_token_id
        alignments = []
        for b, seq in enumerate(seqs):
            word_ids = enc.word_ids(b)
            length = int(enc["attention_mask"][b].sum())
            if length > self.max_len:
                raise SequenceTooLongError(length, self.max_len)
            raw_spans: list[Span | None] = [None] * len(seq)
            for pos, wid in enumerate(word_ids):
                if wid is None:
                    continue
                raw_spans[wid] = (pos, pos + 1) if raw_spans[wid] is None else (raw_spans[wid][0], pos + 1)
            spans: list[Span] = [s if s is not None else (0, 0) for s in raw_spans]
            ids = enc["input_ids"][b].tolist()[:length]
            alignments.append(
                AlignedEncoding(
                    subtoken_ids=ids,
                    word_to_subtoken=spans,
                    mask_positions=[i for i, t in enumerate(ids) if t == mask_id],
                    hidden_dim=self.hidden_dim,
                )
            )
        inputs = {k: v.to(self.device) for k, v in enc.items()}
        return TorchBatch(inputs=inputs, alignments=alignments)

    def forward_states(self, batch: TorchBatch) -> tuple[torch.Tensor, torch.Tensor]:
        out = self.module(**batch.inputs, output_hidden_states=True)
        return out.hidden_states[self.layer], out.logits

    def subtoken_ids(self, word: str) -> list[int] | None:
        if word == MASK_SENTINEL:
            return [self.tokenizer.mask_token_id]
        if word == UNK_SENTINEL:
            return [self.tokenizer.unk_token_id]
        plain = self.tokenizer(word, add_special_tokens=False)["input_ids"]
        spaced = self.tokenizer(" " + word, add_special_tokens=False)["input_ids"]
        unk = self.tokenizer.unk_token_id

        def usable(ids):
            return ids and not (len(ids) == 1 and ids[0] == unk)

        # Byte-level vocabularies distinguish word-initial pieces; prefer the
        # mid-sentence (spaced) variant when it is a single token.
        if usable(spaced) and len(spaced) == 1:
            piece = self.tokenizer.convert_ids_to_tokens(spaced[0])
            if piece and piece[0] in ("Ġ", "▁", " "):
                return spaced
        if usable(plain) and len(plain) == 1:
            return plain
        candidates = [ids for ids in (plain, spaced) if usable(ids)]
        if not candidates:
            return None
        return min(candidates, key=len)

    def input_embedding(self, word: str) -> np.ndarray | None:
        ids = self.subtoken_ids(word)
        if not ids:
            return None
        weight = self.module.get_input_embeddings().weight
        return weight[ids[0]].detach().cpu().numpy()

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        self.tokenizer.save_pretrained(directory)
        self.module.save_pretrained(directory)


# ---------------------------------------------------------------------------
# Tiny trainable encoder (smoke training, gradient checks, demos)
# ---------------------------------------------------------------------------


class _SelfAttentionBlock(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.out = nn.Linear(dim, dim)
        self.ff1 = nn.Linear(dim, 2 * dim)
        self.ff2 = nn.Linear(2 * dim, dim)
        self.ln1 = nn.LayerNorm(dim)
        self.ln2 = nn.LayerNorm(dim)

    def forward(self, x: torch.Tensor, pad_mask: torch.Tensor) -> torch.Tensor:
        q, k, v = self.q(x), self.k(x), self.v(x)
        scores = q @ k.transpose(-2, -1) / math.sqrt(x.shape[-1])
        scores = scores.masked_fill(~pad_mask[:, None, :], torch.finfo(x.dtype).min)
        x = self.ln1(x + self.out(torch.softmax(scores, dim=-1) @ v))
        x = self.ln2(x + self.ff2(F.gelu(self.ff1(x))))
        return x


class TinyEncoderModule(nn.Module):
    """Two-layer bidirectional encoder with a tied masked-word head."""

    def __init__(self, vocab_size: int, hidden_dim: int, max_len: int, n_layers: int = 2):
        super().__init__()
        self.emb = nn.Embedding(vocab_size, hidden_dim)
        self.pos = nn.Embedding(max_len, hidden_dim)
        self.blocks = nn.ModuleList(_SelfAttentionBlock(hidden_dim) for _ in range(n_layers))
        self.head_bias = nn.Parameter(torch.zeros(vocab_size))

    def forward(self, ids: torch.Tensor, pad_mask: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        positions = torch.arange(ids.shape[1], device=ids.device)
        x = self.emb(ids) + self.pos(positions)[None, :, :]
        for block in self.blocks:
            x = block(x, pad_mask)
        logits = x @ self.emb.weight.t() + self.head_bias
        return x, logits


class TinyMaskedLM(TorchMaskedLM):
    """Word-level (uncased) trainable encoder for toy-scale experiments."""

    def __init__(self, vocab: Sequence[str], hidden_dim: int = 32, n_layers: int = 2,
                 max_len: int = DEFAULT_MAX_LEN, seed: int = 0, name: str = "tiny"):
        words = [w for w in vocab if w not in SPECIAL_TOKENS]
        self.vocab = list(SPECIAL_TOKENS) + sorted(set(w.lower() for w in words))
        self.index = {w: i for i, w in enumerate(self.vocab)}
        self.hidden_dim = hidden_dim
        self.n_layers = n_layers
        self.max_len = max_len
        self.name = name
        self.device = "cpu"
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            self.module = TinyEncoderModule(len(self.vocab), hidden_dim, max_len, n_layers)

    @classmethod
    def build_from_corpus(cls, token_seqs: Sequence[Sequence[str]], **kwargs) -> "TinyMaskedLM":
        vocab = sorted({w.lower() for seq in token_seqs for w in seq})
        return cls(vocab, **kwargs)

    def _word_id(self, word: str) -> int:
        if word in SPECIAL_TOKENS:
            return self.index[word]
        return self.index.get(word.lower(), self.index[UNK_SENTINEL])

    def subtoken_ids(self, word: str) -> list[int] | None:
        if word in SPECIAL_TOKENS:
            return [self.index[word]]
        idx = self.index.get(word.lower())
        return None if idx is None else [idx]

    def input_embedding(self, word: str) -> np.ndarray | None:
        ids = self.subtoken_ids(word)
        if ids is None:
            return None
        return self.module.emb.weight[ids[0]].detach().cpu().numpy()

    def batch_encode(self, token_seqs: Sequence[Sequence[str]]) -> TorchBatch:
        dtype_ids = []
        alignments = []
        lengths = []
        for seq in token_seqs:
            ids = [self.index[CLS]] + [self._word_id(w) for w in seq] + [self.index[SEP]]
            if len(ids) > self.max_len:
                raise SequenceTooLongError(len(ids), self.max_len)
            spans = [(i + 1, i + 2) for i in range(len(seq))]
            mask_positions = [i + 1 for i, w in enumerate(seq) if w == MASK_SENTINEL]
            alignments.append(
                AlignedEncoding(
                    subtoken_ids=ids,
                    word_to_subtoken=spans,
                    mask_positions=mask_positions,
                    hidden_dim=self.hidden_dim,
                )
            )
            dtype_ids.append(ids)
            lengths.append(len(ids))
        width = max(lengths)
        pad = self.index[PAD]
        ids_tensor = torch.full((len(dtype_ids), width), pad, dtype=torch.long)
        pad_mask = torch.zeros((len(dtype_ids), width), dtype=torch.bool)
        for i, ids in enumerate(dtype_ids):
            ids_tensor[i, : len(ids)] = torch.tensor(ids, dtype=torch.long)
            pad_mask[i, : len(ids)] = True
        return TorchBatch(inputs={"ids": ids_tensor, "pad_mask": pad_mask}, alignments=alignments)

    def forward_states(self, batch: TorchBatch) -> tuple[torch.Tensor, torch.Tensor]:
        return self.module(batch.inputs["ids"], batch.inputs["pad_mask"])

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        torch.save(self.module.state_dict(), directory / "tiny_model.pt")
        (directory / "tiny_config.json").write_text(
            json.dumps(
                {
                    "vocab": self.vocab,
                    "hidden_dim": self.hidden_dim,
                    "n_layers": self.n_layers,
                    "max_len": self.max_len,
                    "name": self.name,
                }
            )
        )

    @classmethod
    def load(cls, directory: str | Path) -> "TinyMaskedLM":
        directory = Path(directory)
        config = json.loads((directory / "tiny_config.json").read_text())
        model = cls(
            vocab=config["vocab"],
            hidden_dim=config["hidden_dim"],
            n_layers=config["n_layers"],
            max_len=config["max_len"],
            name=config["name"],
        )
        state = torch.load(directory / "tiny_model.pt", map_location="cpu", weights_only=True)
        model.module.load_state_dict(state)
        return model


def load_model(spec: str, device: str = "cpu", max_len: int = DEFAULT_MAX_LEN) -> MaskedLM:
    """Resolve a model spec string to a handle.

    A directory containing ``tiny_model.pt`` loads the tiny encoder; any
    other path or checkpoint name goes through the HuggingFace backend.
    """
    path = Path(_resolve_checkpoint(spec))
    if path.is_dir() and (path / "tiny_model.pt").exists():
        model = TinyMaskedLM.load(path)
        model.max_len = max_len
        return model
    return HfMaskedLM(spec, device=device, max_len=max_len)
