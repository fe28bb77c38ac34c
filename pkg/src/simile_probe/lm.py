"""Uniform boundary to masked-language-model runtimes.

Everything downstream (probing, training, analysis) talks to a model
through this module: surface-token/subtoken alignment, last-layer hidden
states, vocabulary log-probabilities at mask positions, and static
embedding lookups. Checkpoint loading and device placement live behind
the backends; see ``simile_probe.backends``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np

from simile_probe.errors import (
    EmbeddingLookupError,
    PreconditionError,
    SequenceTooLongError,
)
from simile_probe.records import MASK_SENTINEL, UNK_SENTINEL, Span

PAD, CLS, SEP = "[PAD]", "[CLS]", "[SEP]"
SPECIAL_TOKENS = (PAD, CLS, SEP, MASK_SENTINEL, UNK_SENTINEL)

DEFAULT_MAX_LEN = 128


@dataclass
class AlignedEncoding:
    """Alignment between surface tokens and model subtokens.

    ``word_to_subtoken[i]`` is the half-open subtoken range of surface
    token ``i``; ranges are contiguous, ordered, non-overlapping, and
    cover every non-special subtoken. ``cls_position`` is the
    sequence-start special position used as the sentence embedding.
    """

    subtoken_ids: list[int]
    word_to_subtoken: list[Span]
    mask_positions: list[int]
    hidden_dim: int
    cls_position: int = 0

    def span_subtokens(self, span: Span) -> list[int]:
        indices: list[int] = []
        for w in range(span[0], span[1]):
            b, e = self.word_to_subtoken[w]
            indices.extend(range(b, e))
        return indices


class MaskedLM(Protocol):
    """Read-only model handle used by probing and analysis."""

    name: str
    max_len: int
    hidden_dim: int

    def encode(self, tokens: Sequence[str]) -> tuple[AlignedEncoding, np.ndarray]: ...

    def logprobs_at_masks(self, tokens: Sequence[str]) -> tuple[list[int], np.ndarray]: ...

    def subtoken_ids(self, word: str) -> list[int] | None: ...

    def input_embedding(self, word: str) -> np.ndarray | None: ...


def encode(tokens: Sequence[str], model: MaskedLM) -> tuple[AlignedEncoding, np.ndarray]:
    """Last-layer hidden state per subtoken plus the surface alignment."""
    return model.encode(tokens)


def mask_logprobs(masked_tokens: Sequence[str], model: MaskedLM) -> np.ndarray:
    """Log-softmax over the vocabulary at the single mask position."""
    n_masks = list(masked_tokens).count(MASK_SENTINEL)
    if n_masks != 1:
        raise PreconditionError(f"expected exactly one mask sentinel, found {n_masks}")
    _, logprobs = model.logprobs_at_masks(masked_tokens)
    return logprobs[0]


def pool_span(encoding: AlignedEncoding, hidden_states: np.ndarray, span: Span) -> np.ndarray:
    """Arithmetic mean of the hidden vectors under a surface-token span."""
    indices = encoding.span_subtokens(span)
    if not indices:
        raise PreconditionError(f"span {span} maps to no subtokens")
    return hidden_states[indices].mean(axis=0)


def sentence_embedding(encoding: AlignedEncoding, hidden_states: np.ndarray) -> np.ndarray:
    """Hidden state of the sequence-start special position."""
    return hidden_states[encoding.cls_position]


# ---------------------------------------------------------------------------
# Static embedding tables
# ---------------------------------------------------------------------------


class EmbeddingTable(Protocol):
    def vec(self, word: str) -> np.ndarray | None: ...


class DictEmbeddingTable:
    """In-memory word-vector table; loads GloVe-style text files."""

    def __init__(self, table: dict[str, Sequence[float]]):
        self.table = {k.lower(): np.asarray(v, dtype=np.float64) for k, v in table.items()}

    @classmethod
    def from_text(cls, path: str | Path) -> "DictEmbeddingTable":
        table = {}
        with Path(path).open(encoding="utf-8") as fh:
            for line in fh:
                parts = line.rstrip().split(" ")
                if len(parts) > 2:
                    table[parts[0]] = [float(x) for x in parts[1:]]
        return cls(table)

    def vec(self, word: str) -> np.ndarray | None:
        return self.table.get(word.lower())


class ModelEmbeddingTable:
    """Embedding table served by a model's input-embedding matrix."""

    def __init__(self, model: MaskedLM):
        self.model = model

    def vec(self, word: str) -> np.ndarray | None:
        return self.model.input_embedding(word)


def static_embedding(word: str, table: EmbeddingTable, model: MaskedLM | None = None) -> np.ndarray:
    """The word's static vector, falling back to the model input embedding
    of its first subtoken. Raises listing every source tried."""
    vec = table.vec(word)
    if vec is not None:
        return np.asarray(vec, dtype=np.float64)
    tried = ["embedding table"]
    if model is not None:
        vec = model.input_embedding(word)
        if vec is not None:
            return np.asarray(vec, dtype=np.float64)
        tried.append(f"input embeddings of {model.name}")
    raise EmbeddingLookupError(f"no vector for {word!r}; tried: {', '.join(tried)}")


# ---------------------------------------------------------------------------
# Deterministic stub backend (tests, dry runs, demos)
# ---------------------------------------------------------------------------

LogitHook = Callable[[Sequence[str], int], dict[str, float]]


class StubMaskedLM:
    """Numpy-only model handle with deterministic embeddings.

    Hidden states are the token embeddings lightly mixed with the mean
    content embedding, so the sequence-start position reacts to word
    substitutions the way a contextual encoder would. Mask logits default
    to embedding-vs-context similarity; tests can pin them per word via
    ``word_logits`` or per call via ``logit_fn(tokens, mask_index)``.
    """

    def __init__(
        self,
        vocab: Sequence[str],
        hidden_dim: int = 16,
        seed: int = 0,
        word_pieces: dict[str, Sequence[str]] | None = None,
        word_logits: dict[str, float] | None = None,
        logit_fn: LogitHook | None = None,
        max_len: int = DEFAULT_MAX_LEN,
        name: str = "stub",
    ):
        words = [w for w in vocab if w not in SPECIAL_TOKENS]
        self.vocab = list(SPECIAL_TOKENS) + words
        self.index = {w: i for i, w in enumerate(self.vocab)}
        self.hidden_dim = hidden_dim
        self.max_len = max_len
        self.name = name
        self.word_pieces = {k: list(v) for k, v in (word_pieces or {}).items()}
        self.word_logits = word_logits
        self.logit_fn = logit_fn
        rng = np.random.default_rng(seed)
        self.emb = rng.standard_normal((len(self.vocab), hidden_dim)) / math.sqrt(hidden_dim)

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    def _pieces(self, word: str) -> list[str]:
        if word in SPECIAL_TOKENS:
            return [word]
        if word in self.word_pieces:
            return list(self.word_pieces[word])
        if word in self.index or word.lower() in self.index:
            return [word if word in self.index else word.lower()]
        return [UNK_SENTINEL]

    def subtoken_ids(self, word: str) -> list[int] | None:
        pieces = self.word_pieces.get(word)
        if pieces is None:
            key = word if word in self.index else word.lower()
            if key not in self.index:
                return None
            pieces = [key]
        if any(p not in self.index for p in pieces):
            return None
        return [self.index[p] for p in pieces]

    def input_embedding(self, word: str) -> np.ndarray | None:
        ids = self.subtoken_ids(word)
        if ids is None:
            return None
        return self.emb[ids[0]].copy()

    def encode(self, tokens: Sequence[str]) -> tuple[AlignedEncoding, np.ndarray]:
        ids = [self.index[CLS]]
        word_to_subtoken: list[Span] = []
        for word in tokens:
            pieces = self._pieces(word)
            begin = len(ids)
            ids.extend(self.index[p] for p in pieces)
            word_to_subtoken.append((begin, len(ids)))
        ids.append(self.index[SEP])
        if len(ids) > self.max_len:
            raise SequenceTooLongError(len(ids), self.max_len)
        mask_id = self.index[MASK_SENTINEL]
        mask_positions = [i for i, t in enumerate(ids) if t == mask_id]
        hidden = self.emb[ids].copy()
        content = hidden[1:-1]
        context = content.mean(axis=0) if len(content) else np.zeros(self.hidden_dim)
        hidden = hidden + 0.1 * context
        hidden[0] = context
        encoding = AlignedEncoding(
            subtoken_ids=ids,
            word_to_subtoken=word_to_subtoken,
            mask_positions=mask_positions,
            hidden_dim=self.hidden_dim,
        )
        return encoding, hidden

    def logprobs_at_masks(self, tokens: Sequence[str]) -> tuple[list[int], np.ndarray]:
        encoding, hidden = self.encode(tokens)
        if not encoding.mask_positions:
            raise PreconditionError("no mask sentinel in input")
        mask_word_indices = [
            w for w, t in enumerate(tokens) if t == MASK_SENTINEL
        ]
        rows = []
        for word_idx, pos in zip(mask_word_indices, encoding.mask_positions):
            if self.logit_fn is not None:
                logits = self._from_word_scores(self.logit_fn(tokens, word_idx))
            elif self.word_logits is not None:
                logits = self._from_word_scores(self.word_logits)
            else:
                logits = self.emb @ hidden[pos]
            rows.append(log_softmax(logits))
        return encoding.mask_positions, np.stack(rows)

    def _from_word_scores(self, scores: dict[str, float]) -> np.ndarray:
        logits = np.full(len(self.vocab), -20.0)
        for word, value in scores.items():
            key = word if word in self.index else word.lower()
            if key in self.index:
                logits[self.index[key]] = value
        return logits


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    return shifted - np.log(np.exp(shifted).sum())
