"""Lexical-knowledge adapters used for distractor generation.

Three sources feed candidates: antonym/property lookups against a local
knowledge-base dump, a generative commonsense adapter (consumed through
the same narrow interface; this toolkit never trains one), and a
modifier co-occurrence index built offline from a reference corpus.
"""

from __future__ import annotations

import json
from collections import Counter
from pathlib import Path
from typing import Iterable, Protocol

from simile_probe.tagging import ADJ, ADV, NOUN, VERB, Tagger, tokenize


class KnowledgeBase(Protocol):
    """Relation lookups against a lexical/commonsense resource."""

    def antonyms(self, word: str) -> list[str]: ...

    def has_property(self, word: str) -> list[str]: ...


class LexicalKnowledgeBase:
    """Knowledge base backed by local relation dumps.

    Expected JSON shape::

        {"antonyms": {"busy": ["idle", ...]}, "has_property": {"bee": ["yellow", ...]}}
    """

    def __init__(self, antonyms: dict[str, list[str]] | None = None,
                 has_property: dict[str, list[str]] | None = None):
        self._antonyms = {k.lower(): list(v) for k, v in (antonyms or {}).items()}
        self._properties = {k.lower(): list(v) for k, v in (has_property or {}).items()}

    @classmethod
    def from_json(cls, path: str | Path) -> "LexicalKnowledgeBase":
        with Path(path).open() as fh:
            data = json.load(fh)
        return cls(data.get("antonyms"), data.get("has_property"))

    def antonyms(self, word: str) -> list[str]:
        return list(self._antonyms.get(word.lower(), []))

    def has_property(self, word: str) -> list[str]:
        return list(self._properties.get(word.lower(), []))


class CommonsenseAdapter(Protocol):
    """Generative property source keyed by a free-text concept."""

    def properties(self, concept: str) -> list[str]: ...


class StaticCommonsense:
    """File- or dict-backed stand-in for a generative commonsense model."""

    def __init__(self, table: dict[str, list[str]] | None = None):
        self.table = {k.lower(): list(v) for k, v in (table or {}).items()}

    @classmethod
    def from_json(cls, path: str | Path) -> "StaticCommonsense":
        with Path(path).open() as fh:
            return cls(json.load(fh))

    def properties(self, concept: str) -> list[str]:
        return list(self.table.get(concept.lower(), []))


class CooccurrenceIndex:
    """Adjective/adverb modifier counts per component word.

    Built offline by shallow-parsing a reference corpus; persists as JSON
    ``{word: {modifier: count}}``.
    """

    def __init__(self, counts: dict[str, dict[str, int]] | None = None):
        self.counts: dict[str, Counter] = {
            k.lower(): Counter({m.lower(): int(c) for m, c in v.items()})
            for k, v in (counts or {}).items()
        }

    @classmethod
    def from_json(cls, path: str | Path) -> "CooccurrenceIndex":
        with Path(path).open() as fh:
            return cls(json.load(fh))

    def save(self, path: str | Path) -> None:
        payload = {w: dict(c) for w, c in self.counts.items()}
        Path(path).write_text(json.dumps(payload, indent=0, sort_keys=True))

    @classmethod
    def build(cls, lines: Iterable[str], tagger: Tagger, window: int = 3) -> "CooccurrenceIndex":
        """Count ADJ modifiers near nouns and ADV modifiers near verbs.

        A windowed heuristic stands in for full dependency parsing of the
        reference corpus; swap the built index for one parsed offline when
        higher precision is needed.
        """
        index = cls()
        for line in lines:
            tokens = tokenize(line)
            if not tokens:
                continue
            try:
                tags = tagger.tag(tokens)
            except Exception:
                continue
            lowered = [t.lower() for t in tokens]
            for i, tag in enumerate(tags):
                if tag == NOUN:
                    head, wanted = lowered[i], ADJ
                elif tag == VERB:
                    head, wanted = lowered[i], ADV
                else:
                    continue
                lo, hi = max(0, i - window), min(len(tokens), i + window + 1)
                for j in range(lo, hi):
                    if j != i and tags[j] == wanted:
                        index.counts.setdefault(head, Counter())[lowered[j]] += 1
        return index

    def modifiers(self, word: str) -> Counter:
        return self.counts.get(word.lower(), Counter())


def rank_cooccurrence(
    component_word: str,
    corpus_stats: CooccurrenceIndex,
    *,
    top_n: int = 10,
    min_frequency: int = 2,
) -> list[tuple[str, int]]:
    """Top modifiers of a component word by frequency.

    Keeps at most ``top_n`` entries with frequency strictly greater than
    one, descending by count, ties broken lexicographically. Unknown
    words yield an empty list.
    """
    mods = corpus_stats.modifiers(component_word)
    eligible = [(w, c) for w, c in mods.items() if c >= min_frequency]
    eligible.sort(key=lambda wc: (-wc[1], wc[0]))
    return eligible[:top_n]
