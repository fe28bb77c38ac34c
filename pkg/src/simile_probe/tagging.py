"""Tokenization, part-of-speech tagging, and shallow parsing adapters.

The mining stage only needs coarse tags (ADJ / NOUN / VERB / DET / ADV /
ADP) around the comparator pattern, so the built-in tagger is a
lexicon-plus-suffix rule system. Richer taggers or parsers can be plugged
in behind the same protocols; they are selected by name in the experiment
config.
"""

from __future__ import annotations

import json
import re
from pathlib import Path
from typing import Protocol, Sequence

from simile_probe.records import Span

_TOKEN_RE = re.compile(r"[A-Za-z]+(?:['’][A-Za-z]+)*|\d+(?:\.\d+)?|[^\sA-Za-z\d]")
_SENTINEL_RE = re.compile(r"\[(?:MASK|UNK)\]")


def tokenize(line: str) -> list[str]:
    """Split a raw line into surface tokens, separating punctuation.

    Mask/unknown sentinels survive as single tokens.
    """
    tokens: list[str] = []
    pos = 0
    for match in _SENTINEL_RE.finditer(line):
        tokens.extend(_TOKEN_RE.findall(line[pos : match.start()]))
        tokens.append(match.group(0))
        pos = match.end()
    tokens.extend(_TOKEN_RE.findall(line[pos:]))
    return tokens


# Coarse tag set
NOUN, VERB, ADJ, ADV, DET, PRON, ADP, CONJ, NUM, PUNCT, OTHER = (
    "NOUN", "VERB", "ADJ", "ADV", "DET", "PRON", "ADP", "CONJ", "NUM", "PUNCT", "X",
)

_DETERMINERS = {
    "a", "an", "the", "this", "that", "these", "those", "my", "your", "his",
    "her", "its", "our", "their", "some", "any", "no", "every", "each", "another",
}
_PRONOUNS = {
    "i", "you", "he", "she", "it", "we", "they", "me", "him", "us", "them",
    "who", "whom", "someone", "something", "everyone", "everything", "anybody",
    "himself", "herself", "itself", "myself", "themselves", "ourselves",
}
_PREPOSITIONS = {
    "as", "of", "in", "on", "at", "by", "for", "with", "to", "from", "about",
    "after", "before", "over", "under", "into", "through", "during", "without",
    "against", "between", "among", "around", "near", "upon", "like", "off",
    "above", "below", "behind", "beyond", "inside", "outside", "toward", "towards",
}
_CONJUNCTIONS = {"and", "or", "but", "because", "if", "when", "while", "than", "so", "although", "though"}
_AUXILIARIES = {
    "is", "are", "was", "were", "be", "been", "being", "am",
    "has", "have", "had", "do", "does", "did",
    "will", "would", "can", "could", "may", "might", "must", "should", "shall",
}
_ADVERBS = {
    "well", "very", "so", "too", "quite", "rather", "almost", "always", "never",
    "often", "there", "here", "now", "then", "just", "still", "also", "not",
    "n't", "even", "again", "away", "back", "up", "down", "out", "maybe",
}
_ADJECTIVES = {
    # category exemplars and frequent simile properties
    "strong", "weak", "cruel", "intelligent", "brave", "bad", "busy", "idle",
    "safe", "vain", "cold", "warm", "bitter", "soft", "loud", "big", "scarce",
    "numerous", "tall", "tiny", "red", "black", "green", "white", "blue",
    "ancient", "new", "swift", "slow", "regular", "excited", "angry", "sad",
    "mad", "nervous", "fast", "quick", "quiet", "sly", "cool", "cute", "hot",
    "dry", "wet", "light", "dark", "happy", "proud", "gentle", "hungry",
    "blind", "fit", "free", "fresh", "flat", "hard", "old", "young", "sweet",
    "sour", "smooth", "rough", "sharp", "dull", "clean", "clear", "bright",
    "stubborn", "sick", "strange", "silly", "wise", "poor", "rich", "thin",
    "thick", "fat", "heavy", "deep", "high", "low", "long", "short", "wide",
    "easy", "tough", "tender", "crazy", "plain", "pretty", "ugly", "fierce",
    "bold", "calm", "pale", "innocent", "delicious", "legal", "guilty",
    "yellow", "messy", "holy", "little", "good", "nice", "great", "small",
    "large", "slippery", "solid", "straight", "steady", "sturdy", "graceful",
    "playful", "fluffy", "shiny", "snug", "wild", "gruff", "tricky", "stiff",
    "timid", "meek", "fearless", "gay", "fine", "firm", "pure", "stale",
    "blunt", "brittle", "crisp", "damp", "faint", "frail", "keen", "lame",
    "lean", "mild", "neat", "pink", "ripe", "rude", "shy", "sleek", "slim",
    "stout", "tame", "vast", "warmer", "cheap", "dear", "drunk", "sober",
    "grand", "grave", "gross", "humble", "loyal", "mean", "noble", "odd",
    "raw", "real", "sane", "sore", "stern", "sure", "vivid", "weird",
    "newborn", "silent", "smart", "clever", "gloomy", "cheerful", "lively",
    "stealthy", "speedy", "chilly", "icy", "fiery", "golden", "silver",
    "grey", "gray", "brown", "orange", "purple", "crooked", "curly", "fuzzy",
    "hairy", "juicy", "lazy", "noisy", "rusty", "salty", "sandy", "scary",
    "shaky", "sleepy", "sticky", "stormy", "sunny", "tasty", "thirsty",
    "windy", "wavy", "foggy", "muddy", "dusty", "greasy", "grumpy", "jolly",
    "merry", "nimble", "stable", "supple", "agile", "alert", "eager",
}
_VERB_STEMS = {
    "run", "walk", "go", "come", "make", "take", "get", "give", "know",
    "think", "see", "say", "feel", "look", "seem", "become", "turn", "grow",
    "stand", "sit", "shine", "fight", "sleep", "eat", "drink", "climb",
    "dance", "sing", "swim", "fly", "jump", "move", "work", "play", "talk",
    "speak", "cry", "laugh", "smile", "live", "die", "fall", "rise", "drive",
    "ride", "float", "melt", "freeze", "burn", "glow", "crawl", "creep",
    "march", "stare", "gaze", "act", "appear", "stay", "remain", "keep",
    "sound", "taste", "smell", "wait", "sting",
}
_IRREGULAR_PAST = {
    "ran", "went", "came", "made", "took", "got", "gave", "knew", "thought",
    "saw", "said", "felt", "grew", "stood", "sat", "shone", "fought", "slept",
    "ate", "drank", "flew", "sang", "swam", "spoke", "drove", "rode", "rose",
    "fell", "crept", "froze", "kept", "stung",
}
_ADJ_SUFFIXES = ("ous", "ful", "ive", "able", "ible", "ish", "less", "est", "ier", "iest")
_SINGULAR_S = {"bus", "gas", "glass", "grass", "boss", "class", "kiss", "dress", "chaos", "lens", "iris", "walrus", "press"}
_IRREGULAR_PLURALS = {"men", "women", "children", "people", "feet", "teeth", "mice", "geese", "oxen", "cattle"}
_PLURAL_PRONOUNS = {"they", "we", "you", "these", "those", "both", "many", "others"}


class Tagger(Protocol):
    """Assigns a coarse part-of-speech tag to every surface token."""

    def tag(self, tokens: Sequence[str]) -> list[str]: ...

    def is_plural(self, word: str) -> bool: ...


class RuleBasedTagger:
    """Lexicon and suffix based tagger, adequate for simile patterns.

    Extra adjectives or verb stems can be supplied to extend coverage for
    a specific corpus without swapping in a statistical tagger.
    """

    def __init__(self, extra_adjectives: Sequence[str] = (), extra_verbs: Sequence[str] = ()):
        self.adjectives = _ADJECTIVES | {w.lower() for w in extra_adjectives}
        self.verb_stems = _VERB_STEMS | {w.lower() for w in extra_verbs}

    def tag_word(self, word: str) -> str:
        low = word.lower()
        if not any(c.isalnum() for c in word):
            return PUNCT
        if low.replace(".", "").isdigit():
            return NUM
        if low in _DETERMINERS:
            return DET
        if low in _PRONOUNS:
            return PRON
        if low in _AUXILIARIES:
            return VERB
        if low in _ADVERBS:
            return ADV
        if low in self.adjectives:
            return ADJ
        if low in _CONJUNCTIONS:
            return CONJ
        if low in _PREPOSITIONS:
            return ADP
        if low in self.verb_stems or low in _IRREGULAR_PAST:
            return VERB
        if low.endswith("s") and low[:-1] in self.verb_stems:
            return VERB
        if low.endswith("ly"):
            return ADV
        if low.endswith(("ing", "ed")) and len(low) > 4:
            return VERB
        if low.endswith(_ADJ_SUFFIXES) and len(low) > 4:
            return ADJ
        return NOUN

    def tag(self, tokens: Sequence[str]) -> list[str]:
        return [self.tag_word(t) for t in tokens]

    def is_plural(self, word: str) -> bool:
        low = word.lower()
        if low in _PLURAL_PRONOUNS or low in _IRREGULAR_PLURALS:
            return True
        if low in _SINGULAR_S or low.endswith(("ss", "us", "is")):
            return False
        return low.endswith("s")


class LexiconTagger(RuleBasedTagger):
    """Rule tagger extended with a word->tag lexicon loaded from JSON."""

    def __init__(self, lexicon_path: str | Path):
        super().__init__()
        with Path(lexicon_path).open() as fh:
            self.lexicon = {k.lower(): v for k, v in json.load(fh).items()}

    def tag_word(self, word: str) -> str:
        low = word.lower()
        if low in self.lexicon:
            return self.lexicon[low]
        return super().tag_word(low)


class DependencyAdapter(Protocol):
    """Finds the nominal subject and governing predicate of a comparison."""

    def subject_and_predicate(
        self, tokens: Sequence[str], tags: Sequence[str], before: int
    ) -> tuple[Span, Span]: ...


class HeuristicParser:
    """Shallow stand-in for a dependency parser.

    The subject is taken as the rightmost nominal before the predicate,
    the predicate as the rightmost contiguous verb group before the
    comparator. Returns empty spans when nothing qualifies.
    """

    def subject_and_predicate(
        self, tokens: Sequence[str], tags: Sequence[str], before: int
    ) -> tuple[Span, Span]:
        event_span: Span = (0, 0)
        verb_idx = None
        for i in range(before - 1, -1, -1):
            if tags[i] == VERB:
                verb_idx = i
                break
        if verb_idx is not None:
            start = verb_idx
            while start > 0 and tags[start - 1] == VERB:
                start -= 1
            event_span = (start, verb_idx + 1)
        topic_limit = event_span[0] if verb_idx is not None else before
        topic_span: Span = (0, 0)
        for i in range(topic_limit - 1, -1, -1):
            if tags[i] in (NOUN, PRON):
                topic_span = (i, i + 1)
                break
        return topic_span, event_span


class SynonymLookup(Protocol):
    """Maps a (possibly multi-word) property phrase to single-token synonyms."""

    def single_token_synonyms(self, phrase: str) -> list[str]: ...


class StaticSynonyms:
    """Synonym lookup backed by an in-memory or JSON-file mapping."""

    def __init__(self, table: dict[str, list[str]]):
        self.table = {k.lower(): list(v) for k, v in table.items()}

    @classmethod
    def from_json(cls, path: str | Path) -> "StaticSynonyms":
        with Path(path).open() as fh:
            return cls(json.load(fh))

    def single_token_synonyms(self, phrase: str) -> list[str]:
        hits = self.table.get(phrase.lower(), [])
        return [w for w in hits if len(w.split()) == 1]


def make_tagger(name: str, **kwargs) -> Tagger:
    """Instantiate a tagger adapter by config name."""
    if name == "rule":
        return RuleBasedTagger(**kwargs)
    if name == "lexicon":
        return LexiconTagger(**kwargs)
    raise ValueError(f"unknown tagger {name!r} (expected 'rule' or 'lexicon')")


def make_parser(name: str, **kwargs) -> DependencyAdapter:
    """Instantiate a dependency-parse adapter by config name."""
    if name == "heuristic":
        return HeuristicParser(**kwargs)
    raise ValueError(f"unknown parser {name!r} (expected 'heuristic')")
