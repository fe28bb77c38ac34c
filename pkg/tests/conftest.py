"""Shared fixtures: adapters, record builders, scripted sessions."""

from __future__ import annotations

import random

import pytest

from simile_probe.records import SimileRecord
from simile_probe.tagging import HeuristicParser, RuleBasedTagger, tokenize


@pytest.fixture(scope="session")
def tagger():
    return RuleBasedTagger()


@pytest.fixture(scope="session")
def parser():
    return HeuristicParser()


def find_span(tokens, phrase):
    words = phrase.split()
    lowered = [t.lower() for t in tokens]
    goal = [w.lower() for w in words]
    for i in range(len(tokens) - len(goal) + 1):
        if lowered[i : i + len(goal)] == goal:
            return (i, i + len(goal))
    raise AssertionError(f"{phrase!r} not found in {tokens}")


def make_record(
    sentence: str,
    prop: str,
    vehicle: str,
    topic: str | None = None,
    event: str | None = None,
    source: str = "user",
    category: str | None = None,
) -> SimileRecord:
    """Build a record by locating component words in the sentence."""
    tokens = tuple(tokenize(sentence))
    lowered = [t.lower() for t in tokens]
    as_positions = [i for i, t in enumerate(lowered) if t == "as"]
    if len(as_positions) >= 2:
        comparators = ((as_positions[0], as_positions[0] + 1), (as_positions[1], as_positions[1] + 1))
    elif "like" in lowered:
        i = lowered.index("like")
        comparators = ((i, i + 1),)
    else:
        raise AssertionError(f"no comparator in {sentence!r}")
    return SimileRecord(
        tokens=tokens,
        property_span=find_span(tokens, prop),
        vehicle_span=find_span(tokens, vehicle),
        topic_span=find_span(tokens, topic) if topic else (0, 0),
        event_span=find_span(tokens, event) if event else (0, 0),
        comparator_spans=comparators,
        source=source,
        category=category,
    )


_FUZZ_TOPICS = ["lady", "boy", "dog", "teacher", "river", "house", "singer", "child"]
_FUZZ_EVENTS = ["walks", "runs", "looks", "feels", "moves", "stands", "is", "was"]
_FUZZ_PROPS = ["slow", "fast", "busy", "cold", "white", "brave", "tall", "quiet", "sharp", "bright"]
_FUZZ_VEHICLES = ["snail", "deer", "bee", "ice", "ghost", "lion", "tree", "mouse", "knife", "star"]
_FUZZ_FILLER = ["yesterday", "there", "really", "outside", "today", "quietly", "often"]


def random_record(rng: random.Random) -> SimileRecord:
    """A structurally valid single-token-property record with random padding."""
    prefix = rng.sample(_FUZZ_FILLER, rng.randint(0, 3))
    suffix = rng.sample(_FUZZ_FILLER, rng.randint(0, 3))
    topic = rng.choice(_FUZZ_TOPICS)
    event = rng.choice(_FUZZ_EVENTS)
    prop = rng.choice(_FUZZ_PROPS)
    vehicle = rng.choice(_FUZZ_VEHICLES)
    tokens = prefix + [topic, event, "as", prop, "as", "a", vehicle] + suffix
    base = len(prefix)
    return SimileRecord(
        tokens=tuple(tokens),
        topic_span=(base, base + 1),
        event_span=(base + 1, base + 2),
        property_span=(base + 3, base + 4),
        vehicle_span=(base + 6, base + 7),
        comparator_spans=((base + 2, base + 3), (base + 4, base + 5)),
        source="user",
        category=rng.choice([None, "qualities", "condition", "color"]),
    )


def random_distractor_words(rng: random.Random, gold: str, k: int = 3) -> list[str]:
    pool = [w for w in _FUZZ_PROPS if w != gold]
    return rng.sample(pool, k)


class ScriptedSession:
    """Prompt session that replays a fixed list of answers."""

    def __init__(self, answers):
        self.answers = list(answers)
        self.shown: list[str] = []
        self.prompts: list[str] = []

    def say(self, text: str) -> None:
        self.shown.append(text)

    def ask(self, prompt: str) -> str:
        self.prompts.append(prompt)
        if not self.answers:
            raise EOFError("script exhausted")
        return self.answers.pop(0)
