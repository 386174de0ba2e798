"""Shared fixtures: synthetic corpora with planted noise and scripted agents."""

from __future__ import annotations

import random
import threading

from cleanset.backends import AgentConfig, BackendResult, ScriptedBackend
from cleanset.corpus import Corpus, make_set
from cleanset.prompting import estimate_tokens, heuristic_token_count

TOPICS = (
    "a levee breach flooding the river district",
    "a songbird contest in a small mountain town",
    "the reopening of the central library",
    "a municipal budget dispute over transit funding",
    "a malaria vaccine trial reporting early results",
    "a lighthouse restoration finishing ahead of schedule",
)

BOILERPLATE = (
    "You can add location information to your posts from the web and third-party applications. "
    "You always have the option to delete your location history.",
    "This page is an archived snapshot captured as part of a routine collection of frequently "
    "updated web resources and may not reflect later updates.",
    "Please enable cookies on your web browser in order to continue. We use cookies to customize "
    "your experience and deliver personalized advertising across our sites.",
    "Thank you for reading. Please purchase a subscription to continue reading unlimited articles "
    "from our award-winning newsroom.",
)


def article_text(topic: str, k: int, set_id: str) -> str:
    return (
        f"Reporting on {topic}, correspondents filed update number {k} in story {set_id}. "
        f"Officials discussed {topic} at length, and residents following {topic} said the "
        f"latest developments matched earlier accounts."
    )


def summary_text(topic: str, set_id: str) -> str:
    return f"Story {set_id}: coverage centered on {topic}, with officials and residents weighing in."


def build_planted_corpus(
    n_sets: int = 50,
    seed: int = 13,
    all_noisy_every: int = 10,
    split: str = "train",
) -> tuple[Corpus, dict[str, set[int]]]:
    """Corpus with known-noisy documents; returns (corpus, truth map)."""
    rng = random.Random(seed)
    sets = []
    truth: dict[str, set[int]] = {}
    for i in range(1, n_sets + 1):
        set_id = f"s{i:03d}"
        n_docs = rng.randint(2, 5)
        if all_noisy_every and i % all_noisy_every == 0:
            noisy = set(range(1, n_docs + 1))
        else:
            n_noisy = rng.randint(0, min(2, n_docs - 1))
            noisy = set(rng.sample(range(1, n_docs + 1), n_noisy))
        topic = TOPICS[i % len(TOPICS)]
        docs = []
        for j in range(1, n_docs + 1):
            if j in noisy:
                docs.append(BOILERPLATE[(i + j) % len(BOILERPLATE)])
            else:
                docs.append(article_text(topic, j, set_id))
        sets.append(make_set(set_id, split, summary_text(topic, set_id), docs))
        truth[set_id] = noisy
    return Corpus(sets=tuple(sets), source="planted", format="memory"), truth


def accurate_answer(noisy: set[int]) -> str:
    lead = "I compared each document against the key points of the summary. "
    if not noisy:
        return lead + "Every document supports the summary. Therefore, the irrelevant document is: None"
    clause = "|".join(f"Document {i}" for i in sorted(noisy))
    body = "The flagged documents are platform boilerplate and never mention the summary's subject. "
    plural = "documents are" if len(noisy) > 1 else "document is"
    return lead + body + f"Therefore, the irrelevant {plural}: {clause}"


def adversarial_answer(noisy: set[int]) -> str:
    # Always wrong: claims clean sets have a noisy doc and noisy sets are clean.
    if noisy:
        return "Everything here looks consistent to me. Therefore, the irrelevant document is: None"
    return "Document 1 seems off-topic to me. Therefore, the irrelevant document is: Document 1"


def scripted_ensemble(
    truth: dict[str, set[int]],
    n_agents: int = 5,
    adversarial_ids: tuple[int, ...] = (5,),
) -> tuple[list[AgentConfig], ScriptedBackend]:
    """n scripted agents; the adversarial ones always answer incorrectly."""

    def respond(set_id: str, agent_id: int, messages) -> str:
        noisy = truth[set_id]
        if agent_id in adversarial_ids:
            return adversarial_answer(noisy)
        return accurate_answer(noisy)

    agents = [AgentConfig(agent_id=i, backend="scripted") for i in range(1, n_agents + 1)]
    return agents, ScriptedBackend(responder=respond)


class CountingBackend:
    """Wraps a backend, counting calls per set and tracking peak concurrency."""

    def __init__(self, inner) -> None:
        self.inner = inner
        self.calls_by_set: dict[str, int] = {}
        self.total_calls = 0
        self.in_flight = 0
        self.peak_in_flight = 0
        self._lock = threading.Lock()

    def complete(self, agent, messages, set_id: str) -> BackendResult:
        with self._lock:
            self.total_calls += 1
            self.calls_by_set[set_id] = self.calls_by_set.get(set_id, 0) + 1
            self.in_flight += 1
            self.peak_in_flight = max(self.peak_in_flight, self.in_flight)
        try:
            return self.inner.complete(agent, messages, set_id)
        finally:
            with self._lock:
                self.in_flight -= 1


class FlakyBackend:
    """Fails with the given error the first n times, then delegates."""

    def __init__(self, inner, failures: int, error_factory) -> None:
        self.inner = inner
        self.remaining = failures
        self.error_factory = error_factory
        self._lock = threading.Lock()

    def complete(self, agent, messages, set_id: str) -> BackendResult:
        with self._lock:
            if self.remaining > 0:
                self.remaining -= 1
                raise self.error_factory()
        return self.inner.complete(agent, messages, set_id)


def scripted_result(text: str, messages) -> BackendResult:
    return BackendResult(text=text, input_tokens=estimate_tokens(messages), output_tokens=heuristic_token_count(text))
