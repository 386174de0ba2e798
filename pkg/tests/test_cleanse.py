from __future__ import annotations

import json
import random

import pytest

from cleanset.cleanse import (
    KEPT_BY_OVERRIDE,
    KEPT_BY_VOTE,
    REMOVED_BY_OVERRIDE,
    REMOVED_BY_VOTE,
    CleanseError,
    OverrideRecord,
    append_override,
    apply_decisions,
    effective_overrides,
    load_overrides,
)
from cleanset.corpus import Corpus, make_set
from cleanset.verdict import EnsembleDecision


def _decision(set_id: str, noisy: set[int], n_agents: int = 5) -> EnsembleDecision:
    return EnsembleDecision(
        set_id=set_id,
        tallies={i: n_agents - 1 for i in noisy},
        total_weight=n_agents,
        noisy=frozenset(noisy),
    )


def _override(set_id: str, doc: int, action: str, ts: str = "2024-01-01T00:00:00+00:00", note: str = "") -> OverrideRecord:
    return OverrideRecord(set_id=set_id, doc_index=doc, action=action, reviewer="rev", timestamp=ts, note=note)


def test_removal_and_reindexing():
    corpus = Corpus(sets=(make_set("a", "train", "s", ["one", "two", "three"]),))
    cleansed, log = apply_decisions(corpus, {"a": _decision("a", {1, 3})})
    survivors = cleansed.sets[0].documents
    assert [d.content for d in survivors] == ["two"]
    assert [d.index for d in survivors] == [1]
    actions = {entry.doc_index: entry.action for entry in log.entries}
    assert actions == {1: REMOVED_BY_VOTE, 2: KEPT_BY_VOTE, 3: REMOVED_BY_VOTE}


def test_all_noisy_moves_to_quarantine_with_documents_retained():
    corpus = Corpus(sets=(make_set("a", "validation", "s", ["x", "y"]),))
    cleansed, log = apply_decisions(corpus, {"a": _decision("a", {1, 2})})
    out = cleansed.sets[0]
    assert out.split == "quarantine"
    assert [d.content for d in out.documents] == ["x", "y"]
    assert all(entry.action == REMOVED_BY_VOTE for entry in log.entries)
    assert log.quarantined_from == {"a": "validation"}


def test_override_keep_beats_vote():
    corpus = Corpus(sets=(make_set("a", "train", "s", ["one", "two"]),))
    overrides = [_override("a", 2, "keep")]
    cleansed, log = apply_decisions(corpus, {"a": _decision("a", {2})}, overrides)
    assert [d.content for d in cleansed.sets[0].documents] == ["one", "two"]
    entry = next(e for e in log.entries if e.doc_index == 2)
    assert entry.action == KEPT_BY_OVERRIDE
    assert entry.override is not None
    assert entry.override.reviewer == "rev"


def test_override_remove_beats_vote_keep():
    corpus = Corpus(sets=(make_set("a", "train", "s", ["one", "two"]),))
    cleansed, log = apply_decisions(corpus, {"a": _decision("a", set())}, [_override("a", 1, "remove")])
    assert [d.content for d in cleansed.sets[0].documents] == ["two"]
    assert log.entries[0].action == REMOVED_BY_OVERRIDE


def test_latest_override_wins():
    corpus = Corpus(sets=(make_set("a", "train", "s", ["one"]),))
    overrides = [
        _override("a", 1, "remove", ts="2024-01-01T10:00:00+00:00"),
        _override("a", 1, "keep", ts="2024-01-02T10:00:00+00:00"),
    ]
    cleansed, _ = apply_decisions(corpus, {"a": _decision("a", set())}, overrides)
    assert cleansed.sets[0].doc_count == 1


def test_effective_overrides_order_insensitive():
    rng = random.Random(3)
    records = [
        _override("a", 1, "remove", ts="2024-01-01T10:00:00+00:00"),
        _override("a", 1, "keep", ts="2024-01-02T10:00:00+00:00"),
        _override("a", 2, "keep", ts="2024-01-01T10:00:00+00:00"),
        _override("b", 1, "remove", ts="2024-01-03T10:00:00+00:00"),
        # same timestamp, different actions: resolution must not depend on file order
        _override("b", 2, "keep", ts="2024-01-04T10:00:00+00:00", note="n1"),
        _override("b", 2, "remove", ts="2024-01-04T10:00:00+00:00", note="n2"),
    ]
    baseline = effective_overrides(records)
    for _ in range(20):
        shuffled = records[:]
        rng.shuffle(shuffled)
        assert effective_overrides(shuffled) == baseline


def test_unknown_override_targets_listed_before_any_mutation():
    corpus = Corpus(sets=(make_set("a", "train", "s", ["one", "two"]),))
    overrides = [_override("missing", 1, "keep"), _override("a", 9, "keep")]
    with pytest.raises(CleanseError) as err:
        apply_decisions(corpus, {"a": _decision("a", {1})}, overrides)
    message = str(err.value)
    assert "missing" in message
    assert "9" in message


def test_override_without_decision_rejected():
    corpus = Corpus(sets=(make_set("a", "train", "s", ["one"]), make_set("b", "train", "s", ["one"])))
    with pytest.raises(CleanseError, match="no decision"):
        apply_decisions(corpus, {"a": _decision("a", set())}, [_override("b", 1, "keep")])


def test_unannotated_sets_pass_through_and_are_flagged():
    corpus = Corpus(sets=(make_set("a", "train", "s", ["one"]), make_set("b", "train", "s", ["x", "y"])))
    cleansed, log = apply_decisions(corpus, {"a": _decision("a", set())})
    assert cleansed.get("b") is not None
    assert [d.content for d in cleansed.get("b").documents] == ["x", "y"]
    assert log.unannotated_set_ids == ["b"]
    assert {e.set_id for e in log.entries} == {"a"}


def test_split_preserved_for_non_quarantined_sets():
    sets = tuple(
        make_set(f"{split}-1", split, "s", ["keep", "drop"]) for split in ("train", "validation", "test")
    )
    decisions = {s.id: _decision(s.id, {2}) for s in sets}
    cleansed, _ = apply_decisions(Corpus(sets=sets), decisions)
    for s in cleansed:
        assert s.split == s.id.split("-")[0]


def _random_case(rng: random.Random):
    sets = []
    decisions = {}
    for i in range(rng.randint(1, 10)):
        n_docs = rng.randint(1, 6)
        set_id = f"s{i}"
        sets.append(make_set(set_id, rng.choice(["train", "validation", "test"]), f"sum {i}",
                             [f"{set_id}-doc{j}" for j in range(n_docs)]))
        if rng.random() < 0.8:
            noisy = {j for j in range(1, n_docs + 1) if rng.random() < 0.4}
            decisions[set_id] = _decision(set_id, noisy)
    return Corpus(sets=tuple(sets)), decisions


def test_conservation_invariant_on_random_corpora():
    rng = random.Random(11)
    for _ in range(50):
        corpus, decisions = _random_case(rng)
        cleansed, log = apply_decisions(corpus, decisions)
        by_id = {s.id: s for s in cleansed}
        logged = {}
        for entry in log.entries:
            logged.setdefault(entry.set_id, {})[entry.doc_index] = entry.action
        for original in corpus:
            out = by_id[original.id]
            if original.id not in decisions:
                assert original.id in log.unannotated_set_ids
                assert [d.content for d in out.documents] == [d.content for d in original.documents]
                continue
            actions = logged[original.id]
            # every original document accounted for exactly once
            assert sorted(actions) == list(range(1, len(original.documents) + 1))
            kept = [d.content for d in original.documents if actions[d.index] in (KEPT_BY_VOTE, KEPT_BY_OVERRIDE)]
            removed = [d.content for d in original.documents if actions[d.index] in (REMOVED_BY_VOTE, REMOVED_BY_OVERRIDE)]
            if kept:
                assert [d.content for d in out.documents] == kept
                assert sorted(kept + removed) == sorted(d.content for d in original.documents)
            else:
                assert out.split == "quarantine"
                assert [d.content for d in out.documents] == [d.content for d in original.documents]


def test_apply_decisions_is_idempotent():
    rng = random.Random(13)
    for _ in range(30):
        corpus, decisions = _random_case(rng)
        cleansed, _ = apply_decisions(corpus, decisions)
        # Remap: surviving documents kept their order, so a doc that survived
        # carries no noisy flag anymore; quarantined sets keep their flags.
        remapped = {}
        for s in cleansed:
            if s.id not in decisions:
                continue
            if s.split == "quarantine":
                remapped[s.id] = decisions[s.id]
            else:
                remapped[s.id] = _decision(s.id, set())
        again, log = apply_decisions(cleansed, remapped)
        for s, t in zip(sorted(again, key=lambda x: x.id), sorted(cleansed, key=lambda x: x.id)):
            assert s.id == t.id
            assert s.split == t.split
            assert [d.content for d in s.documents] == [d.content for d in t.documents]


def test_removal_log_file_format(tmp_path):
    corpus = Corpus(sets=(make_set("a", "train", "s", ["one", "two"]), make_set("b", "train", "s", ["x"])))
    cleansed, log = apply_decisions(corpus, {"a": _decision("a", {1})})
    path = tmp_path / "removal_log.jsonl"
    log.write(path)
    records = [json.loads(line) for line in path.read_text().splitlines()]
    doc_records = [r for r in records if "action" in r]
    assert {r["action"] for r in doc_records} == {REMOVED_BY_VOTE, KEPT_BY_VOTE}
    assert all({"set_id", "doc_index", "tally", "total_weight", "override"} <= set(r) for r in doc_records)
    assert {"set_id": "b", "unannotated": True} in records


def test_override_file_round_trip(tmp_path):
    path = tmp_path / "overrides.jsonl"
    first = _override("a", 1, "keep", note="checked by hand")
    second = _override("a", 2, "remove", ts="2024-02-02T00:00:00+00:00")
    append_override(path, first)
    append_override(path, second)
    loaded = load_overrides(path)
    assert loaded == [first, second]
    assert load_overrides(tmp_path / "absent.jsonl") == []


def test_override_action_validated():
    with pytest.raises(CleanseError):
        _override("a", 1, "destroy")
