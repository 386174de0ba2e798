from __future__ import annotations

import random

import pytest

from cleanset.corpus import make_set
from cleanset.prompting import (
    FewShotExample,
    Message,
    PromptError,
    PromptTemplate,
    build_messages,
    default_template,
    estimate_tokens,
    heuristic_token_count,
    load_prompt_file,
    parse_prompt_file,
    render_prompt_file,
    render_target_block,
    validate_template,
)
from cleanset.verdict import parse_verdict


def test_render_target_block_exact_layout():
    s = make_set("x", "train", "s", ["a", "b"])
    assert render_target_block(s) == "[Summary]\ns\n[Document 1]\na\n[Document 2]\nb"


def test_render_target_block_single_document():
    block = render_target_block(make_set("x", "train", "sum", ["only"]))
    assert block.count("[Document") == 1
    assert "[Document 1]" in block


def test_render_target_block_zero_documents_errors():
    empty = make_set("q", "quarantine", "s", [])
    with pytest.raises(PromptError, match="no documents"):
        render_target_block(empty)


def test_build_messages_layout_three_shots():
    template = default_template()
    s = make_set("x", "train", "s", ["a"])
    messages = build_messages(template, s)
    assert len(messages) == 3 + 2 * len(template.shots) == 9
    assert [m.role for m in messages] == [
        "system", "user", "user", "assistant", "user", "assistant", "user", "assistant", "user",
    ]
    assert messages[-1].content == render_target_block(s)


def test_build_messages_zero_shots():
    template = PromptTemplate(system_text="sys", instruction_text="inst", shots=())
    messages = build_messages(template, make_set("x", "train", "s", ["a"]))
    assert [m.role for m in messages] == ["system", "user", "user"]


def test_build_messages_deterministic():
    template = default_template()
    s = make_set("x", "train", "sum text", ["a", "b", "c"])
    first = build_messages(template, s)
    second = build_messages(template, s)
    assert [(m.role, m.content) for m in first] == [(m.role, m.content) for m in second]


def test_validate_template_rejects_unparseable_shot_answer():
    bad = PromptTemplate(
        system_text="sys",
        instruction_text="inst",
        shots=(FewShotExample(target_block="[Summary]\ns\n[Document 1]\na", assistant_answer="no verdict here"),),
    )
    with pytest.raises(PromptError, match="shot 1"):
        validate_template(bad)


def test_estimate_tokens_empty():
    assert estimate_tokens([]) == 0


def test_estimate_tokens_single_message_heuristic():
    assert estimate_tokens([Message("user", "aaaa")]) == 1 + 4


def test_estimate_tokens_custom_counter():
    messages = [Message("user", "one two three")]
    assert estimate_tokens(messages, counter=lambda text: len(text.split()), per_message_overhead=0) == 3


def test_default_template_footprint_near_reported_budget():
    # A full call (3-shot prompt + ~2,000-word target) should land near the
    # ~3,500-token budget a corpus-scale annotation run was costed at.
    template = default_template()
    rng = random.Random(7)
    vocab = ["the", "of", "storm", "river", "council", "report", "water", "house",
             "press", "a", "field", "night", "coast", "in", "mayor", "city"]
    body = " ".join(rng.choice(vocab) for _ in range(2000))
    third = len(body) // 3
    s = make_set("x", "train", body[:third], [body[third : 2 * third], body[2 * third :]])
    estimate = estimate_tokens(build_messages(template, s))
    assert 3500 * 0.75 <= estimate <= 3500 * 1.25


def test_default_template_shots_parse_and_reference_existing_documents():
    template = default_template()
    assert len(template.shots) == 3
    for shot in template.shots:
        verdict = parse_verdict(shot.assistant_answer, n_docs=shot.n_docs)
        assert verdict.parse_status in ("ok", "none")
        assert all(1 <= i <= shot.n_docs for i in verdict.flagged)


def test_prompt_file_round_trip():
    template = default_template()
    rendered = render_prompt_file(template)
    reparsed = parse_prompt_file(rendered)
    assert reparsed == template


def test_prompt_file_structure_errors():
    with pytest.raises(PromptError, match="no ### sections"):
        parse_prompt_file("just text")
    with pytest.raises(PromptError, match="must start with"):
        parse_prompt_file("### INSTRUCTION\nx\n### SYSTEM\ny\n")
    with pytest.raises(PromptError, match="alternating"):
        parse_prompt_file("### SYSTEM\nx\n### INSTRUCTION\ny\n### SHOT TARGET\n[Document 1]\nz\n")


def test_load_prompt_file_override(tmp_path):
    template = PromptTemplate(
        system_text="custom system",
        instruction_text="custom instruction",
        shots=(
            FewShotExample(
                target_block="[Summary]\ns\n[Document 1]\na\n[Document 2]\nb",
                assistant_answer="Doc 2 is noise. Therefore, the irrelevant document is: Document 2",
            ),
        ),
    )
    path = tmp_path / "prompt.txt"
    path.write_text(render_prompt_file(template), encoding="utf-8")
    assert load_prompt_file(path) == template


def test_message_invariants():
    with pytest.raises(PromptError):
        Message("user", "")
    with pytest.raises(PromptError):
        Message("narrator", "x")
