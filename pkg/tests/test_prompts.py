from __future__ import annotations

import difflib

import pytest

from conftest import make_instance
from rexgot.model import MissingStageInput, Stage
from rexgot.prompts import (
    OMITTED_MARKER,
    PromptKind,
    StageMismatch,
    assemble_context,
    estimate_tokens,
    option_entries,
    render,
    render_prompt,
    target_text,
    template_version,
)


def test_stage_t_has_five_lettered_option_lines(bob_movie_instance):
    block = assemble_context(bob_movie_instance, Stage.T)
    option_lines = block.segment_text("options").splitlines()
    assert len(option_lines) == 5
    assert option_lines[0].startswith("A. ")
    assert option_lines[4].startswith("E. ")


def test_stage_t1_contains_exclusion_segment(bob_movie_instance):
    a1 = "Options C and D are unreasonable because the context rules them out."
    block = assemble_context(bob_movie_instance, Stage.T1, a1=a1)
    assert block.stage is Stage.T1
    assert a1 in block.segment_text("exclusion_result")
    assert block.segment_text("exclusion_result").startswith("Excluded options and reasons:")


def test_stage_t2_without_a2_raises(bob_movie_instance):
    with pytest.raises(MissingStageInput):
        assemble_context(bob_movie_instance, Stage.T2, a1="some exclusion")


def test_stage_t1_without_a1_raises(bob_movie_instance):
    with pytest.raises(MissingStageInput):
        assemble_context(bob_movie_instance, Stage.T1)


def test_dialogue_turns_numbered_with_speakers(bob_movie_instance):
    dialogue = assemble_context(bob_movie_instance, Stage.T).segment_text("dialogue")
    lines = dialogue.splitlines()
    assert lines[0].startswith("1. Alice: ")
    assert lines[1].startswith("2. Bob: ")
    assert len(lines) == 4


def test_target_line_quotes_target(bob_movie_instance):
    block = assemble_context(bob_movie_instance, Stage.T)
    assert block.segment_text("target") == f'Target: "{bob_movie_instance.target.text}"'
    assert target_text(block) == bob_movie_instance.target.text


def test_standard_render_ends_with_instruction(bob_movie_instance):
    block = assemble_context(bob_movie_instance, Stage.T)
    prompt = render(PromptKind.STANDARD, block)
    assert prompt.endswith("which options are correct?")
    assert prompt.startswith(block.render())


def test_cot_render_mentions_step_by_step(bob_movie_instance):
    prompt = render(PromptKind.VANILLA_COT, assemble_context(bob_movie_instance, Stage.T))
    assert "let's think step-by-step" in prompt
    assert prompt.endswith("which options are correct and why?")


def test_step1_render_asks_unreasonable_and_why(bob_movie_instance):
    prompt = render(PromptKind.STEP1_EXCLUSION, assemble_context(bob_movie_instance, Stage.T))
    assert "are unreasonable and why?" in prompt
    assert f'"{bob_movie_instance.target.text}"' in prompt
    assert "Excluded:" in prompt


def test_step2_render_substitutes_option_clause(bob_movie_instance):
    block = assemble_context(bob_movie_instance, Stage.T1, a1="exclusion text")
    prompt = render(PromptKind.STEP2_VERDICT, block, option_index=2)
    expected = f"if the answer is C. {bob_movie_instance.options[2]}, is it reasonable and why?"
    assert expected in prompt


def test_step2_renders_differ_only_in_option_clause(bob_movie_instance):
    block = assemble_context(bob_movie_instance, Stage.T1, a1="exclusion text")
    one = render(PromptKind.STEP2_VERDICT, block, option_index=0)
    two = render(PromptKind.STEP2_VERDICT, block, option_index=1)
    changes = [
        line
        for line in difflib.ndiff(one.splitlines(), two.splitlines())
        if line.startswith(("-", "+"))
    ]
    assert len(changes) == 2
    assert "if the answer is A." in changes[0]
    assert "if the answer is B." in changes[1]


def test_step3_requires_stage_t2(bob_movie_instance):
    block = assemble_context(bob_movie_instance, Stage.T)
    with pytest.raises(StageMismatch):
        render(PromptKind.STEP3_COMBINE, block)


def test_step2_requires_stage_t1(bob_movie_instance):
    with pytest.raises(StageMismatch):
        render(
            PromptKind.STEP2_VERDICT,
            assemble_context(bob_movie_instance, Stage.T),
            option_index=0,
        )


def test_render_is_pure(bob_movie_instance):
    block = assemble_context(bob_movie_instance, Stage.T)
    assert render(PromptKind.STANDARD, block) == render(PromptKind.STANDARD, block)


def test_every_option_text_appears_exactly_once():
    instance = make_instance(m=5, option_prefix="distinct marker")
    prompt = render(PromptKind.STANDARD, assemble_context(instance, Stage.T))
    for text in instance.options:
        assert prompt.count(text) == 1


def test_option_entries_round_trip(bob_movie_instance):
    block = assemble_context(bob_movie_instance, Stage.T)
    entries = option_entries(block)
    assert [text for _, text in entries] == list(bob_movie_instance.options)


def test_forward_prompt_lists_remaining_options(bob_movie_instance):
    block = assemble_context(bob_movie_instance, Stage.T)
    prompt = render(PromptKind.FORWARD_PICK, block, taken=[0, 2])
    assert "Already selected: A, C." in prompt
    assert "among B, D, E" in prompt
    assert "Pick: <letter>" in prompt
    assert "More: yes" in prompt


def test_backward_prompt_lists_removed_options(bob_movie_instance):
    block = assemble_context(bob_movie_instance, Stage.T)
    prompt = render(PromptKind.BACKWARD_PICK, block, taken=[3])
    assert "Already removed: D." in prompt
    assert "Remove: <letter>" in prompt


def test_budget_drops_earliest_turns_never_target():
    instance = make_instance(m=3, n_turns=8, target_index=5)
    unbounded = render_prompt(instance, PromptKind.STANDARD)
    tight = render_prompt(instance, PromptKind.STANDARD, max_prompt_tokens=1)
    assert OMITTED_MARKER in tight
    assert instance.target.text in tight
    assert len(tight) < len(unbounded)
    # Turns after the target survive even under an impossible budget.
    assert f"6. B: {instance.dialogue[5].text}" in tight


def test_budget_large_enough_keeps_everything():
    instance = make_instance(m=3, n_turns=4)
    prompt = render_prompt(
        instance, PromptKind.STANDARD, max_prompt_tokens=estimate_tokens("x" * 100000)
    )
    assert OMITTED_MARKER not in prompt


def test_template_version_is_pinned():
    assert template_version() == "1"


def test_template_bytes_pinned():
    # The shipped instruction templates are versioned resources; any edit
    # must bump the VERSION file and these pins together.
    from importlib import resources

    standard = (resources.files("rexgot") / "templates" / "standard.txt").read_bytes()
    assert standard == b"{context}\n\nGiven the context, which options are correct?\n"
    step1 = (resources.files("rexgot") / "templates" / "step1_exclusion.txt").read_bytes()
    assert step1 == (
        b"{context}\n\nGiven the context, based on common sense, which options of "
        b'"{target}" are unreasonable and why?\nEnd with a single line '
        b'"Excluded: <letters>", or "Excluded: none" if every option is plausible.\n'
    )
