from __future__ import annotations

import json
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from rexgot.backend import ScriptedBackend
from rexgot.model import MCQInstance, Utterance
from rexgot.prompts import PromptKind, render_prompt
from rexgot.reasoner import ReasonerConfig


def make_instance(
    instance_id="inst-1",
    m=4,
    gold=(0,),
    n_turns=3,
    target_index=1,
    question="What is or could be the cause of the target utterance?",
    inference_type=None,
    option_prefix="choice",
):
    dialogue = tuple(
        Utterance(speaker="A" if i % 2 == 0 else "B", text=f"turn number {i} content")
        for i in range(n_turns)
    )
    options = tuple(f"{option_prefix} text {i}" for i in range(m))
    return MCQInstance(
        id=instance_id,
        dialogue=dialogue,
        target_index=target_index,
        question=question,
        options=options,
        gold=frozenset(gold),
        inference_type=inference_type,
    )


BOB_EXCLUSION_TEXT = (
    "Option C is unreasonable because Bob apologized and explained he was stuck "
    "at the office, so he did not forget. Option D is unreasonable because Bob "
    "was working, not watching another movie.\n"
    "Excluded: C, D"
)
BOB_VERDICT_TEXTS = {
    0: "The urgent client report matches what Bob said about the audit deadline.\nVerdict: reasonable",
    1: "Bob said he could not leave the office until midnight, so being stuck at work fits.\nVerdict: reasonable",
    2: "Bob clearly remembered the plan and apologized, so forgetting is ruled out.\nVerdict: unreasonable",
    3: "Nothing suggests Bob watched anything at home; he was at the office.\nVerdict: unreasonable",
    4: "A pressing work commitment running long is consistent with every clue.\nVerdict: reasonable",
}
BOB_COMBINE_TEXT = (
    "Combining the exclusion reasons with the per-option analyses, the "
    "work-related causes hold up while C and D stay excluded.\n"
    "Answer: A, B, E"
)


@pytest.fixture
def bob_movie_instance():
    """Five-option dialogue where C and D are excludable and A, B, E correct."""
    dialogue = (
        Utterance("Alice", "Hey Bob, you missed the movie last night. What happened?"),
        Utterance("Bob", "I am so sorry, something came up and I could not leave the office until midnight."),
        Utterance("Alice", "You work too much. Was it really that important?"),
        Utterance("Bob", "It was. We had a deadline for the client audit this morning."),
    )
    return MCQInstance(
        id="bob-movie-1",
        dialogue=dialogue,
        target_index=1,
        question="What is or could be the reason Bob missed the movie?",
        options=(
            "Bob had to finish an urgent report for a client audit.",
            "Bob was stuck at work until late at night.",
            "Bob forgot that the movie was showing that night.",
            "Bob decided to watch a different movie at home.",
            "Bob had a pressing work commitment that ran long.",
        ),
        gold=frozenset({0, 1, 4}),
        inference_type="cause",
    )


def rex_script_entries(instance, step1_text=BOB_EXCLUSION_TEXT, verdict_texts=None,
                       step3_text=BOB_COMBINE_TEXT, config=None):
    """Exact-prompt script entries driving the three-step pipeline offline."""
    config = config or ReasonerConfig()
    verdict_texts = verdict_texts or BOB_VERDICT_TEXTS
    entries = [
        {
            "prompt": render_prompt(
                instance, PromptKind.STEP1_EXCLUSION,
                max_prompt_tokens=config.max_prompt_tokens,
            ),
            "responses": [step1_text],
        }
    ]
    for i in range(instance.m):
        entries.append(
            {
                "prompt": render_prompt(
                    instance, PromptKind.STEP2_VERDICT, a1=step1_text, option_index=i,
                    max_prompt_tokens=config.max_prompt_tokens,
                ),
                "responses": [verdict_texts[i]],
            }
        )
    entries.append(
        {
            "prompt": render_prompt(
                instance, PromptKind.STEP3_COMBINE, a1=step1_text,
                a2={i: verdict_texts[i] for i in range(instance.m)},
                max_prompt_tokens=config.max_prompt_tokens,
            ),
            "responses": [step3_text],
        }
    )
    return entries


def scripted_rex_backend(instance, **kwargs):
    backend = ScriptedBackend()
    for entry in rex_script_entries(instance, **kwargs):
        backend.register_script(responses=entry["responses"], prompt=entry["prompt"])
    return backend


def write_scripts_file(path: Path, entries, default=None):
    payload = {"scripts": entries}
    if default is not None:
        payload["default"] = default
    path.write_text(json.dumps(payload), "utf-8")
    return path
