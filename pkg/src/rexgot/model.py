"""Core domain types shared across the pipeline.

All types are immutable after construction and safe to share between
concurrent workers. Options are identified by 0-based index everywhere
inside the library; the positional letter labels ("A", "B", ...) exist
only at the prompt/parse boundary.
"""

from __future__ import annotations

import string
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Any, Mapping

if TYPE_CHECKING:
    from .reasoner import ReasoningPath

MAX_OPTIONS = 26

OPTION_LETTERS = string.ascii_uppercase


class RexGotError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(RexGotError):
    """An instance record violates a construction invariant."""

    def __init__(self, message: str, *, field_name: str):
        super().__init__(message)
        self.field_name = field_name


class EmptyOptions(ValidationError):
    """Fewer than two answer options were supplied."""


class GoldOutOfRange(ValidationError):
    """A gold answer index does not address any option."""


class EmptyGold(ValidationError):
    """The gold answer set is empty; every question has >= 1 correct option."""


class TargetOutOfRange(ValidationError):
    """The target utterance index does not address any dialogue turn."""


def index_to_letter(index: int) -> str:
    """Positional option label: 0 -> "A", 1 -> "B", ... (bijective for m <= 26)."""
    if not 0 <= index < MAX_OPTIONS:
        raise ValueError(f"option index {index} outside labelled range 0..{MAX_OPTIONS - 1}")
    return OPTION_LETTERS[index]


def letter_to_index(letter: str) -> int:
    """Inverse of :func:`index_to_letter`; case-insensitive."""
    upper = letter.upper()
    if len(upper) != 1 or upper not in OPTION_LETTERS:
        raise ValueError(f"not an option letter: {letter!r}")
    return OPTION_LETTERS.index(upper)


@dataclass(frozen=True)
class Utterance:
    """One dialogue turn."""

    speaker: str
    text: str

    def __post_init__(self):
        if not self.text.strip():
            raise ValidationError("utterance text is empty", field_name="text")


@dataclass(frozen=True)
class MCQInstance:
    """One dialogue, a target utterance, a question, and labelled options.

    ``gold`` holds the indices of all correct options and is never empty.
    ``inference_type`` is an optional tag such as "cause" or "motivation".
    """

    id: str
    dialogue: tuple[Utterance, ...]
    target_index: int
    question: str
    options: tuple[str, ...]
    gold: frozenset[int]
    inference_type: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "dialogue", tuple(self.dialogue))
        object.__setattr__(self, "options", tuple(self.options))
        object.__setattr__(self, "gold", frozenset(self.gold))
        if not self.id:
            raise ValidationError("instance id is empty", field_name="id")
        if not self.dialogue:
            raise ValidationError("dialogue has no turns", field_name="dialogue")
        if len(self.options) < 2:
            raise EmptyOptions(
                f"instance {self.id}: got {len(self.options)} options, need >= 2",
                field_name="options",
            )
        if len(self.options) > MAX_OPTIONS:
            raise ValidationError(
                f"instance {self.id}: {len(self.options)} options exceed the "
                f"{MAX_OPTIONS}-letter label space",
                field_name="options",
            )
        for i, text in enumerate(self.options):
            if not text.strip():
                raise EmptyOptions(
                    f"instance {self.id}: option {index_to_letter(i)} is blank",
                    field_name="options",
                )
        if not self.question.strip():
            raise ValidationError(
                f"instance {self.id}: question is empty", field_name="question"
            )
        if not 0 <= self.target_index < len(self.dialogue):
            raise TargetOutOfRange(
                f"instance {self.id}: target_index {self.target_index} outside "
                f"dialogue of length {len(self.dialogue)}",
                field_name="target_index",
            )
        if not self.gold:
            raise EmptyGold(
                f"instance {self.id}: gold answer set is empty", field_name="gold"
            )
        for g in self.gold:
            if not isinstance(g, int) or not 0 <= g < len(self.options):
                raise GoldOutOfRange(
                    f"instance {self.id}: gold index {g!r} outside 0..{len(self.options) - 1}",
                    field_name="gold",
                )

    @property
    def n(self) -> int:
        return len(self.dialogue)

    @property
    def m(self) -> int:
        return len(self.options)

    @property
    def target(self) -> Utterance:
        return self.dialogue[self.target_index]


def validate_instance(raw: Mapping[str, Any] | MCQInstance) -> MCQInstance:
    """Construct a validated :class:`MCQInstance` from a raw record.

    Idempotent: passing an already-valid instance returns an equal instance.
    Raises a :class:`ValidationError` subtype naming the offending field.
    """
    if isinstance(raw, MCQInstance):
        return MCQInstance(
            id=raw.id,
            dialogue=raw.dialogue,
            target_index=raw.target_index,
            question=raw.question,
            options=raw.options,
            gold=raw.gold,
            inference_type=raw.inference_type,
        )
    for key in ("id", "dialogue", "target_index", "question", "options", "answers"):
        if key not in raw:
            raise ValidationError(f"record is missing field {key!r}", field_name=key)
    dialogue = []
    for turn in raw["dialogue"]:
        if isinstance(turn, Utterance):
            dialogue.append(turn)
        else:
            dialogue.append(Utterance(speaker=str(turn.get("speaker", "")), text=str(turn["text"])))
    return MCQInstance(
        id=str(raw["id"]),
        dialogue=tuple(dialogue),
        target_index=int(raw["target_index"]),
        question=str(raw["question"]),
        options=tuple(str(o) for o in raw["options"]),
        gold=frozenset(int(a) for a in raw["answers"]),
        inference_type=raw.get("inference_type"),
    )


class Stage(Enum):
    """Context assembly stage: base, base + exclusions, base + exclusions + verdicts."""

    T = "T"
    T1 = "T1"
    T2 = "T2"


_BASE_TAGS = ("dialogue", "target", "question", "options")
STAGE_TAGS = {
    Stage.T: _BASE_TAGS,
    Stage.T1: _BASE_TAGS + ("exclusion_result",),
    Stage.T2: _BASE_TAGS + ("exclusion_result", "verdicts"),
}


class MissingStageInput(RexGotError):
    """A context stage was requested without the text it extends."""


@dataclass(frozen=True)
class ContextBlock:
    """Ordered (tag, text) segments making up one assembled context.

    Rendering is deterministic: the same block always renders to
    byte-identical text.
    """

    segments: tuple[tuple[str, str], ...]
    stage: Stage

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple((t, s) for t, s in self.segments))
        tags = tuple(tag for tag, _ in self.segments)
        if tags != STAGE_TAGS[self.stage]:
            raise ValidationError(
                f"stage {self.stage.value} requires segment tags "
                f"{STAGE_TAGS[self.stage]}, got {tags}",
                field_name="segments",
            )

    def render(self) -> str:
        return "\n\n".join(text for _, text in self.segments)

    def segment_text(self, tag: str) -> str:
        for seg_tag, text in self.segments:
            if seg_tag == tag:
                return text
        raise KeyError(tag)


@dataclass(frozen=True)
class Prediction:
    """Final answer for one instance under one strategy.

    ``chosen`` is never empty. ``paths`` and ``vote_tally`` are populated
    only by the multi-path strategy; single-shot strategies leave them empty.
    ``fallback_used`` flags that any parse fallback or vote rescue fired.
    """

    instance_id: str
    strategy: "Strategy"
    chosen: frozenset[int]
    paths: tuple["ReasoningPath", ...] = ()
    vote_tally: Mapping[int, int] = field(default_factory=dict)
    fallback_used: bool = False

    def __post_init__(self):
        object.__setattr__(self, "chosen", frozenset(self.chosen))
        object.__setattr__(self, "paths", tuple(self.paths))
        object.__setattr__(self, "vote_tally", dict(self.vote_tally))
        if not self.chosen:
            raise ValidationError(
                f"prediction for {self.instance_id}: chosen set is empty",
                field_name="chosen",
            )
        for i in self.chosen:
            if not isinstance(i, int) or i < 0:
                raise ValidationError(
                    f"prediction for {self.instance_id}: bad option index {i!r}",
                    field_name="chosen",
                )


class Strategy(Enum):
    """The five answer-selection strategies the harness can run."""

    STANDARD = "standard"
    COT = "cot"
    REX_GOT = "rex_got"
    FORWARD = "forward"
    BACKWARD = "backward"
