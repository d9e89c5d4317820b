"""Prompt construction and free-text answer parsing."""

from __future__ import annotations

import re
import string
from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional, Sequence

if TYPE_CHECKING:
    from .data import QuestionRecord

__all__ = [
    "StrategyFlags",
    "STRATEGIES",
    "PromptBundle",
    "SOM_INSTRUCTION",
    "GAZE_INSTRUCTION",
    "build_prompt",
    "normalize_answer",
    "parse_answer",
]

SOM_INSTRUCTION = (
    "Focus on the last frame to make your prediction and use the rest of the "
    "video to infer the context."
)

GAZE_INSTRUCTION = (
    "Follow the user's gaze trajectory closely: the red circles indicate where "
    "the user has most recently looked, and the connected path shows the "
    "sequence of gaze points across the most recent frames. The objects that "
    "have just been fixated are very likely to include the one the user will "
    "interact with next. Use this visual cue to make your prediction."
)


@dataclass(frozen=True)
class StrategyFlags:
    som: bool = False
    gaze: bool = False

    @property
    def name(self) -> str:
        if self.som and self.gaze:
            return "som_gaze"
        if self.som:
            return "som"
        if self.gaze:
            return "gaze"
        return "vllm_only"

    @classmethod
    def from_name(cls, name: str) -> "StrategyFlags":
        try:
            return STRATEGIES[name]
        except KeyError:
            raise ValueError(
                f"unknown strategy {name!r}; expected one of {list(STRATEGIES)}"
            ) from None


STRATEGIES = {
    "vllm_only": StrategyFlags(False, False),
    "som": StrategyFlags(True, False),
    "gaze": StrategyFlags(False, True),
    "som_gaze": StrategyFlags(True, True),
}


@dataclass(frozen=True)
class PromptBundle:
    text: str
    candidate_order: tuple[str, ...]


def build_prompt(record: "QuestionRecord", strategy: StrategyFlags) -> PromptBundle:
    """Assemble the prompt: optional SoM line, question, candidates, optional gaze paragraph.

    Blocks are separated by blank lines; candidates are listed one per line,
    unlabelled, in dataset order.
    """
    blocks = []
    if strategy.som:
        blocks.append(SOM_INSTRUCTION)
    blocks.append(record.question_text)
    blocks.append("\n".join(record.candidates))
    if strategy.gaze:
        blocks.append(GAZE_INSTRUCTION)
    return PromptBundle("\n\n".join(blocks), tuple(record.candidates))


_PUNCT = str.maketrans({c: " " for c in string.punctuation + "‘’“”"})
_ARTICLE = re.compile(r"^(?:(?:the|a|an)\s+)+")


def normalize_answer(text: str) -> str:
    """Lowercase, drop punctuation, collapse whitespace, strip leading articles."""
    s = " ".join(text.lower().translate(_PUNCT).split())
    return _ARTICLE.sub("", s)


def parse_answer(raw_text: str, candidates: Sequence[str]) -> Optional[int]:
    """Index of the candidate mentioned in ``raw_text``, or ``None`` to abstain.

    A candidate matches when its normalized form appears in the normalized
    response on word boundaries. Among several matches the longest
    normalized candidate wins; equal lengths go to the lowest index.
    """
    haystack = f" {normalize_answer(raw_text)} "
    best, best_len = None, -1
    for i, cand in enumerate(candidates):
        needle = normalize_answer(cand)
        if needle and f" {needle} " in haystack and len(needle) > best_len:
            best, best_len = i, len(needle)
    return best
