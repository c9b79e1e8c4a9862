"""Prompt assembly: rating example -> token ids the policy conditions on.

Layout (all single whitespace-joined tokens):

    <sys> {mode tag skeleton} {markers} </sys>
    <hist> {one block per history interaction, oldest first}
    <target> item <title> attrs a0 a1 .. <go>

Interaction block: `item <title> attrs a0 .. rating u . t review [like] .. [dislike] ..`

The sys block spells out the tag skeleton the reply must follow plus the inner
markers the reply should use; at this scale the tag tokens themselves are the
instruction. History is truncated oldest-first to fit the token budget; if the
budget cannot even hold the newest interaction plus the frame, that is a
PromptOverflowError.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import PromptOverflowError
from .tracelang import Vocabulary, mode_skeleton
from .world import Interaction, RatingExample

_MARKERS = ("[like]", "[dislike]", "[pos]", "[neg]")


@dataclass(frozen=True)
class PromptLimits:
    max_prompt_tokens: int = 256
    min_kept_history: int = 1


def sys_tokens(mode: str) -> list[str]:
    return ["<sys>", *mode_skeleton(mode), *(_MARKERS if mode != "no_think" else ()), "</sys>"]


def interaction_tokens(it: Interaction) -> list[str]:
    rating_text = f"{it.rating:.1f}"
    return [
        "item",
        it.item.title,
        "attrs",
        *it.item.attribute_tokens(),
        "rating",
        rating_text[0],
        ".",
        rating_text[2],
        "review",
        *it.review,
    ]


def target_tokens(ex: RatingExample) -> list[str]:
    return ["<target>", "item", ex.target.title, "attrs", *ex.target.attribute_tokens(), "<go>"]


def build_prompt(
    ex: RatingExample, mode: str, limits: PromptLimits, vocab: Vocabulary
) -> list[int]:
    frame = sys_tokens(mode)
    tail = target_tokens(ex)
    events = list(ex.history.events)
    while True:
        toks = frame + ["<hist>"] + [t for it in events for t in interaction_tokens(it)] + tail
        if len(toks) <= limits.max_prompt_tokens:
            return vocab.encode(" ".join(toks))
        if len(events) <= limits.min_kept_history:
            raise PromptOverflowError(
                f"prompt needs {len(toks)} tokens with {len(events)} history items; "
                f"budget is {limits.max_prompt_tokens}"
            )
        events.pop(0)  # drop oldest first
