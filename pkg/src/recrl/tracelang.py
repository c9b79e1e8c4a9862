"""Trace grammar: vocabulary, tokenizer, validator, parser, renderer.

A trace is a fixed sequence of tagged sections ending in a rate section:

    full:         <analyze_user> .. </analyze_user> <analyze_item> .. </analyze_item>
                  <match> .. </match> <rate> u . t </rate>
    single_think: <think> .. </think> <rate> u . t </rate>
    no_think:     <rate> u . t </rate>

Tokens are whitespace-separated; multi-word tag names use underscores so every
tag is one token. Section bodies may contain any vocabulary tokens except
structural tags and prompt-framing specials (the prompt asks for
[like]/[dislike]/[pos]/[neg] markers, but the validator never requires them). The rate body must be exactly three tokens,
digit '.' digit, parsing into [1.0, 5.0].

Validation failures are classified, first match wins:
  unknown-token      id outside the vocabulary
  missing-section    a required tag never occurs
  trailing-content   anything after the first </rate>
  out-of-order       any other structure break (duplicate tags, content
                     between sections, structural tag inside a body, ...)
  unparseable-rating rate body not digit '.' digit inside [1.0, 5.0]
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ParseError, UnknownTokenError

MODES = ("full", "single_think", "no_think")

# section name -> (open tag, close tag); "rate" is implicit in every mode
_SECTION_TAGS = {
    "analyze_user": ("<analyze_user>", "</analyze_user>"),
    "analyze_item": ("<analyze_item>", "</analyze_item>"),
    "match": ("<match>", "</match>"),
    "think": ("<think>", "</think>"),
    "rate": ("<rate>", "</rate>"),
}

MODE_SECTIONS = {
    "full": ("analyze_user", "analyze_item", "match", "rate"),
    "single_think": ("think", "rate"),
    "no_think": ("rate",),
}

_SPECIALS = ("<pad>", "<eos>", "<go>", "<sys>", "</sys>", "<hist>", "<target>")
_STRUCTURAL = tuple(t for pair in _SECTION_TAGS.values() for t in pair)
_MARKERS = ("[like]", "[dislike]", "[pos]", "[neg]")
_KEYWORDS = ("item", "attrs", "rating", "review")
_DIGITS = tuple(str(d) for d in range(10))


def mode_skeleton(mode: str) -> tuple[str, ...]:
    """Flat open/close tag sequence a valid trace must follow, in order."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    out: list[str] = []
    for name in MODE_SECTIONS[mode]:
        out.extend(_SECTION_TAGS[name])
    return tuple(out)


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]
    alphabet_size: int
    n_items: int

    @classmethod
    def build(cls, alphabet_size: int, n_items: int) -> "Vocabulary":
        tokens = (
            _SPECIALS
            + _STRUCTURAL
            + _MARKERS
            + _KEYWORDS
            + _DIGITS
            + (".",)
            + tuple(f"attr_{i}" for i in range(alphabet_size))
            + tuple(f"item_{i}" for i in range(n_items))
        )
        return cls(tokens=tokens, alphabet_size=alphabet_size, n_items=n_items)

    def __post_init__(self):
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.tokens)})
        object.__setattr__(
            self, "_structural", frozenset(self._index[t] for t in _STRUCTURAL)
        )

    def __len__(self) -> int:
        return len(self.tokens)

    def id(self, token: str) -> int:
        try:
            return self._index[token]
        except KeyError:
            raise UnknownTokenError(token, -1) from None

    def token(self, i: int) -> str:
        return self.tokens[i]

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def eos_id(self) -> int:
        return self._index["<eos>"]

    def structural_ids(self) -> frozenset[int]:
        return self._structural

    def special_ids(self) -> frozenset[int]:
        return frozenset(self._index[t] for t in _SPECIALS)

    def encode(self, text: str) -> list[int]:
        ids = []
        for pos, tok in enumerate(text.split()):
            if tok not in self._index:
                raise UnknownTokenError(tok, pos)
            ids.append(self._index[tok])
        return ids

    def decode(self, ids) -> str:
        return " ".join(self.tokens[i] for i in ids)

    def content_hash(self) -> str:
        return hashlib.sha256("\n".join(self.tokens).encode()).hexdigest()

    def save(self, path: str | Path) -> None:
        doc = {
            "alphabet_size": self.alphabet_size,
            "n_items": self.n_items,
            "tokens": list(self.tokens),
        }
        Path(path).write_text(json.dumps(doc, indent=1) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        doc = json.loads(Path(path).read_text())
        vocab = cls.build(doc["alphabet_size"], doc["n_items"])
        if list(vocab.tokens) != doc["tokens"]:
            raise ParseError(f"vocabulary file {path} does not match its build recipe")
        return vocab


@dataclass(frozen=True)
class Verdict:
    valid: bool
    reason: str | None  # None iff valid
    skeleton_progress: float  # graded structural progress, 1.0 = exact shape


@dataclass(frozen=True)
class ParsedTrace:
    mode: str
    sections: dict[str, tuple[int, ...]]  # section name -> body token ids
    rating: float
    had_eos: bool


def _digit_value(vocab: Vocabulary, token_id: int) -> int | None:
    tok = vocab.tokens[token_id]
    return int(tok) if tok in _DIGITS else None


def tokens_to_rating(vocab: Vocabulary, body: tuple[int, ...] | list[int]) -> float | None:
    """Parse a rate body; None unless exactly digit '.' digit in [1.0, 5.0]."""
    if len(body) != 3:
        return None
    u = _digit_value(vocab, body[0])
    t = _digit_value(vocab, body[2])
    if u is None or t is None or vocab.tokens[body[1]] != ".":
        return None
    value = u + t / 10.0
    if not (1.0 <= value <= 5.0):
        return None
    return value


def rating_to_tokens(vocab: Vocabulary, value: float) -> list[int]:
    text = f"{value:.1f}"
    if not (1.0 <= value <= 5.0) or abs(value - float(text)) > 1e-9:
        raise ValueError(f"rating {value!r} is not a tenth in [1.0, 5.0]")
    units, tenths = text.split(".")
    return [vocab.id(units), vocab.id("."), vocab.id(tenths)]


def _ladder(vocab: Vocabulary, mode: str) -> list[tuple[str, int]]:
    """Rung sequence (kind, wanted id) a trace must climb strictly in order."""
    tags = [vocab.id(t) for t in mode_skeleton(mode)]
    dot = vocab.id(".")
    return (
        [("tag", t) for t in tags[:-1]]
        + [("digit", -1), ("dot", dot), ("digit", -1)]
        + [("strict-tag", tags[-1]), ("eos-last", vocab.eos_id)]
    )


def skeleton_progress(ids, vocab: Vocabulary, mode: str) -> float:
    """Graded structural progress, the shaping signal for invalid traces.

    Rungs: the mode's tags in order, then digit '.' digit, then '</rate>',
    then a final <eos>. Tag rungs tolerate plain content tokens before them
    (section bodies) and repeats of the one tag climbed most recently, but any
    other structural or special token ends the walk, and everything from the
    rating digits on is strict. 1.0 is therefore exactly the shape of a valid
    trace (digit range aside). The tolerance window is deliberately one tag
    wide: a policy just reinforced into emitting some tag must not zero its
    own progress by stuttering while it hunts for the next rung, yet once the
    next rung is climbed the old tag turns fatal again, so order-free tag
    soup caps early and only clean sequential traces keep climbing.

    A stalled walk earns a partial rung when the token it wanted next
    appears after the stall, graded by distance: 0.5 / (1 + gap) where gap
    counts tokens between the stall and the first occurrence. Emitting a
    token at all is far easier to stumble on than emitting it in place, and
    without that intermediate grade whole rollout groups tie at the frontier
    rung and the group advantages all cancel. Flat credit is not enough at
    the last rung: generation ends at <eos> anyway, so "junk then <eos>"
    would tie "<eos> in place" and the batch degenerates one token short of
    a valid trace. Distance grading keeps those apart, and placing the token
    still beats merely having it near, so the credit never competes with
    climbing.
    """
    rungs = _ladder(vocab, mode)
    digits = {vocab.id(d) for d in _DIGITS}
    blocked = vocab.structural_ids() | vocab.special_ids()
    ids = list(ids)
    k = 0
    last_tag = -1
    stop = len(ids)
    for pos, tok in enumerate(ids):
        kind, want = rungs[k]
        if kind == "tag":
            if tok == want:
                last_tag = tok
                k += 1
            elif tok in blocked and tok != last_tag:
                stop = pos
                break
        elif kind == "digit":
            if tok not in digits:
                stop = pos
                break
            k += 1
        elif kind in ("dot", "strict-tag"):
            if tok != want:
                stop = pos
                break
            k += 1
        else:  # eos-last
            if tok == want and pos == len(ids) - 1:
                k += 1
            stop = pos
            break
        if k == len(rungs):
            break
    bonus = 0.0
    if k < len(rungs):
        kind, want = rungs[k]
        rest = ids[stop:]
        hits = [i for i, t in enumerate(rest) if (t in digits if kind == "digit" else t == want)]
        if hits:
            bonus = 0.5 / (1 + hits[0])
    return (k + bonus) / len(rungs)


def _strip_eos(ids, vocab: Vocabulary) -> tuple[list[int], bool]:
    ids = list(ids)
    if ids and ids[-1] == vocab.eos_id:
        return ids[:-1], True
    return ids, False


def validate(ids, vocab: Vocabulary, mode: str) -> Verdict:
    body, _ = _strip_eos(ids, vocab)
    nvocab = len(vocab)
    if any(i < 0 or i >= nvocab for i in ids):
        return Verdict(False, "unknown-token", 0.0)
    progress = skeleton_progress(ids, vocab, mode)

    def fail(reason: str) -> Verdict:
        return Verdict(False, reason, progress)

    skel = [vocab.id(t) for t in mode_skeleton(mode)]
    present = set(body)
    if any(t not in present for t in skel):
        return fail("missing-section")
    close_rate = vocab.id("</rate>")
    first_close = body.index(close_rate)
    if first_close != len(body) - 1:
        return fail("trailing-content")

    blocked = vocab.structural_ids() | vocab.special_ids()
    pos = 0
    rate_body: list[int] = []
    for name in MODE_SECTIONS[mode]:
        open_id, close_id = (vocab.id(t) for t in _SECTION_TAGS[name])
        if pos >= len(body) or body[pos] != open_id:
            return fail("out-of-order")
        pos += 1
        start = pos
        while pos < len(body) and body[pos] != close_id:
            if body[pos] in blocked:
                return fail("out-of-order")
            pos += 1
        if pos >= len(body):
            return fail("out-of-order")
        if name == "rate":
            rate_body = body[start:pos]
        pos += 1
    if pos != len(body):
        return fail("trailing-content")
    if tokens_to_rating(vocab, rate_body) is None:
        return fail("unparseable-rating")
    return Verdict(True, None, 1.0)


def parse(ids, vocab: Vocabulary, mode: str) -> ParsedTrace:
    body, had_eos = _strip_eos(ids, vocab)
    verdict = validate(ids, vocab, mode)
    if not verdict.valid:
        raise ParseError(f"invalid trace: {verdict.reason}")
    sections: dict[str, tuple[int, ...]] = {}
    pos = 0
    for name in MODE_SECTIONS[mode]:
        close_id = vocab.id(_SECTION_TAGS[name][1])
        pos += 1
        start = pos
        while body[pos] != close_id:
            pos += 1
        sections[name] = tuple(body[start:pos])
        pos += 1
    rating = tokens_to_rating(vocab, sections["rate"])
    assert rating is not None
    return ParsedTrace(mode=mode, sections=sections, rating=rating, had_eos=had_eos)


def render(trace: ParsedTrace, vocab: Vocabulary) -> list[int]:
    out: list[int] = []
    for name in MODE_SECTIONS[trace.mode]:
        open_id, close_id = (vocab.id(t) for t in _SECTION_TAGS[name])
        out.append(open_id)
        out.extend(trace.sections[name])
        out.append(close_id)
    if trace.had_eos:
        out.append(vocab.eos_id)
    return out


def extract_rating(ids, vocab: Vocabulary) -> float | None:
    """First parseable <rate> .. </rate> span anywhere in the ids, else None."""
    open_id, close_id = vocab.id("<rate>"), vocab.id("</rate>")
    ids = list(ids)
    nvocab = len(vocab)
    if any(i < 0 or i >= nvocab for i in ids):
        return None
    for start, tok in enumerate(ids):
        if tok != open_id:
            continue
        try:
            end = ids.index(close_id, start + 1)
        except ValueError:
            return None
        value = tokens_to_rating(vocab, ids[start + 1 : end])
        if value is not None:
            return value
    return None
