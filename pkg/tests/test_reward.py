"""Reward oracle values and range/ordering properties."""

from __future__ import annotations

import random

import pytest

from recrl.errors import ConfigError
from recrl.reward import RewardConfig, score
from recrl.tracelang import Vocabulary

VOCAB = Vocabulary.build(alphabet_size=8, n_items=12)


def trace(rating: str = "3 . 5", mode: str = "full", mutate=None) -> list[int]:
    bodies = {
        "analyze_user": "[like] attr_1 [dislike] attr_0",
        "analyze_item": "item_3 attrs attr_1",
        "match": "[pos] attr_1",
        "think": "attr_1",
        "rate": rating,
    }
    from recrl.tracelang import MODE_SECTIONS

    parts = []
    for name in MODE_SECTIONS[mode]:
        parts.append(f"<{name}> {bodies[name]} </{name}>")
    text = " ".join(parts)
    if mutate:
        text = mutate(text)
    return VOCAB.encode(text)


def test_paper_scheme_hand_table():
    cfg = RewardConfig(scheme="paper")
    cases = [
        # (trace rating, truth, want_total, want_fmt, want_ans)
        ("3 . 5", 4.0, 1.375, 0.5, 0.875),
        ("4 . 0", 4.0, 1.5, 0.5, 1.0),
        ("1 . 0", 5.0, 0.5, 0.5, 0.0),  # worst in-range miss
        ("5 . 0", 1.0, 0.5, 0.5, 0.0),
    ]
    for pred, truth, total, fmt, ans in cases:
        got = score(trace(pred), truth, VOCAB, "full", cfg)
        assert got.valid
        assert got.total == pytest.approx(total)
        assert got.format_reward == pytest.approx(fmt)
        assert got.answer_reward == pytest.approx(ans)


def test_paper_scheme_invalid_cases():
    cfg = RewardConfig(scheme="paper")
    # no rating extractable anywhere
    got = score(VOCAB.encode("attr_1 attr_2"), 4.0, VOCAB, "full", cfg)
    assert (got.total, got.format_reward, got.answer_reward) == (-0.5, -0.5, 0.0)
    assert not got.valid and got.predicted is None
    # invalid structure but extractable rating: lenient answer credit applies
    broken = trace("4 . 0", mutate=lambda s: s + " attr_1")
    got = score(broken, 4.0, VOCAB, "full", cfg)
    assert got.reason == "trailing-content"
    assert got.total == pytest.approx(0.5)  # -0.5 + 1.0
    assert got.predicted == 4.0
    # strict mode withholds answer credit on invalid traces
    strict = RewardConfig(scheme="paper", lenient_answer=False)
    got = score(broken, 4.0, VOCAB, "full", strict)
    assert got.total == pytest.approx(-0.5)


def test_correctness_only_is_binary():
    cfg = RewardConfig(scheme="correctness_only")
    assert score(trace("3 . 5"), 3.5, VOCAB, "full", cfg).total == 2.0
    assert score(trace("3 . 5"), 3.6, VOCAB, "full", cfg).total == 0.0
    assert score(VOCAB.encode("attr_1"), 3.5, VOCAB, "full", cfg).total == 0.0
    # format plays no role, even for invalid traces with the right number
    broken = trace("3 . 5", mutate=lambda s: s + " attr_1")
    assert score(broken, 3.5, VOCAB, "full", cfg).total == 2.0


def test_shaped_scheme_orders_invalid_below_valid():
    cfg = RewardConfig(scheme="shaped")
    valid_fmt = score(trace("1 . 0"), 5.0, VOCAB, "full", cfg).format_reward
    assert valid_fmt == 0.5
    # skeleton and rating complete but junk where <eos> belongs: 11 of 12 rungs
    nearly = trace("3 . 5", mutate=lambda s: s + " attr_1")
    got = score(nearly, 3.5, VOCAB, "full", cfg)
    assert got.format_reward == pytest.approx(-0.5 + 0.9 * (11 / 12) * 1.0)
    assert got.format_reward < valid_fmt
    # progress grades monotonically with matched skeleton prefix
    fmts = []
    for text in (
        "attr_1",
        "<analyze_user> attr_1",
        "<analyze_user> attr_1 </analyze_user>",
        "<analyze_user> attr_1 </analyze_user> <analyze_item> </analyze_item> <match> </match>",
    ):
        fmts.append(score(VOCAB.encode(text), 3.5, VOCAB, "full", cfg).format_reward)
    assert fmts == sorted(fmts) and len(set(fmts)) == len(fmts)
    assert fmts[0] == -0.5


def test_total_range_fuzz():
    rng = random.Random(5)
    for scheme in ("paper", "shaped"):
        cfg = RewardConfig(scheme=scheme)
        for _ in range(300):
            ids = [rng.randrange(len(VOCAB)) for _ in range(rng.randrange(0, 40))]
            truth = rng.randrange(10, 51) / 10.0
            got = score(ids, truth, VOCAB, "full", cfg)
            assert -0.5 <= got.total <= 1.5
            assert got.total == pytest.approx(got.format_reward + got.answer_reward)


def test_reward_config_validation():
    for bad in (
        dict(scheme="nope"),
        dict(max_error=0.0),
        dict(format_penalty=0.6),
        dict(shaping_weight=1.0),
        dict(shaping_weight=-0.1),
    ):
        with pytest.raises(ConfigError):
            RewardConfig(**bad).validate()
