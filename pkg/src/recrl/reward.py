"""Rule-based rewards over generated traces.

Schemes:
  paper             format +0.5 valid / -0.5 invalid, plus answer credit
                    1 - |y - yhat| / max_error when a rating is extractable.
  shaped            same on valid traces; invalid traces earn graded partial
                    credit -0.5 + shaping_weight * skeleton_progress instead of
                    a flat -0.5. Keeps every invalid strictly below every valid
                    trace while giving a tiny policy a reward slope to climb:
                    with the flat penalty, early rollout groups all tie at -0.5
                    and group-normalized advantages are identically zero.
  correctness_only  no format term; fixed payout iff the extracted rating
                    equals the truth after tenth-quantization (ablation arm).

Answer credit is granted whenever a rating is extractable, valid trace or not,
unless lenient_answer is off. Totals stay within [-0.5, 1.5] for the paper and
shaped schemes when ratings are in range.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigError
from .tracelang import Vocabulary, extract_rating, validate

SCHEMES = ("paper", "shaped", "correctness_only")


@dataclass(frozen=True)
class RewardConfig:
    scheme: str = "paper"
    max_error: float = 4.0
    format_bonus: float = 0.5
    format_penalty: float = -0.5
    shaping_weight: float = 0.9
    lenient_answer: bool = True
    correct_payout: float = 2.0

    def validate(self) -> None:
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown reward scheme {self.scheme!r}")
        if self.max_error <= 0:
            raise ConfigError("max_error must be positive")
        if self.format_penalty >= self.format_bonus:
            raise ConfigError("format_penalty must be below format_bonus")
        if not (0.0 <= self.shaping_weight < 1.0):
            raise ConfigError("shaping_weight must be in [0, 1) so invalid < valid always")


@dataclass(frozen=True)
class RewardBreakdown:
    total: float
    format_reward: float
    answer_reward: float
    valid: bool
    reason: str | None
    predicted: float | None


def score(ids, truth: float, vocab: Vocabulary, mode: str, cfg: RewardConfig) -> RewardBreakdown:
    cfg.validate()
    verdict = validate(ids, vocab, mode)
    predicted = extract_rating(ids, vocab)

    if cfg.scheme == "correctness_only":
        hit = predicted is not None and round(predicted * 10) == round(truth * 10)
        answer = cfg.correct_payout if hit else 0.0
        return RewardBreakdown(answer, 0.0, answer, verdict.valid, verdict.reason, predicted)

    if verdict.valid:
        fmt = cfg.format_bonus
    elif cfg.scheme == "shaped":
        span = cfg.format_bonus - cfg.format_penalty
        fmt = cfg.format_penalty + cfg.shaping_weight * verdict.skeleton_progress * span
    else:
        fmt = cfg.format_penalty

    if predicted is not None and (verdict.valid or cfg.lenient_answer):
        answer = 1.0 - abs(truth - predicted) / cfg.max_error
    else:
        answer = 0.0
    return RewardBreakdown(fmt + answer, fmt, answer, verdict.valid, verdict.reason, predicted)
