"""Evaluation and ablations.

Evaluation decodes greedily, extracts the first parseable rating, and falls
back to 3.0 (midpoint of the scale) when none exists; fallback rows count as
unparseable and still enter MAE/RMSE, so a policy that never answers scores
like a constant-midpoint predictor rather than being quietly skipped.

Ablation variants (shared seeds, shared data):
  full              cold-start SFT + RL, full multi-step trace
  no_thinking       same but the trace is just the rate section
  no_multistep      same but one undifferentiated think section
  correctness_only  full trace, RL reward replaced by exact-match payout
  sft_only          cold-start SFT, no RL
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import coldstart as cs
from . import grpo
from . import policy as pol
from .errors import ConfigError, EmptyDatasetError
from .promptkit import PromptLimits, build_prompt
from .reward import RewardConfig
from .seeding import stream
from .tracelang import Vocabulary, extract_rating, validate
from .world import RatingExample, UserProfile, WorldConfig


@dataclass(frozen=True)
class EvalConfig:
    max_new_tokens: int = 112
    fallback: float = 3.0
    batch_size: int = 256

    def validate(self) -> None:
        if self.max_new_tokens < 1 or self.batch_size < 1:
            raise ConfigError("eval needs positive max_new_tokens and batch_size")
        if not (1.0 <= self.fallback <= 5.0):
            raise ConfigError("fallback must lie on the rating scale")


@dataclass(frozen=True)
class EvalReport:
    n: int
    mae: float
    rmse: float
    format_valid_fraction: float
    unparseable_count: int
    avg_generated_tokens: float


def error_metrics(predicted, truth) -> tuple[float, float]:
    """(MAE, RMSE) over aligned prediction/truth vectors."""
    err = np.asarray(predicted, dtype=np.float64) - np.asarray(truth, dtype=np.float64)
    if err.size == 0:
        raise EmptyDatasetError("no predictions to score")
    return float(np.abs(err).mean()), float(np.sqrt((err**2).mean()))


def decode_predictions(
    desc: pol.PolicyDescriptor,
    flat: np.ndarray,
    examples: Sequence[RatingExample],
    vocab: Vocabulary,
    mode: str,
    limits: PromptLimits,
    cfg: EvalConfig,
) -> list[list[int]]:
    outputs: list[list[int]] = []
    for lo in range(0, len(examples), cfg.batch_size):
        chunk = examples[lo : lo + cfg.batch_size]
        prompts = [build_prompt(ex, mode, limits, vocab) for ex in chunk]
        outputs.extend(
            pol.greedy_decode_batch(desc, flat, prompts, vocab.eos_id, cfg.max_new_tokens)
        )
    return outputs


def evaluate(
    desc: pol.PolicyDescriptor,
    flat: np.ndarray,
    examples: Sequence[RatingExample],
    vocab: Vocabulary,
    mode: str,
    limits: PromptLimits = PromptLimits(),
    cfg: EvalConfig = EvalConfig(),
) -> EvalReport:
    cfg.validate()
    if not examples:
        raise EmptyDatasetError("no examples to evaluate")
    outputs = decode_predictions(desc, flat, examples, vocab, mode, limits, cfg)
    preds = []
    valid = 0
    unparseable = 0
    for ids in outputs:
        if validate(ids, vocab, mode).valid:
            valid += 1
        pred = extract_rating(ids, vocab)
        if pred is None:
            unparseable += 1
            pred = cfg.fallback
        preds.append(pred)
    mae, rmse = error_metrics(preds, [ex.rating for ex in examples])
    return EvalReport(
        n=len(examples),
        mae=mae,
        rmse=rmse,
        format_valid_fraction=valid / len(examples),
        unparseable_count=unparseable,
        avg_generated_tokens=float(np.mean([len(o) for o in outputs])),
    )


# --- ablations ---------------------------------------------------------------

VARIANTS = ("full", "no_thinking", "no_multistep", "correctness_only", "sft_only")

# variant -> (trace mode, reward scheme override, runs RL?)
_VARIANT_RULES = {
    "full": ("full", None, True),
    "no_thinking": ("no_think", None, True),
    "no_multistep": ("single_think", None, True),
    "correctness_only": ("full", "correctness_only", True),
    "sft_only": ("full", None, False),
}


@dataclass(frozen=True)
class AblationSpec:
    variants: tuple[str, ...] = VARIANTS
    seeds: tuple[int, ...] = (0, 1, 2)

    def validate(self) -> None:
        unknown = set(self.variants) - set(VARIANTS)
        if unknown:
            raise ConfigError(f"unknown ablation variants {sorted(unknown)}")
        if not self.variants or not self.seeds:
            raise ConfigError("need at least one variant and one seed")


@dataclass(frozen=True)
class PipelineBundle:
    """Shared ingredients for one training pipeline run."""

    desc: pol.PolicyDescriptor
    vocab: Vocabulary
    world_cfg: WorldConfig
    profiles: tuple[UserProfile, ...]
    train: tuple[RatingExample, ...]
    test: tuple[RatingExample, ...]
    limits: PromptLimits
    teacher_cfg: cs.TeacherConfig
    sft_cfg: cs.SftConfig
    sft_subset: int
    grpo_cfg: grpo.GrpoConfig
    reward_cfg: RewardConfig
    eval_cfg: EvalConfig


@dataclass(frozen=True)
class VariantResult:
    variant: str
    seed: int
    eval_report: EvalReport
    rl_reports: tuple[grpo.StepReport, ...]
    sft_steps: int


def run_variant(bundle: PipelineBundle, variant: str, seed: int) -> VariantResult:
    """Cold-start SFT (all variants) then RL (all but sft_only), then eval."""
    if variant not in _VARIANT_RULES:
        raise ConfigError(f"unknown variant {variant!r}")
    mode, scheme_override, runs_rl = _VARIANT_RULES[variant]
    reward_cfg = bundle.reward_cfg
    if scheme_override is not None:
        reward_cfg = replace(reward_cfg, scheme=scheme_override)

    flat = pol.init_policy(bundle.desc, stream(seed, "policy-init"))
    oracle = cs.TeacherOracle(bundle.profiles, bundle.world_cfg, bundle.teacher_cfg)
    subset = cs.sample_subset(bundle.train, bundle.sft_subset, stream(seed, "sft-subset"))
    traces = cs.build_trace_dataset(
        subset, oracle, mode, bundle.vocab, bundle.limits, stream(seed, "teacher")
    )
    flat, losses = cs.sft_train(bundle.desc, flat, traces, bundle.sft_cfg, seed)

    rl_reports: tuple[grpo.StepReport, ...] = ()
    if runs_rl:
        task = grpo.GrpoTask(bundle.vocab, mode, reward_cfg, bundle.limits)
        flat, _, reports = grpo.train(
            bundle.desc, flat, list(bundle.train), task, bundle.grpo_cfg, seed
        )
        rl_reports = tuple(reports)
    report = evaluate(
        bundle.desc, flat, bundle.test, bundle.vocab, mode, bundle.limits, bundle.eval_cfg
    )
    return VariantResult(variant, seed, report, rl_reports, len(losses))


def run_ablation(bundle: PipelineBundle, spec: AblationSpec) -> dict:
    """All (variant, seed) runs plus per-variant MAE/RMSE medians."""
    spec.validate()
    results = [run_variant(bundle, v, s) for v in spec.variants for s in spec.seeds]
    medians = {}
    for v in spec.variants:
        reports = [r.eval_report for r in results if r.variant == v]
        medians[v] = {
            "mae": statistics.median(r.mae for r in reports),
            "rmse": statistics.median(r.rmse for r in reports),
            "format_valid_fraction": statistics.median(r.format_valid_fraction for r in reports),
        }
    return {"results": results, "medians": medians}


def cost_report(result: VariantResult, cfg: grpo.GrpoConfig) -> dict:
    """Training-cost accounting in the style of a samples/stages comparison."""
    trajectories = len(result.rl_reports) * cfg.batch_size * cfg.group_size
    train_tokens = sum(r.tokens_generated for r in result.rl_reports)
    return {
        "variant": result.variant,
        "seed": result.seed,
        "rl_stages": 1 if result.rl_reports else 0,
        "rl_steps": len(result.rl_reports),
        "sft_steps": result.sft_steps,
        "trajectories": trajectories,
        "train_tokens_generated": train_tokens,
        "avg_tokens_per_trajectory": train_tokens / trajectories if trajectories else 0.0,
        "eval_avg_generated_tokens": result.eval_report.avg_generated_tokens,
        "eval_mae": result.eval_report.mae,
    }
