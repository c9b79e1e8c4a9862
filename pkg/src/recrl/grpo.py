"""Group-relative policy optimization over rule-scored rollouts.

One step: for each prompt in the batch, sample a group of rollouts, score them
with the rule reward, normalize rewards inside each group to advantages
(subtract group mean, divide by group population std; all-equal groups get
all-zero advantages), then ascend the clipped surrogate

    J = mean_groups mean_rollouts (1/|y|) sum_t [ min(rho_t * A,
          clip(rho_t, 1-eps, 1+eps) * A) - kl_coef * k(t) ]

with rho_t = exp(logp_new - logp_old) per generated token, the response-level
advantage broadcast to its tokens, and k(t) = exp(d) - d - 1, d = ref - new,
the non-negative per-token KL estimate against a frozen reference policy
(only when kl_coef > 0).

Everything is resumable: rollout randomness for step i comes from a generator
derived from (seed, i), and batch order for an epoch from (seed, epoch), so a
run restarted from a checkpoint replays the exact same trajectory.
"""

from __future__ import annotations

import csv
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autograd as ag
from . import policy as pol
from .errors import ConfigError, EmptyDatasetError, NumericsError
from .optim import AdamState, adam_ascend, sgd_ascend
from .promptkit import PromptLimits, build_prompt
from .reward import RewardBreakdown, RewardConfig, score
from .seeding import step_stream
from .tracelang import Vocabulary
from .world import RatingExample

_DEGENERATE_STD = 1e-12


@dataclass(frozen=True)
class GrpoConfig:
    group_size: int = 8
    batch_size: int = 8
    clip_eps: float = 0.2
    kl_coef: float = 0.0
    # desk-scale rate for the ~43k-param net; 1e-2 climbs the format ladder
    # too slowly and 3e-2 collapses exploration before the climb finishes
    learning_rate: float = 2e-2
    # rollouts sample at temperature > 1 while logprobs stay temperature-1:
    # a tiny policy trained from scratch collapses its own exploration at 1.0
    temperature: float = 1.25
    # uniform share mixed into the rollout sampler only (logprobs stay the
    # policy's own). Off by default: injected structural tokens break far more
    # traces than they complete, so the floor is a last-resort knob
    explore_eps: float = 0.0
    # entropy bonus weight in the surrogate. Counteracts softmax-tail decay so
    # unclimbed structure tokens stay discoverable all the way up the ladder,
    # and turns all-tied batches into pure re-diversification steps;
    # 0 recovers the plain clipped objective
    entropy_coef: float = 0.05
    # longest well-formed trace (teacher style) is ~41 tokens; the budget
    # bounds how far an unformed policy can wander per rollout
    max_new_tokens: int = 64
    epochs: int = 8
    max_steps: int | None = 2000
    optimizer: str = "adam"
    eval_interval: int = 100
    checkpoint_interval: int = 100

    def validate(self) -> None:
        if min(self.group_size, self.batch_size, self.epochs, self.max_new_tokens) < 1:
            raise ConfigError("group_size, batch_size, epochs, max_new_tokens must be >= 1")
        if self.group_size < 2:
            raise ConfigError("group_size must be >= 2 for group-relative advantages")
        if self.clip_eps <= 0 or self.temperature <= 0 or self.learning_rate <= 0:
            raise ConfigError("clip_eps, temperature, learning_rate must be positive")
        if not (0.0 <= self.explore_eps < 1.0):
            raise ConfigError("explore_eps must be in [0, 1)")
        if self.entropy_coef < 0:
            raise ConfigError("entropy_coef must be >= 0")
        if self.kl_coef < 0:
            raise ConfigError("kl_coef must be >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigError("max_steps must be >= 1 when set")
        if min(self.eval_interval, self.checkpoint_interval) < 1:
            raise ConfigError("intervals must be >= 1")

    @classmethod
    def paper_preset(cls) -> "GrpoConfig":
        """Reference hyperparameters from the source experiments (7B scale);
        far too small a learning rate for the desk-scale policy."""
        return cls(
            group_size=8,
            batch_size=8,
            clip_eps=0.2,
            kl_coef=0.0,
            learning_rate=2e-6,
            temperature=1.0,
            explore_eps=0.0,
            entropy_coef=0.0,
            max_new_tokens=160,
            epochs=1,
        )


@dataclass(frozen=True)
class GrpoTask:
    """Everything a step needs besides config: vocabulary, mode, reward, prompt budget."""

    vocab: Vocabulary
    mode: str
    reward_cfg: RewardConfig
    limits: PromptLimits = field(default_factory=PromptLimits)


@dataclass
class RolloutGroup:
    prompt_ids: list[int]
    truth: float
    rollouts: list[pol.Rollout]
    rewards: list[RewardBreakdown]
    advantages: np.ndarray
    ref_logprobs: list[np.ndarray] | None = None


def compute_advantages(rewards: Sequence[float]) -> np.ndarray:
    r = np.asarray(rewards, dtype=np.float64)
    std = r.std()  # population std
    if std < _DEGENERATE_STD:
        return np.zeros_like(r)
    return (r - r.mean()) / std


def kl_estimate(new_lp: np.ndarray, ref_lp: np.ndarray) -> np.ndarray:
    """Per-token exp(d) - d - 1 with d = ref - new; non-negative, zero iff equal."""
    d = ref_lp - new_lp
    return np.exp(d) - d - 1.0


def make_groups(
    desc: pol.PolicyDescriptor,
    flat: np.ndarray,
    examples: Sequence[RatingExample],
    task: GrpoTask,
    cfg: GrpoConfig,
    rng: np.random.Generator,
    ref_flat: np.ndarray | None = None,
) -> list[RolloutGroup]:
    prompts = [build_prompt(ex, task.mode, task.limits, task.vocab) for ex in examples]
    sampled = pol.sample_prompt_batch(
        desc,
        flat,
        prompts,
        cfg.group_size,
        task.vocab.eos_id,
        cfg.max_new_tokens,
        rng,
        cfg.temperature,
        explore_eps=cfg.explore_eps,
    )
    groups = []
    for ex, prompt, rollouts in zip(examples, prompts, sampled):
        rewards = [
            score(r.token_ids, ex.rating, task.vocab, task.mode, task.reward_cfg)
            for r in rollouts
        ]
        group = RolloutGroup(
            prompt_ids=prompt,
            truth=ex.rating,
            rollouts=rollouts,
            rewards=rewards,
            advantages=compute_advantages([b.total for b in rewards]),
        )
        if ref_flat is not None:
            group.ref_logprobs = [
                pol.log_probs(desc, ref_flat, r.prompt_ids, r.token_ids) for r in rollouts
            ]
        groups.append(group)
    return groups


@dataclass
class Surrogate:
    value: float
    binding: pol.Binding | None
    root: ag.Tensor | None
    param_count: int

    def gradient(self) -> np.ndarray:
        if self.root is None or self.binding is None:
            return np.zeros(self.param_count)
        ag.backward(self.root)
        return self.binding.flat_grad()


def surrogate_objective(
    groups: Sequence[RolloutGroup] | RolloutGroup,
    desc: pol.PolicyDescriptor,
    flat: np.ndarray,
    cfg: GrpoConfig,
    requires_grad: bool = True,
) -> Surrogate:
    """Build the batched objective graph; value averages over all given groups."""
    if isinstance(groups, RolloutGroup):
        groups = [groups]
    n_groups = len(groups)
    if n_groups == 0:
        raise EmptyDatasetError("no rollout groups")
    if cfg.kl_coef > 0 and any(g.ref_logprobs is None for g in groups):
        raise ConfigError("kl_coef > 0 needs reference log-probs on every group")

    # Degenerate (all-tied) groups contribute an exactly-zero clipped term, so
    # they are dropped whenever any group still carries signal; keeping their
    # entropy rows in ordinary batches lets the regularizer erode rungs the
    # policy just consolidated. But when EVERY group ties the batch would be a
    # frozen no-op, and a policy that has concentrated into one rollout per
    # prompt could never re-diversify: that batch becomes a pure entropy step.
    def live(g: RolloutGroup) -> bool:
        return bool(np.any(g.advantages))

    escape = cfg.kl_coef == 0 and cfg.entropy_coef > 0 and not any(map(live, groups))

    # rows: (full sequence, generation start, weight, advantage, old lps, ref lps)
    rows = []
    for g in groups:
        if cfg.kl_coef == 0 and not escape and not live(g):
            continue
        for i, r in enumerate(g.rollouts):
            if not r.token_ids:
                continue
            rows.append(
                (
                    list(r.prompt_ids) + list(r.token_ids),
                    len(r.prompt_ids),
                    1.0 / (n_groups * cfg.group_size * len(r.token_ids)),
                    float(g.advantages[i]),
                    r.logprobs,
                    g.ref_logprobs[i] if g.ref_logprobs is not None else None,
                )
            )
    binding = pol.bind(desc, flat, requires_grad=requires_grad)
    if not rows:
        return Surrogate(0.0, None, None, desc.param_count())

    n = len(rows)
    t_max = max(len(full) for full, *_ in rows)
    inputs = np.zeros((n, t_max - 1), dtype=np.int64)
    targets = np.zeros((n, t_max - 1), dtype=np.int64)
    weights = np.zeros((n, t_max - 1))
    adv = np.asarray([row[3] for row in rows])
    old = np.zeros((n, t_max - 1))
    ref = np.zeros((n, t_max - 1)) if cfg.kl_coef > 0 else None
    for r, (full, start, w, _, old_lp, ref_lp) in enumerate(rows):
        seq = np.asarray(full)
        inputs[r, : len(full) - 1] = seq[:-1]
        targets[r, : len(full) - 1] = seq[1:]
        weights[r, start - 1 : len(full) - 1] = w
        old[r, start - 1 : len(full) - 1] = old_lp
        if ref is not None:
            ref[r, start - 1 : len(full) - 1] = ref_lp

    hidden = pol.init_hidden(binding, n)
    lo, hi = 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps
    root: ag.Tensor | None = None
    last_live = int(np.max(np.nonzero(weights.any(axis=0))[0]))
    for t in range(last_live + 1):
        hidden = pol.step_hidden(binding, hidden, inputs[:, t])
        w_t = weights[:, t]
        if not w_t.any():
            continue
        lsm = ag.log_softmax(pol.step_logits(binding, hidden))
        lp = ag.gather(lsm, targets[:, t])
        ratio = ag.exp(ag.sub(lp, ag.Tensor(old[:, t])))
        term = ag.minimum(ag.mul(ratio, ag.Tensor(adv)), ag.mul(ag.clip(ratio, lo, hi), ag.Tensor(adv)))
        if cfg.kl_coef > 0:
            d = ag.sub(ag.Tensor(ref[:, t]), lp)
            k = ag.sub(ag.sub(ag.exp(d), d), ag.Tensor(np.ones(n)))
            term = ag.sub(term, ag.mul(k, cfg.kl_coef))
        contrib = ag.total(ag.mul(term, ag.Tensor(w_t)))
        if cfg.entropy_coef > 0:
            # per-token entropy bonus, same token weights as the clip term
            neg_ent = ag.total(ag.mul(ag.Tensor(w_t[:, None]), ag.mul(ag.exp(lsm), lsm)))
            contrib = ag.sub(contrib, ag.mul(neg_ent, cfg.entropy_coef))
        root = contrib if root is None else ag.add(root, contrib)
    assert root is not None
    return Surrogate(root.item(), binding, root, desc.param_count())


@dataclass(frozen=True)
class StepReport:
    step: int
    mean_reward: float
    mean_format_reward: float
    mean_answer_reward: float
    frac_format_valid: float
    objective: float
    grad_norm: float
    kl_value: float
    tokens_generated: int
    degenerate_groups: int


REPORT_FIELDS = tuple(StepReport.__dataclass_fields__)


def append_report(path: str | Path, report: StepReport) -> None:
    new = not os.path.exists(path)
    with open(path, "a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=REPORT_FIELDS)
        if new:
            writer.writeheader()
        writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in asdict(report).items()})


def train_step(
    desc: pol.PolicyDescriptor,
    flat: np.ndarray,
    batch: Sequence[RatingExample],
    task: GrpoTask,
    cfg: GrpoConfig,
    rng: np.random.Generator,
    *,
    step: int = 0,
    adam: AdamState | None = None,
    ref_flat: np.ndarray | None = None,
) -> StepReport:
    """Sample, score, and apply one in-place ascent update to `flat`."""
    groups = make_groups(
        desc, flat, batch, task, cfg, rng, ref_flat if cfg.kl_coef > 0 else None
    )
    surr = surrogate_objective(groups, desc, flat, cfg)
    grad = surr.gradient()
    if not np.isfinite(grad).all():
        raise NumericsError(f"non-finite surrogate gradient at step {step}")
    if cfg.optimizer == "adam":
        if adam is None:
            raise ConfigError("adam optimizer needs an AdamState")
        adam_ascend(flat, grad, adam, cfg.learning_rate)
    else:
        sgd_ascend(flat, grad, cfg.learning_rate)
    # an all-degenerate batch has a zero gradient, which would carry bad
    # parameters past the gradient check above
    if not np.isfinite(flat).all():
        raise NumericsError(f"non-finite parameters after step {step}")

    flat_rewards = [b for g in groups for b in g.rewards]
    kl_val = 0.0
    if cfg.kl_coef > 0:
        per_token = np.concatenate(
            [
                kl_estimate(r.logprobs, ref)
                for g in groups
                for r, ref in zip(g.rollouts, g.ref_logprobs)
                if len(r.token_ids)
            ]
        )
        kl_val = float(per_token.mean()) if per_token.size else 0.0
    return StepReport(
        step=step,
        mean_reward=float(np.mean([b.total for b in flat_rewards])),
        mean_format_reward=float(np.mean([b.format_reward for b in flat_rewards])),
        mean_answer_reward=float(np.mean([b.answer_reward for b in flat_rewards])),
        frac_format_valid=float(np.mean([b.valid for b in flat_rewards])),
        objective=surr.value,
        grad_norm=float(np.linalg.norm(grad)),
        kl_value=kl_val,
        tokens_generated=sum(len(r.token_ids) for g in groups for r in g.rollouts),
        degenerate_groups=sum(1 for g in groups if not np.any(g.advantages)),
    )


def train(
    desc: pol.PolicyDescriptor,
    flat: np.ndarray,
    examples: Sequence[RatingExample],
    task: GrpoTask,
    cfg: GrpoConfig,
    seed: int,
    *,
    adam: AdamState | None = None,
    start_step: int = 0,
    ref_flat: np.ndarray | None = None,
    on_report: Callable[[StepReport], None] | None = None,
    on_eval: Callable[[int, np.ndarray], None] | None = None,
    on_checkpoint: Callable[[int, np.ndarray, AdamState | None], None] | None = None,
) -> tuple[np.ndarray, AdamState | None, list[StepReport]]:
    """Epoch loop over full batches; returns (params, adam, reports).

    `start_step` resumes a run: earlier steps are skipped without drawing any
    randomness, and per-step seeding makes the remainder identical to an
    uninterrupted run.
    """
    cfg.validate()
    task.reward_cfg.validate()
    if not examples:
        raise EmptyDatasetError("no training examples")
    if len(examples) < cfg.batch_size:
        raise ConfigError(f"batch_size {cfg.batch_size} exceeds dataset size {len(examples)}")
    flat = flat.copy()
    if cfg.optimizer == "adam" and adam is None:
        adam = AdamState.fresh(flat.size)

    steps_per_epoch = len(examples) // cfg.batch_size
    total = cfg.epochs * steps_per_epoch
    if cfg.max_steps is not None:
        total = min(total, cfg.max_steps)
    reports: list[StepReport] = []
    if on_eval is not None and start_step == 0:
        on_eval(0, flat)
    step = 0
    for epoch in range(cfg.epochs):
        order = step_stream(seed, "order", epoch).permutation(len(examples))
        for b in range(steps_per_epoch):
            if step >= total:
                break
            step += 1
            if step <= start_step:
                continue
            batch = [examples[i] for i in order[b * cfg.batch_size : (b + 1) * cfg.batch_size]]
            report = train_step(
                desc,
                flat,
                batch,
                task,
                cfg,
                step_stream(seed, "rollout", step),
                step=step,
                adam=adam,
                ref_flat=ref_flat,
            )
            reports.append(report)
            if on_report is not None:
                on_report(report)
            if on_eval is not None and (step % cfg.eval_interval == 0 or step == total):
                on_eval(step, flat)
            if on_checkpoint is not None and (step % cfg.checkpoint_interval == 0 or step == total):
                on_checkpoint(step, flat, adam)
    return flat, adam, reports
