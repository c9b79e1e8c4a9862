"""Cold-start supervision: scripted teacher traces and next-token SFT.

The teacher reads world latents (user affinity, item attributes) and writes a
trace in the target grammar. Its quality knob is noise_level: each attribute
judgment flips to a random other category with that probability, and the
emitted rating is the example's rating plus Gaussian noise of that magnitude
(then clamped/quantized). A trace whose rating equals the ground truth exactly
is aligned; the rest are rationalized: analysis sections kept, rate section
rewritten to the ground truth. The SFT dataset is the union of aligned and
rationalized traces, flagged so ablations can drop either side.

SFT minimizes token-mean negative log-likelihood of prompt-conditioned trace
tokens (the trailing <eos> included; prompt tokens are never scored).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autograd as ag
from . import policy as pol
from .errors import ConfigError, EmptyDatasetError, NumericsError, ParseError
from .optim import AdamState, adam_ascend
from .promptkit import PromptLimits, build_prompt
from .seeding import step_stream
from .tracelang import MODE_SECTIONS, ParsedTrace, Vocabulary, parse, rating_to_tokens, render
from .world import RatingExample, UserProfile, WorldConfig, quantize_rating

_CATEGORIES = ("like", "dislike", "neutral")


@dataclass(frozen=True)
class TeacherConfig:
    noise_level: float = 0.1

    def validate(self) -> None:
        if not (0.0 <= self.noise_level <= 1.0):
            raise ConfigError("noise_level must be in [0, 1]")


@dataclass(frozen=True)
class TraceSample:
    user_id: int
    aligned: bool
    teacher_rating: float
    truth: float
    prompt_ids: tuple[int, ...]
    trace_ids: tuple[int, ...]  # includes the trailing <eos>


class TeacherOracle:
    def __init__(self, profiles: Sequence[UserProfile], wcfg: WorldConfig, tcfg: TeacherConfig):
        tcfg.validate()
        self.profiles = {p.user_id: p for p in profiles}
        self.wcfg = wcfg
        self.tcfg = tcfg

    def _judge(self, profile: UserProfile, attr: int, rng: np.random.Generator) -> str:
        aff = profile.affinity[attr]
        if aff > self.wcfg.like_threshold:
            truth = "like"
        elif aff < self.wcfg.dislike_threshold:
            truth = "dislike"
        else:
            truth = "neutral"
        if self.tcfg.noise_level > 0 and rng.random() < self.tcfg.noise_level:
            others = [c for c in _CATEGORIES if c != truth]
            return others[int(rng.integers(len(others)))]
        return truth

    def trace(
        self, ex: RatingExample, mode: str, vocab: Vocabulary, rng: np.random.Generator
    ) -> tuple[ParsedTrace, float]:
        """Teacher trace and the teacher's own rating for one example."""
        profile = self.profiles[ex.history.user_id]
        seen = sorted({a for it in ex.history.events for a in it.item.attributes})
        judged = {a: self._judge(profile, a, rng) for a in sorted(set(seen) | set(ex.target.attributes))}
        liked = [a for a in seen if judged[a] == "like"]
        disliked = [a for a in seen if judged[a] == "dislike"]
        t_pos = [a for a in ex.target.attributes if judged[a] == "like"]
        t_neg = [a for a in ex.target.attributes if judged[a] == "dislike"]

        jitter = float(rng.normal(0.0, self.tcfg.noise_level)) if self.tcfg.noise_level > 0 else 0.0
        predicted = quantize_rating(ex.rating + jitter)

        def toks(text: str) -> tuple[int, ...]:
            return tuple(vocab.encode(text)) if text else ()

        attr_text = lambda ids: " ".join(f"attr_{a}" for a in ids)
        user_body = toks(f"[like] {attr_text(liked)} [dislike] {attr_text(disliked)}".strip())
        item_body = toks(f"item {ex.target.title} attrs {attr_text(ex.target.attributes)}")
        match_body = toks(f"[pos] {attr_text(t_pos)} [neg] {attr_text(t_neg)}".strip())
        think_body = user_body + match_body
        bodies = {
            "analyze_user": user_body,
            "analyze_item": item_body,
            "match": match_body,
            "think": think_body,
            "rate": tuple(rating_to_tokens(vocab, predicted)),
        }
        sections = {name: bodies[name] for name in MODE_SECTIONS[mode]}
        return ParsedTrace(mode=mode, sections=sections, rating=predicted, had_eos=True), predicted


def rationalize(trace: ParsedTrace, truth: float, vocab: Vocabulary) -> ParsedTrace:
    """Keep the analysis, rewrite the rate section to the ground truth."""
    sections = dict(trace.sections)
    sections["rate"] = tuple(rating_to_tokens(vocab, truth))
    return ParsedTrace(trace.mode, sections, truth, trace.had_eos)


def sample_subset(
    examples: Sequence[RatingExample], m: int, rng: np.random.Generator
) -> list[RatingExample]:
    if m < 1 or m > len(examples):
        raise ConfigError(f"subset size {m} outside 1..{len(examples)}")
    picks = rng.choice(len(examples), size=m, replace=False)
    return [examples[int(i)] for i in sorted(picks)]


def build_trace_dataset(
    examples: Sequence[RatingExample],
    oracle: TeacherOracle,
    mode: str,
    vocab: Vocabulary,
    limits: PromptLimits,
    rng: np.random.Generator,
) -> list[TraceSample]:
    if not examples:
        raise EmptyDatasetError("no examples for the teacher")
    out = []
    for ex in examples:
        trace, predicted = oracle.trace(ex, mode, vocab, rng)
        aligned = round(predicted * 10) == round(ex.rating * 10)
        if not aligned:
            trace = rationalize(trace, ex.rating, vocab)
        out.append(
            TraceSample(
                user_id=ex.history.user_id,
                aligned=aligned,
                teacher_rating=predicted,
                truth=ex.rating,
                prompt_ids=tuple(build_prompt(ex, mode, limits, vocab)),
                trace_ids=tuple(render(trace, vocab)),
            )
        )
    return out


def export_traces(samples: Sequence[TraceSample], vocab: Vocabulary, path: str | Path) -> None:
    with open(path, "w") as fh:
        for s in samples:
            doc = {
                "user_id": s.user_id,
                "aligned": s.aligned,
                "teacher_rating": s.teacher_rating,
                "truth": s.truth,
                "prompt": vocab.decode(s.prompt_ids),
                "trace": vocab.decode(s.trace_ids),
            }
            fh.write(json.dumps(doc, sort_keys=True) + "\n")


def import_traces(path: str | Path, vocab: Vocabulary) -> list[TraceSample]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
                out.append(
                    TraceSample(
                        user_id=int(doc["user_id"]),
                        aligned=bool(doc["aligned"]),
                        teacher_rating=float(doc["teacher_rating"]),
                        truth=float(doc["truth"]),
                        prompt_ids=tuple(vocab.encode(doc["prompt"])),
                        trace_ids=tuple(vocab.encode(doc["trace"])),
                    )
                )
            except (KeyError, ValueError, TypeError) as exc:
                raise ParseError(f"bad trace sample ({exc!r})", line=lineno) from exc
    return out


# --- supervised fine-tuning --------------------------------------------------


@dataclass(frozen=True)
class SftConfig:
    learning_rate: float = 3e-3
    batch_size: int = 16
    epochs: int = 3
    max_steps: int | None = None

    def validate(self) -> None:
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("sft config needs positive lr, batch_size, epochs")
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigError("max_steps must be >= 1 when set")


def nll_objective(
    desc: pol.PolicyDescriptor,
    flat: np.ndarray,
    rows: Sequence[tuple[Sequence[int], Sequence[int]]],
    requires_grad: bool = True,
) -> tuple[float, pol.Binding, ag.Tensor]:
    """Token-mean log-likelihood of trace tokens, averaged over rows.

    Returns (nll_value, binding, root) where root is the mean LOG-LIKELIHOOD
    tensor: ascending it descends the NLL.
    """
    if not rows:
        raise EmptyDatasetError("no rows to score")
    n = len(rows)
    t_max = max(len(p) + len(c) for p, c in rows)
    inputs = np.zeros((n, t_max - 1), dtype=np.int64)
    targets = np.zeros((n, t_max - 1), dtype=np.int64)
    weights = np.zeros((n, t_max - 1))
    for r, (prompt, completion) in enumerate(rows):
        full = np.asarray(list(prompt) + list(completion))
        inputs[r, : full.size - 1] = full[:-1]
        targets[r, : full.size - 1] = full[1:]
        weights[r, len(prompt) - 1 : full.size - 1] = 1.0 / (n * len(completion))
    binding = pol.bind(desc, flat, requires_grad=requires_grad)
    hidden = pol.init_hidden(binding, n)
    root: ag.Tensor | None = None
    last_live = int(np.max(np.nonzero(weights.any(axis=0))[0]))
    for t in range(last_live + 1):
        hidden = pol.step_hidden(binding, hidden, inputs[:, t])
        w_t = weights[:, t]
        if not w_t.any():
            continue
        lp = ag.gather(ag.log_softmax(pol.step_logits(binding, hidden)), targets[:, t])
        contrib = ag.total(ag.mul(lp, ag.Tensor(w_t)))
        root = contrib if root is None else ag.add(root, contrib)
    assert root is not None
    return -root.item(), binding, root


def sft_train(
    desc: pol.PolicyDescriptor,
    flat: np.ndarray,
    samples: Sequence[TraceSample],
    cfg: SftConfig,
    seed: int,
    *,
    on_loss: Callable[[int, float], None] | None = None,
) -> tuple[np.ndarray, list[float]]:
    """Adam on the completion NLL; returns (params, per-step losses)."""
    cfg.validate()
    if not samples:
        raise EmptyDatasetError("no trace samples")
    flat = flat.copy()
    adam = AdamState.fresh(flat.size)
    losses: list[float] = []
    step = 0
    done = False
    for epoch in range(cfg.epochs):
        if done:
            break
        order = step_stream(seed, "sft", epoch).permutation(len(samples))
        for b in range(0, len(samples), cfg.batch_size):
            rows = [
                (samples[i].prompt_ids, samples[i].trace_ids)
                for i in order[b : b + cfg.batch_size]
            ]
            nll, binding, root = nll_objective(desc, flat, rows)
            ag.backward(root)
            grad = binding.flat_grad()
            if not np.isfinite(grad).all() or not np.isfinite(nll):
                raise NumericsError(f"non-finite SFT loss/gradient at step {step + 1}")
            adam_ascend(flat, grad, adam, cfg.learning_rate)
            step += 1
            losses.append(nll)
            if on_loss is not None:
                on_loss(step, nll)
            if cfg.max_steps is not None and step >= cfg.max_steps:
                done = True
                break
    return flat, losses
