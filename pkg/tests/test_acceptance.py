"""Acceptance gates: closed-form contracts, then seeded training dynamics.

Criteria 1-7 check formulas and grammar against independent oracles computed
inline (plain arithmetic, brute-force loops); they finish in well under a
minute. Criteria 8-12 train real pipelines on the default desk-scale world
and are budgeted to fit half an hour together; they share fixtures so the
expensive runs happen once. Run with `pytest -s tests/test_acceptance.py` to
see one verdict line per criterion.
"""

from __future__ import annotations

import functools
import json
import math
import random
import subprocess
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest

from recrl import coldstart as cs
from recrl import evalkit as ek
from recrl import grpo
from recrl import policy as pol
from recrl import tracelang as tl
from recrl.promptkit import PromptLimits, build_prompt
from recrl.reward import RewardBreakdown, RewardConfig, score
from recrl.seeding import stream
from recrl.world import WorldConfig, generate_world, split_dataset


def _verdict(num: int, ok: bool, what: str) -> None:
    print(f"criterion {num:02d} {'PASS' if ok else 'FAIL'}: {what}", flush=True)
    assert ok, f"criterion {num:02d}: {what}"


@pytest.fixture(scope="module")
def vocab():
    return tl.Vocabulary.build(alphabet_size=8, n_items=12)


def _valid_trace_ids(vocab, rating: float, mode: str = "full") -> list[int]:
    whole = int(rating)
    tenth = round(rating * 10) - whole * 10
    bodies = {
        "analyze_user": "[like] attr_1 [dislike] attr_0",
        "analyze_item": "item_3 attrs attr_1",
        "match": "[pos] attr_1",
        "think": "attr_1",
        "rate": f"{whole} . {tenth}",
    }
    parts = []
    for name in tl.MODE_SECTIONS[mode]:
        parts.append(f"<{name}> {bodies[name]} </{name}>")
    return vocab.encode(" ".join(parts) + " <eos>")


# --- criterion 1: reward engine vs a closed-form table -----------------------


def test_criterion_01_reward_table(vocab):
    cfg = RewardConfig(scheme="paper")
    cases = []  # (ids, truth, expected_fmt_valid, expected_pred or None)
    preds = [1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5, 5.0]
    for truth in (1.0, 3.0, 5.0):
        for p in preds:
            cases.append((_valid_trace_ids(vocab, p), truth, True, p))
    for truth in (2.0, 4.0):
        for p in preds:
            # trailing junk: invalid format, rating still extractable
            ids = _valid_trace_ids(vocab, p)[:-1] + vocab.encode("attr_0")
            cases.append((ids, truth, False, p))
    for truth in (1.0, 2.5, 3.0, 4.0, 5.0):
        cases.append((vocab.encode("<analyze_user> attr_1"), truth, False, None))
    assert len(cases) == 50

    ok = True
    for ids, truth, valid, pred in cases:
        got = score(ids, truth, vocab, "full", cfg)
        want_fmt = 0.5 if valid else -0.5
        want_ans = 0.0 if pred is None else 1.0 - abs(truth - pred) / 4.0
        ok &= got.valid == valid
        ok &= abs(got.format_reward - want_fmt) < 1e-12
        ok &= abs(got.answer_reward - want_ans) < 1e-12
        ok &= abs(got.total - (want_fmt + want_ans)) < 1e-12
        ok &= -0.5 - 1e-12 <= got.total <= 1.5 + 1e-12

    pinned = score(_valid_trace_ids(vocab, 3.5), 4.0, vocab, "full", cfg)
    ok &= pinned.total == 1.375

    only = RewardConfig(scheme="correctness_only")
    for ids, truth, _, pred in cases:
        got = score(ids, truth, vocab, "full", only)
        hit = pred is not None and round(pred * 10) == round(truth * 10)
        ok &= got.total == (2.0 if hit else 0.0)
    _verdict(1, ok, "reward engine matches the 50-case closed-form table")


# --- criterion 2: group advantage normalization -------------------------------


def test_criterion_02_advantage_normalization():
    rng = np.random.default_rng(2)
    ok = True
    for i in range(10_000):
        g = int(rng.integers(2, 17))
        if i % 5 == 0:
            rewards = np.full(g, float(rng.normal()))
        else:
            rewards = rng.normal(size=g) * float(rng.uniform(0.1, 3.0))
        adv = grpo.compute_advantages(rewards)
        ok &= abs(adv.mean()) < 1e-9
        std = adv.std()
        ok &= std == 0.0 or abs(std - 1.0) < 1e-9
        if np.ptp(rewards) == 0.0:
            ok &= not adv.any()
    two = grpo.compute_advantages([0.0, 2.0])
    ok &= two[0] == -1.0 and two[1] == 1.0
    _verdict(2, ok, "advantages are zero-mean unit-std, [0,2] maps to [-1,+1]")


# --- criterion 3: GRPO surrogate ----------------------------------------------


def _tiny_instance(seed: int):
    """Random small-policy instance: (desc, old params, groups built by hand)."""
    rng = np.random.default_rng(seed)
    desc = pol.PolicyDescriptor(vocab_size=10, embedding_dim=4, hidden_dim=6)
    assert desc.param_count() <= 500
    flat = pol.init_policy(desc, rng)
    groups = []
    for _ in range(2):
        prompt = [int(t) for t in rng.integers(0, 10, size=int(rng.integers(2, 5)))]
        rollouts, rewards = [], []
        for _ in range(3):
            toks = [int(t) for t in rng.integers(0, 10, size=int(rng.integers(2, 7)))]
            lps = pol.log_probs(desc, flat, prompt, toks)
            rollouts.append(pol.Rollout(tuple(prompt), tuple(toks), lps))
            rewards.append(float(rng.normal()))
        groups.append(
            grpo.RolloutGroup(
                prompt_ids=prompt,
                truth=3.0,
                rollouts=rollouts,
                rewards=[RewardBreakdown(r, r, 0.0, False, None, None) for r in rewards],
                advantages=grpo.compute_advantages(rewards),
            )
        )
    return desc, flat, groups


def _unclipped_oracle(desc, flat, groups, group_size) -> float:
    total = 0.0
    for g in groups:
        if not np.any(g.advantages):
            continue
        for i, r in enumerate(g.rollouts):
            lp_new = pol.log_probs(desc, flat, r.prompt_ids, r.token_ids)
            ratio = np.exp(lp_new - r.logprobs)
            total += (ratio * g.advantages[i]).sum() / (
                len(groups) * group_size * len(r.token_ids)
            )
    return total


def test_criterion_03_grpo_surrogate():
    # the plain clipped objective: desk-only bonus terms pinned to zero
    cfg = grpo.GrpoConfig(group_size=3, batch_size=2, clip_eps=0.2, entropy_coef=0.0)
    ok = True
    rng = np.random.default_rng(3)

    for i in range(100):
        desc, flat, groups = _tiny_instance(300 + i)
        # on-policy value is exactly zero: ratios are 1, advantages sum to 0
        ok &= abs(grpo.surrogate_objective(groups, desc, flat, cfg).value) < 1e-9

        new = flat + 0.05 * rng.normal(size=flat.size)
        wide = grpo.GrpoConfig(group_size=3, batch_size=2, clip_eps=1e9, entropy_coef=0.0)
        got = grpo.surrogate_objective(groups, desc, new, wide).value
        ok &= abs(got - _unclipped_oracle(desc, new, groups, 3)) < 1e-12

        # directional derivative vs central differences
        sur = grpo.surrogate_objective(groups, desc, new, cfg)
        grad = sur.gradient()
        for _ in range(3):
            d = rng.normal(size=new.size)
            d /= np.linalg.norm(d)
            h = 1e-5
            plus = grpo.surrogate_objective(groups, desc, new + h * d, cfg).value
            minus = grpo.surrogate_objective(groups, desc, new - h * d, cfg).value
            fd = (plus - minus) / (2 * h)
            an = float(grad @ d)
            ok &= abs(fd - an) <= 1e-4 * max(abs(fd), abs(an), 1e-8)

    # coordinate-wise finite differences on a few instances
    for i in range(5):
        desc, flat, groups = _tiny_instance(900 + i)
        new = flat + 0.05 * np.random.default_rng(50 + i).normal(size=flat.size)
        grad = grpo.surrogate_objective(groups, desc, new, cfg).gradient()
        fd = np.zeros_like(grad)
        h = 1e-5
        for j in range(new.size):
            stepv = np.zeros_like(new)
            stepv[j] = h
            fd[j] = (
                grpo.surrogate_objective(groups, desc, new + stepv, cfg).value
                - grpo.surrogate_objective(groups, desc, new - stepv, cfg).value
            ) / (2 * h)
        ok &= np.linalg.norm(fd - grad) <= 1e-4 * max(
            np.linalg.norm(fd), np.linalg.norm(grad)
        )

    # saturated clip branches are constants: parameter gradient exactly zero
    for sign, shift in ((1.0, -3.0), (-1.0, 3.0)):
        desc, flat, groups = _tiny_instance(77)
        pushed = []
        for g in groups:
            rolls = [
                pol.Rollout(r.prompt_ids, r.token_ids, r.logprobs + shift)
                for r in g.rollouts
            ]
            pushed.append(
                grpo.RolloutGroup(
                    g.prompt_ids, g.truth, rolls, g.rewards,
                    advantages=np.full(len(rolls), sign),
                )
            )
        grad = grpo.surrogate_objective(pushed, desc, flat, cfg).gradient()
        ok &= np.linalg.norm(grad) == 0.0
    _verdict(3, ok, "surrogate: on-policy zero, unclipped limit, saturation, FD gradient")


# --- criterion 4: SFT objective ------------------------------------------------


def test_criterion_04_sft_objective(vocab):
    ok = True
    desc = pol.PolicyDescriptor(vocab_size=10, embedding_dim=4, hidden_dim=6)
    rng = np.random.default_rng(4)
    for i in range(25):
        flat = pol.init_policy(desc, np.random.default_rng(400 + i))
        rows = []
        for _ in range(3):
            prompt = [int(t) for t in rng.integers(0, 10, size=int(rng.integers(2, 5)))]
            comp = [int(t) for t in rng.integers(0, 10, size=int(rng.integers(2, 7)))]
            rows.append((prompt, comp))

        def nll_at(params):
            return cs.nll_objective(desc, params, rows, requires_grad=False)[0]

        import recrl.autograd as ag

        nll, binding, root = cs.nll_objective(desc, flat, rows)
        ag.backward(root)
        grad = -binding.flat_grad()  # root is the log-likelihood
        for _ in range(3):
            d = rng.normal(size=flat.size)
            d /= np.linalg.norm(d)
            h = 1e-5
            fd = (nll_at(flat + h * d) - nll_at(flat - h * d)) / (2 * h)
            an = float(grad @ d)
            ok &= abs(fd - an) <= 1e-4 * max(abs(fd), abs(an), 1e-8)

    # single-sample memorization: per-token NLL under 0.05 inside 2k steps
    sample = cs.TraceSample(
        user_id=0,
        aligned=True,
        teacher_rating=3.5,
        truth=3.5,
        prompt_ids=tuple(vocab.encode("<sys> item item_3 attrs attr_1 <go>")),
        trace_ids=tuple(_valid_trace_ids(vocab, 3.5)),
    )
    mdesc = pol.PolicyDescriptor(vocab_size=len(vocab), embedding_dim=8, hidden_dim=16)
    flat = pol.init_policy(mdesc, np.random.default_rng(44))
    cfg = cs.SftConfig(learning_rate=3e-3, batch_size=1, epochs=2000, max_steps=2000)
    _, losses = cs.sft_train(mdesc, flat, [sample], cfg, seed=4)
    ok &= len(losses) <= 2000 and losses[-1] < 0.05
    _verdict(4, ok, "SFT gradient matches FD; one sample memorized below 0.05 NLL")


# --- criterion 5: trace grammar fuzz -------------------------------------------


def _random_valid_ids(vocab, rng: random.Random, mode: str) -> list[int]:
    blocked = vocab.structural_ids() | vocab.special_ids()
    content = [t for i, t in enumerate(vocab.tokens) if i not in blocked]
    parts = []
    for name in tl.MODE_SECTIONS[mode]:
        body = " ".join(rng.choice(content) for _ in range(rng.randrange(0, 5)))
        if name == "rate":
            body = f"{rng.randrange(1, 5)} . {rng.randrange(0, 10)}"
            if body.startswith("5"):
                body = "5 . 0"
        parts.append(f"<{name}> {body} </{name}>".replace("  ", " "))
    text = " ".join(parts)
    if rng.random() < 0.5:
        text += " <eos>"
    return vocab.encode(text)


def test_criterion_05_tracelang_fuzz(vocab):
    ok = True
    rng = random.Random(5)
    modes = list(tl.MODES)
    for _ in range(10_000):
        mode = rng.choice(modes)
        ids = _random_valid_ids(vocab, rng, mode)
        verdict = tl.validate(ids, vocab, mode)
        ok &= verdict.valid and verdict.skeleton_progress == 1.0
        ok &= tl.render(tl.parse(ids, vocab, mode), vocab) == ids

    skel = [vocab.id(t) for t in tl.mode_skeleton("full")]
    structural = sorted(vocab.structural_ids())
    for _ in range(10_000):
        ids = _random_valid_ids(vocab, rng, "full")
        kind = rng.choice(["drop", "append", "inject", "rating", "unknown"])
        if kind == "drop":
            ids.remove(rng.choice(skel))
            want = "missing-section"
        elif kind == "append":
            at = ids.index(vocab.id("</rate>")) + 1
            ids.insert(at, vocab.id(rng.choice(["attr_1", "item_2", "7"])))
            want = "trailing-content"
        elif kind == "inject":
            # a structural token inside the user section body
            ids.insert(ids.index(vocab.id("<analyze_user>")) + 1, vocab.id("<match>"))
            want = "out-of-order"
        elif kind == "rating":
            # the dot of the d.d rate body, not a content dot in some section
            ids[ids.index(vocab.id("<rate>")) + 2] = vocab.id(str(rng.randrange(10)))
            want = "unparseable-rating"
        else:
            ids[rng.randrange(len(ids))] = len(vocab) + 3
            want = "unknown-token"
        verdict = tl.validate(ids, vocab, "full")
        ok &= (not verdict.valid) and verdict.reason == want
    _verdict(5, ok, "20k grammar fuzz cases: valid round-trip, corruption classes")


# --- criterion 6: cold-start partition ------------------------------------------


def test_criterion_06_coldstart_partition():
    wc = WorldConfig(events_per_user=56)
    world = generate_world(wc, stream(6, "world"))
    examples = world.examples[:1000]
    vocab = tl.Vocabulary.build(wc.alphabet_size, wc.n_items)
    oracle = cs.TeacherOracle(world.users, wc, cs.TeacherConfig(noise_level=0.3))
    samples = cs.build_trace_dataset(
        examples, oracle, "full", vocab, PromptLimits(), stream(6, "teacher")
    )
    ok = len(samples) == 1000
    n_aligned = 0
    for s, ex in zip(samples, examples):
        embedded = tl.parse(list(s.trace_ids), vocab, "full").rating
        ok &= round(embedded * 10) == round(ex.rating * 10)
        if s.aligned:
            n_aligned += 1
            ok &= round(s.teacher_rating * 10) == round(ex.rating * 10)
        else:
            ok &= round(s.teacher_rating * 10) != round(ex.rating * 10)
    ok &= 0 < n_aligned < 1000
    _verdict(6, ok, "aligned keep teacher ratings, misaligned embed the truth, sizes sum")


# --- criterion 7: metrics oracle -------------------------------------------------


def test_criterion_07_metrics_oracle():
    rng = np.random.default_rng(7)
    ok = True
    for _ in range(1000):
        n = int(rng.integers(1, 65))
        preds = rng.uniform(1.0, 5.0, size=n)
        truth = rng.uniform(1.0, 5.0, size=n)
        mae, rmse = ek.error_metrics(preds, truth)
        brute_mae = sum(abs(float(p) - float(t)) for p, t in zip(preds, truth)) / n
        brute_rmse = math.sqrt(
            sum((float(p) - float(t)) ** 2 for p, t in zip(preds, truth)) / n
        )
        ok &= abs(mae - brute_mae) < 1e-12
        ok &= abs(rmse - brute_rmse) < 1e-12
        ok &= rmse >= mae - 1e-15
    _verdict(7, ok, "MAE/RMSE match brute force within 1e-12, RMSE >= MAE")


# --- criteria 8-12: seeded training dynamics ----------------------------------
#
# One desk-scale preset drives everything below: the default 50-user x
# 200-item world (~2.4k train examples) and one RL recipe. Runs are cached at
# module scope, so the pure-RL policies trained for criterion 8 are the same
# ones criterion 9 compares against the warm starts. Expect these to dominate
# the suite's runtime; the closed-form criteria above stay under a minute.

DYN_SEEDS = (0, 1, 2, 3, 4)
DYN_STEPS = 1800
DYN_EVAL_INTERVAL = 100
ABLATION_STEPS = 240
LIMITS = PromptLimits()
EVAL_CFG = ek.EvalConfig(max_new_tokens=64)
SFT_SUBSET = 400


def _dyn_grpo(max_steps: int) -> grpo.GrpoConfig:
    return grpo.GrpoConfig(
        learning_rate=2e-2,
        temperature=1.25,
        entropy_coef=0.05,
        max_new_tokens=64,
        epochs=50,
        max_steps=max_steps,
        eval_interval=DYN_EVAL_INTERVAL,
        checkpoint_interval=10**9,
    )


@functools.lru_cache(maxsize=None)
def _desk_data(seed: int):
    wc = WorldConfig(events_per_user=56)
    world = generate_world(wc, stream(seed, "world"))
    train, test = split_dataset(world.examples, (0.92, 0.08), stream(seed, "split"))
    vocab = tl.Vocabulary.build(wc.alphabet_size, wc.n_items)
    desc = pol.PolicyDescriptor(vocab_size=len(vocab), embedding_dim=8, hidden_dim=16)
    return wc, world, train, test, vocab, desc


@dataclass
class DynRun:
    curve: list[tuple[int, ek.EvalReport]]
    reports: list[grpo.StepReport]
    params: np.ndarray


def _run_rl(seed: int, flat0: np.ndarray, max_steps: int) -> DynRun:
    wc, world, train, test, vocab, desc = _desk_data(seed)
    task = grpo.GrpoTask(vocab, "full", RewardConfig(scheme="shaped"), LIMITS)
    curve: list[tuple[int, ek.EvalReport]] = []

    def on_eval(step: int, params: np.ndarray) -> None:
        curve.append((step, ek.evaluate(desc, params, test, vocab, "full", LIMITS, EVAL_CFG)))

    flat, _, reports = grpo.train(
        desc, flat0, train, task, _dyn_grpo(max_steps), seed, on_eval=on_eval
    )
    return DynRun(curve, reports, flat)


_RECZERO: dict[int, DynRun] = {}
_RECONE: dict[int, DynRun] = {}


def _reczero(seed: int) -> DynRun:
    if seed not in _RECZERO:
        _, _, _, _, vocab, desc = _desk_data(seed)
        flat = pol.init_policy(desc, stream(seed, "policy-init"))
        _RECZERO[seed] = _run_rl(seed, flat, DYN_STEPS)
    return _RECZERO[seed]


def _recone(seed: int) -> DynRun:
    if seed not in _RECONE:
        wc, world, train, _, vocab, desc = _desk_data(seed)
        flat = pol.init_policy(desc, stream(seed, "policy-init"))
        oracle = cs.TeacherOracle(world.users, wc, cs.TeacherConfig())
        subset = cs.sample_subset(train, SFT_SUBSET, stream(seed, "sft-subset"))
        traces = cs.build_trace_dataset(
            subset, oracle, "full", vocab, LIMITS, stream(seed, "teacher")
        )
        flat, _ = cs.sft_train(desc, flat, traces, cs.SftConfig(), seed)
        _RECONE[seed] = _run_rl(seed, flat, DYN_STEPS)
    return _RECONE[seed]


# --- criterion 8: pure-RL liftoff ---------------------------------------------


def test_criterion_08_reczero_liftoff():
    lines = []
    wins = 0
    for seed in DYN_SEEDS:
        run = _reczero(seed)
        assert len(run.reports) == DYN_STEPS, "epochs must cover max_steps"
        base = run.curve[0][1]
        final = run.curve[-1][1]
        bar = 0.70 * base.mae
        fmt_step = next(
            (s for s, r in run.curve if r.format_valid_fraction >= 0.95), None
        )
        ans_step = next((s for s, r in run.curve if r.mae <= bar), None)
        ok = (
            fmt_step is not None
            and fmt_step <= DYN_STEPS / 3
            and ans_step is not None
            and fmt_step < ans_step
            and final.mae <= bar
        )
        wins += ok
        lines.append(
            f"seed {seed}: fmt>=0.95 @ {fmt_step}, mae bar @ {ans_step}, "
            f"final {final.mae:.3f} vs untrained {base.mae:.3f} ({'ok' if ok else 'miss'})"
        )
    print()
    for line in lines:
        print("  " + line)
    _verdict(
        8,
        wins >= 4,
        f"format locks in inside the first third and final MAE beats the "
        f"untrained policy by 30% on {wins}/5 seeds",
    )


# --- criterion 9: warm start dominates early RL --------------------------------


def test_criterion_09_warm_start_dominates_early():
    wins = 0
    lines = []
    for seed in DYN_SEEDS:
        zero, one = _reczero(seed), _recone(seed)
        z0, o0 = zero.curve[0][1], one.curve[0][1]
        zmap, omap = dict(zero.curve), dict(one.curve)
        early = [s for s in zmap if s <= 200 and s in omap]
        ok = o0.format_valid_fraction > z0.format_valid_fraction and all(
            omap[s].mae < zmap[s].mae for s in early
        )
        wins += ok
        lines.append(
            f"seed {seed}: step-0 format {o0.format_valid_fraction:.2f} vs "
            f"{z0.format_valid_fraction:.2f}, early mae "
            + " ".join(f"{omap[s].mae:.2f}<{zmap[s].mae:.2f}" for s in early)
            + f" ({'ok' if ok else 'miss'})"
        )
    print()
    for line in lines:
        print("  " + line)
    _verdict(
        9,
        wins >= 4,
        f"warm start has higher step-0 format validity and lower MAE at every "
        f"logged checkpoint through step 200 on {wins}/5 seeds",
    )


# --- criteria 10 + 11: ablation orderings ---------------------------------------


@functools.lru_cache(maxsize=1)
def _ablation_medians() -> dict:
    wc, world, train, test, vocab, desc = _desk_data(0)
    bundle = ek.PipelineBundle(
        desc=desc,
        vocab=vocab,
        world_cfg=wc,
        profiles=world.users,
        train=tuple(train),
        test=tuple(test),
        limits=LIMITS,
        teacher_cfg=cs.TeacherConfig(),
        sft_cfg=cs.SftConfig(),
        sft_subset=SFT_SUBSET,
        grpo_cfg=_dyn_grpo(ABLATION_STEPS),
        reward_cfg=RewardConfig(scheme="shaped"),
        eval_cfg=EVAL_CFG,
    )
    table = ek.run_ablation(bundle, ek.AblationSpec(seeds=(0, 1, 2)))
    return table["medians"]


def test_criterion_10_ablation_component_order():
    med = _ablation_medians()
    full = med["full"]["mae"]
    no_multi = med["no_multistep"]["mae"]
    no_think = med["no_thinking"]["mae"]
    corr_only = med["correctness_only"]["mae"]
    print(
        f"\n  medians: full {full:.3f} < no_multistep {no_multi:.3f} < "
        f"no_thinking {no_think:.3f}; correctness_only {corr_only:.3f}"
    )
    _verdict(
        10,
        full < no_multi < no_think and corr_only > full,
        "median MAE orders full < no_multistep < no_thinking and dropping "
        "the format reward hurts",
    )


def test_criterion_11_rl_beats_sft_only():
    med = _ablation_medians()
    sft_only = med["sft_only"]["mae"]
    full = med["full"]["mae"]
    print(f"\n  medians: sft_only {sft_only:.3f} vs full {full:.3f} (same {SFT_SUBSET}-trace budget)")
    _verdict(
        11,
        sft_only > full,
        "SFT without RL has strictly higher median MAE than SFT+RL at the "
        "same teacher-trace budget",
    )


# --- criterion 12: bit-for-bit reproducibility -----------------------------------


TINY_PIPELINE_CONFIG = {
    "run": {"seed": 5, "train_fraction": 0.9},
    "world": {"n_users": 12, "n_items": 24, "events_per_user": 20},
    "grpo": {
        "learning_rate": 2e-2,
        "temperature": 1.25,
        "entropy_coef": 0.05,
        "max_new_tokens": 48,
        "epochs": 10,
        "max_steps": 30,
        "eval_interval": 10,
        "checkpoint_interval": 20,
    },
    "sft": {"subset": 60, "epochs": 1},
    "eval": {"max_new_tokens": 48},
}


def _run_tiny_pipeline(out_dir: Path, config_path: Path) -> Path:
    commands = [
        ["gen-data"],
        ["coldstart-gen"],
        ["sft"],
        ["train-reczero"],
        ["train-recone"],
        ["eval", "--target", "untrained"],
        ["eval", "--target", "sft"],
        ["eval", "--target", "reczero"],
        ["eval", "--target", "recone"],
    ]
    for cmd in commands:
        proc = subprocess.run(
            [sys.executable, "-m", "recrl.cli", *cmd, "--config", str(config_path),
             "--out", str(out_dir), "--quiet"],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0, f"{cmd}: {proc.stderr}"
    (run_dir,) = [p for p in out_dir.iterdir() if p.is_dir()]
    return run_dir


def test_criterion_12_identical_runs_are_bit_identical(tmp_path):
    config_path = tmp_path / "tiny.json"
    config_path.write_text(json.dumps(TINY_PIPELINE_CONFIG))
    run_a = _run_tiny_pipeline(tmp_path / "a", config_path)
    run_b = _run_tiny_pipeline(tmp_path / "b", config_path)
    compared = 0
    mismatched = []
    for sub in ("dataset", "metrics", "checkpoints", "eval"):
        names_a = sorted(p.name for p in (run_a / sub).iterdir())
        names_b = sorted(p.name for p in (run_b / sub).iterdir())
        if names_a != names_b:
            mismatched.append(f"{sub}: {names_a} != {names_b}")
            continue
        for name in names_a:
            compared += 1
            if (run_a / sub / name).read_bytes() != (run_b / sub / name).read_bytes():
                mismatched.append(f"{sub}/{name}")
    ok = not mismatched and compared >= 10
    _verdict(
        12,
        ok,
        f"two pipelines from one config+seed agree byte-for-byte on "
        f"{compared} artifacts" + (f"; mismatches: {mismatched}" if mismatched else ""),
    )
