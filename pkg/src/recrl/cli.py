"""Command-line pipeline driver.

One sectioned JSON config describes a whole experiment; every command writes
under <out>/<hash12-of-config>, so rerunning with the same config and seed is
idempotent (a done-marker makes the rerun warn and exit 0 instead of silently
overwriting) and different configs never collide.  A lock file rejects
concurrent commands on the same run directory.

Commands:
  gen-data       synthesize the world, split it, write dataset + vocabulary
  train-reczero  RL from random init (pure-RL arm)
  coldstart-gen  scripted-teacher traces for the warm start
  sft            supervised fine-tune on the traces -> warm checkpoint
  train-recone   RL from the warm checkpoint (same RL config as reczero)
  eval           greedy-decode a checkpoint (or the untrained init) on test
  ablate         variant x seed grid with per-variant medians + cost table
  report         merge the reczero/recone eval curves into one comparison

Exit codes: 0 ok, 2 config error, 3 missing/locked prerequisite, 4 numerics.

All randomness flows from run.seed through named sub-streams (see seeding);
the config defaults are the desk-scale preset, sized so a full pipeline runs
on one core in minutes.  GrpoConfig.paper_preset() holds the reference-scale
RL hyperparameters for comparison.
"""

from __future__ import annotations

import os
import sys

# numpy reads the thread-count env vars at import time, so they must be set
# before anything below pulls it in.
if os.environ.get("RECRL_THREADS"):
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, os.environ["RECRL_THREADS"])

import argparse
import csv
import hashlib
import json
from contextlib import contextmanager
from copy import deepcopy
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import coldstart as cs
from . import evalkit as ek
from . import grpo
from . import policy as pol
from .errors import (
    ConfigError,
    EmptyDatasetError,
    NumericsError,
    ParseError,
    PrerequisiteError,
)
from .promptkit import PromptLimits
from .reward import RewardConfig
from .seeding import stream
from .tracelang import MODES, Vocabulary
from .world import (
    RatingExample,
    UserProfile,
    WorldConfig,
    export_examples,
    generate_world,
    import_examples,
    load_world_sides,
    save_world,
    split_dataset,
)

EVAL_TARGETS = ("untrained", "sft", "reczero", "recone")

EVAL_FIELDS = (
    "step",
    "n",
    "mae",
    "rmse",
    "format_valid_fraction",
    "unparseable_count",
    "avg_generated_tokens",
)


def default_config() -> dict:
    """Desk-preset defaults: 50 users x 200 items, ~2.4k train examples."""
    return {
        "run": {
            "seed": 0,
            "out": "runs",
            "mode": "full",
            "train_fraction": 0.92,
            "eval_target": "reczero",
        },
        "world": {**asdict(WorldConfig()), "events_per_user": 56},
        "limits": asdict(PromptLimits()),
        "policy": {"embedding_dim": 8, "hidden_dim": 16},
        "grpo": asdict(grpo.GrpoConfig()),
        "reward": asdict(RewardConfig(scheme="shaped")),
        "teacher": asdict(cs.TeacherConfig()),
        "sft": {"subset": 400, **asdict(cs.SftConfig())},
        "eval": asdict(ek.EvalConfig()),
        "ablation": {"variants": list(ek.VARIANTS), "seeds": [0, 1, 2]},
    }


def _merge(base: dict, override: dict, path: str = "") -> None:
    """Overlay override onto base in place; keys absent from base are errors."""
    for key, value in override.items():
        here = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key {here!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {here!r} must be a section")
            _merge(base[key], value, here)
        else:
            base[key] = value


def effective_config(config_path: str | None, seed: int | None, out: str | None) -> dict:
    doc = default_config()
    if config_path is not None:
        try:
            loaded = json.loads(Path(config_path).read_text())
        except FileNotFoundError:
            raise PrerequisiteError(f"config file {config_path} not found") from None
        except ValueError as exc:
            raise ConfigError(f"config file {config_path} is not valid JSON ({exc})") from exc
        if not isinstance(loaded, dict):
            raise ConfigError(f"config file {config_path} must hold a JSON object")
        _merge(doc, loaded)
    if seed is not None:
        doc["run"]["seed"] = seed
    if out is not None:
        doc["run"]["out"] = out
    return doc


@dataclass(frozen=True)
class Settings:
    """Typed view of the effective config; construction validates everything."""

    doc: dict
    seed: int
    mode: str
    train_fraction: float
    eval_target: str
    world: WorldConfig
    limits: PromptLimits
    embedding_dim: int
    hidden_dim: int
    grpo: grpo.GrpoConfig
    reward: RewardConfig
    teacher: cs.TeacherConfig
    sft: cs.SftConfig
    sft_subset: int
    eval: ek.EvalConfig
    ablation: ek.AblationSpec


def settings_from_doc(doc: dict) -> Settings:
    run = doc["run"]
    if not isinstance(run["seed"], int) or isinstance(run["seed"], bool):
        raise ConfigError("run.seed must be an integer")
    if run["mode"] not in MODES:
        raise ConfigError(f"run.mode must be one of {MODES}, got {run['mode']!r}")
    if not (0.0 < run["train_fraction"] < 1.0):
        raise ConfigError("run.train_fraction must lie strictly between 0 and 1")
    if run["eval_target"] not in EVAL_TARGETS:
        raise ConfigError(f"run.eval_target must be one of {EVAL_TARGETS}")
    sft_doc = dict(doc["sft"])
    sft_subset = sft_doc.pop("subset")
    if not isinstance(sft_subset, int) or sft_subset < 1:
        raise ConfigError("sft.subset must be a positive integer")
    pol_doc = doc["policy"]
    for key in ("embedding_dim", "hidden_dim"):
        if not isinstance(pol_doc[key], int) or pol_doc[key] < 1:
            raise ConfigError(f"policy.{key} must be a positive integer")
    try:
        settings = Settings(
            doc=doc,
            seed=run["seed"],
            mode=run["mode"],
            train_fraction=run["train_fraction"],
            eval_target=run["eval_target"],
            world=WorldConfig(**doc["world"]),
            limits=PromptLimits(**doc["limits"]),
            embedding_dim=pol_doc["embedding_dim"],
            hidden_dim=pol_doc["hidden_dim"],
            grpo=grpo.GrpoConfig(**doc["grpo"]),
            reward=RewardConfig(**doc["reward"]),
            teacher=cs.TeacherConfig(**doc["teacher"]),
            sft=cs.SftConfig(**sft_doc),
            sft_subset=sft_subset,
            eval=ek.EvalConfig(**doc["eval"]),
            ablation=ek.AblationSpec(
                variants=tuple(doc["ablation"]["variants"]),
                seeds=tuple(doc["ablation"]["seeds"]),
            ),
        )
    except TypeError as exc:
        raise ConfigError(f"bad config value ({exc})") from exc
    settings.world.validate()
    settings.grpo.validate()
    settings.reward.validate()
    settings.teacher.validate()
    settings.sft.validate()
    settings.eval.validate()
    settings.ablation.validate()
    if settings.limits.max_prompt_tokens < 8:
        raise ConfigError("limits.max_prompt_tokens is too small to hold any prompt")
    return settings


def config_hash(doc: dict) -> str:
    """Identity of a run: every config value except where outputs land."""
    hashed = deepcopy(doc)
    hashed["run"].pop("out", None)
    canon = json.dumps(hashed, sort_keys=True)
    return hashlib.sha256(canon.encode()).hexdigest()[:12]


def prepare_run_dir(doc: dict) -> Path:
    run_dir = Path(doc["run"]["out"]) / config_hash(doc)
    for sub in ("", "dataset", "traces", "checkpoints", "metrics", "eval", "done"):
        (run_dir / sub).mkdir(parents=True, exist_ok=True)
    snapshot = run_dir / "config.json"
    if not snapshot.exists():
        snapshot.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")
    return run_dir


@contextmanager
def run_lock(run_dir: Path):
    lock = run_dir / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise PrerequisiteError(
            f"lock file {lock} exists: another command is using this run "
            "directory (delete the file if that run is dead)"
        ) from None
    os.write(fd, f"{os.getpid()}\n".encode())
    os.close(fd)
    try:
        yield
    finally:
        lock.unlink(missing_ok=True)


def _already_done(run_dir: Path, name: str) -> bool:
    marker = run_dir / "done" / f"{name}.marker"
    if marker.exists():
        # a warning, not progress: it survives --quiet
        print(
            f"{name}: already completed for this config; outputs kept "
            f"(remove {marker} to redo)",
            file=sys.stderr,
        )
        return True
    return False


def _mark_done(run_dir: Path, name: str) -> None:
    (run_dir / "done" / f"{name}.marker").write_text("done\n")


def _say(quiet: bool, msg: str) -> None:
    if not quiet:
        print(msg)


# --- artifact I/O -----------------------------------------------------------


def _require(path: Path, producer: str) -> Path:
    if not path.exists():
        raise PrerequisiteError(f"missing {path}; run the {producer} command first")
    return path


@dataclass(frozen=True)
class Dataset:
    world_cfg: WorldConfig
    users: tuple[UserProfile, ...]
    train: list[RatingExample]
    test: list[RatingExample]
    vocab: Vocabulary


def _load_dataset(run_dir: Path) -> Dataset:
    ds = run_dir / "dataset"
    world_cfg, users, _ = load_world_sides(_require(ds / "world.json", "gen-data"))
    vocab = Vocabulary.load(_require(ds / "vocab.json", "gen-data"))
    train = import_examples(_require(ds / "train.jsonl", "gen-data"))
    test = import_examples(_require(ds / "test.jsonl", "gen-data"))
    return Dataset(world_cfg, users, train, test, vocab)


def _descriptor(settings: Settings, vocab: Vocabulary) -> pol.PolicyDescriptor:
    desc = pol.PolicyDescriptor(
        vocab_size=len(vocab),
        embedding_dim=settings.embedding_dim,
        hidden_dim=settings.hidden_dim,
    )
    desc.validate()
    return desc


def _append_eval_row(path: Path, step: int, report: ek.EvalReport) -> None:
    new = not path.exists()
    with open(path, "a", newline="") as fh:
        writer = csv.writer(fh)
        if new:
            writer.writerow(EVAL_FIELDS)
        writer.writerow(
            [
                step,
                report.n,
                repr(report.mae),
                repr(report.rmse),
                repr(report.format_valid_fraction),
                report.unparseable_count,
                repr(report.avg_generated_tokens),
            ]
        )


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")


# --- commands ----------------------------------------------------------------


def cmd_gen_data(settings: Settings, run_dir: Path, quiet: bool) -> int:
    if _already_done(run_dir, "gen-data"):
        return 0
    world = generate_world(settings.world, stream(settings.seed, "world"))
    frac = settings.train_fraction
    train, test = split_dataset(world.examples, (frac, 1.0 - frac), stream(settings.seed, "split"))
    if not train or not test:
        raise ConfigError("train_fraction leaves an empty split at this world size")
    vocab = Vocabulary.build(settings.world.alphabet_size, settings.world.n_items)
    ds = run_dir / "dataset"
    save_world(world, ds / "world.json")
    export_examples(train, ds / "train.jsonl")
    export_examples(test, ds / "test.jsonl")
    vocab.save(ds / "vocab.json")
    _mark_done(run_dir, "gen-data")
    _say(
        quiet,
        f"gen-data: {len(train)} train / {len(test)} test examples, "
        f"{len(vocab)} vocabulary tokens -> {ds}",
    )
    return 0


def _train_rl(settings: Settings, run_dir: Path, quiet: bool, label: str, flat0: np.ndarray,
              desc: pol.PolicyDescriptor, data: Dataset) -> None:
    """Shared RL loop for train-reczero / train-recone: curves + final checkpoint."""
    metrics = run_dir / "metrics"
    steps_csv = metrics / f"{label}_steps.csv"
    eval_csv = metrics / f"{label}_eval.csv"
    task = grpo.GrpoTask(data.vocab, settings.mode, settings.reward, settings.limits)

    def on_report(report: grpo.StepReport) -> None:
        grpo.append_report(steps_csv, report)

    def on_eval(step: int, params: np.ndarray) -> None:
        report = ek.evaluate(
            desc, params, data.test, data.vocab, settings.mode, settings.limits, settings.eval
        )
        _append_eval_row(eval_csv, step, report)
        _say(
            quiet,
            f"{label} step {step}: mae {report.mae:.4f} rmse {report.rmse:.4f} "
            f"format {report.format_valid_fraction:.3f}",
        )

    def on_checkpoint(step: int, params: np.ndarray, adam) -> None:
        pol.save_checkpoint(
            run_dir / "checkpoints" / f"{label}_last.ckpt",
            desc,
            params,
            data.vocab.content_hash(),
            optimizer=adam.to_dict() if adam is not None else None,
            trainer={"step": step, "seed": settings.seed, "label": label},
        )

    flat, adam, reports = grpo.train(
        desc,
        flat0,
        data.train,
        task,
        settings.grpo,
        settings.seed,
        on_report=on_report,
        on_eval=on_eval,
        on_checkpoint=on_checkpoint,
    )
    pol.save_checkpoint(
        run_dir / "checkpoints" / f"{label}.ckpt",
        desc,
        flat,
        data.vocab.content_hash(),
        optimizer=adam.to_dict() if adam is not None else None,
        trainer={"step": len(reports), "seed": settings.seed, "label": label},
    )
    _say(quiet, f"{label}: {len(reports)} steps -> {run_dir / 'checkpoints' / (label + '.ckpt')}")


def cmd_train_reczero(settings: Settings, run_dir: Path, quiet: bool) -> int:
    if _already_done(run_dir, "train-reczero"):
        return 0
    data = _load_dataset(run_dir)
    desc = _descriptor(settings, data.vocab)
    flat = pol.init_policy(desc, stream(settings.seed, "policy-init"))
    _train_rl(settings, run_dir, quiet, "reczero", flat, desc, data)
    _mark_done(run_dir, "train-reczero")
    return 0


def cmd_coldstart_gen(settings: Settings, run_dir: Path, quiet: bool) -> int:
    if _already_done(run_dir, "coldstart-gen"):
        return 0
    data = _load_dataset(run_dir)
    if settings.sft_subset > len(data.train):
        raise ConfigError(
            f"sft.subset {settings.sft_subset} exceeds the train split ({len(data.train)})"
        )
    oracle = cs.TeacherOracle(data.users, data.world_cfg, settings.teacher)
    subset = cs.sample_subset(data.train, settings.sft_subset, stream(settings.seed, "sft-subset"))
    traces = cs.build_trace_dataset(
        subset, oracle, settings.mode, data.vocab, settings.limits, stream(settings.seed, "teacher")
    )
    out = run_dir / "traces" / "sft_traces.jsonl"
    cs.export_traces(traces, data.vocab, out)
    aligned = sum(1 for t in traces if t.aligned)
    _write_json(
        run_dir / "traces" / "summary.json",
        {
            "total": len(traces),
            "aligned": aligned,
            "misaligned": len(traces) - aligned,
            "noise_level": settings.teacher.noise_level,
        },
    )
    _mark_done(run_dir, "coldstart-gen")
    _say(quiet, f"coldstart-gen: {len(traces)} traces ({aligned} aligned) -> {out}")
    return 0


def cmd_sft(settings: Settings, run_dir: Path, quiet: bool) -> int:
    if _already_done(run_dir, "sft"):
        return 0
    data = _load_dataset(run_dir)
    traces = cs.import_traces(
        _require(run_dir / "traces" / "sft_traces.jsonl", "coldstart-gen"), data.vocab
    )
    desc = _descriptor(settings, data.vocab)
    flat = pol.init_policy(desc, stream(settings.seed, "policy-init"))
    loss_csv = run_dir / "metrics" / "sft_steps.csv"

    def on_loss(step: int, loss: float) -> None:
        new = not loss_csv.exists()
        with open(loss_csv, "a", newline="") as fh:
            writer = csv.writer(fh)
            if new:
                writer.writerow(("step", "nll"))
            writer.writerow((step, repr(loss)))

    flat, losses = cs.sft_train(desc, flat, traces, settings.sft, settings.seed, on_loss=on_loss)
    pol.save_checkpoint(
        run_dir / "checkpoints" / "sft.ckpt",
        desc,
        flat,
        data.vocab.content_hash(),
        trainer={"sft_steps": len(losses), "seed": settings.seed, "label": "sft"},
    )
    _say(
        quiet,
        f"sft: {len(losses)} steps, final nll {losses[-1]:.4f} -> "
        f"{run_dir / 'checkpoints' / 'sft.ckpt'}",
    )
    _mark_done(run_dir, "sft")
    return 0


def cmd_train_recone(settings: Settings, run_dir: Path, quiet: bool) -> int:
    if _already_done(run_dir, "train-recone"):
        return 0
    data = _load_dataset(run_dir)
    ckpt_path = _require(run_dir / "checkpoints" / "sft.ckpt", "sft")
    ckpt = pol.load_checkpoint(ckpt_path, expect_vocab_sha256=data.vocab.content_hash())
    _train_rl(settings, run_dir, quiet, "recone", ckpt.params, ckpt.desc, data)
    _mark_done(run_dir, "train-recone")
    return 0


def cmd_eval(settings: Settings, run_dir: Path, quiet: bool, target: str | None = None) -> int:
    target = target or settings.eval_target
    if target not in EVAL_TARGETS:
        raise ConfigError(f"eval target must be one of {EVAL_TARGETS}, got {target!r}")
    if _already_done(run_dir, f"eval-{target}"):
        return 0
    data = _load_dataset(run_dir)
    if target == "untrained":
        desc = _descriptor(settings, data.vocab)
        flat = pol.init_policy(desc, stream(settings.seed, "policy-init"))
    else:
        producer = {"sft": "sft", "reczero": "train-reczero", "recone": "train-recone"}[target]
        ckpt = pol.load_checkpoint(
            _require(run_dir / "checkpoints" / f"{target}.ckpt", producer),
            expect_vocab_sha256=data.vocab.content_hash(),
        )
        desc, flat = ckpt.desc, ckpt.params
    report = ek.evaluate(
        desc, flat, data.test, data.vocab, settings.mode, settings.limits, settings.eval
    )
    out = run_dir / "eval" / f"{target}_report.json"
    _write_json(out, {"target": target, **asdict(report)})
    _mark_done(run_dir, f"eval-{target}")
    _say(
        quiet,
        f"eval {target}: n {report.n} mae {report.mae:.4f} rmse {report.rmse:.4f} "
        f"format {report.format_valid_fraction:.3f} -> {out}",
    )
    return 0


def cmd_ablate(settings: Settings, run_dir: Path, quiet: bool) -> int:
    if _already_done(run_dir, "ablate"):
        return 0
    data = _load_dataset(run_dir)
    bundle = ek.PipelineBundle(
        desc=_descriptor(settings, data.vocab),
        vocab=data.vocab,
        world_cfg=data.world_cfg,
        profiles=data.users,
        train=tuple(data.train),
        test=tuple(data.test),
        limits=settings.limits,
        teacher_cfg=settings.teacher,
        sft_cfg=settings.sft,
        sft_subset=settings.sft_subset,
        grpo_cfg=settings.grpo,
        reward_cfg=settings.reward,
        eval_cfg=settings.eval,
    )
    table = ek.run_ablation(bundle, settings.ablation)
    results = table["results"]
    _write_json(
        run_dir / "eval" / "ablation.json",
        {
            "medians": table["medians"],
            "results": [
                {
                    "variant": r.variant,
                    "seed": r.seed,
                    "rl_steps": len(r.rl_reports),
                    "sft_steps": r.sft_steps,
                    "eval": asdict(r.eval_report),
                }
                for r in results
            ],
        },
    )
    _write_json(
        run_dir / "eval" / "cost.json",
        {"rows": [ek.cost_report(r, settings.grpo) for r in results]},
    )
    if not quiet:
        for variant in settings.ablation.variants:
            med = table["medians"][variant]
            print(
                f"ablate {variant}: median mae {med['mae']:.4f} "
                f"rmse {med['rmse']:.4f} format {med['format_valid_fraction']:.3f}"
            )
    _mark_done(run_dir, "ablate")
    return 0


def _read_eval_curve(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return [
            {k: (int(row[k]) if k in ("step", "n", "unparseable_count") else float(row[k]))
             for k in EVAL_FIELDS}
            for row in csv.DictReader(fh)
        ]


def cmd_report(settings: Settings, run_dir: Path, quiet: bool) -> int:
    if _already_done(run_dir, "report"):
        return 0
    metrics = run_dir / "metrics"
    zero = {r["step"]: r for r in _read_eval_curve(_require(metrics / "reczero_eval.csv", "train-reczero"))}
    one = {r["step"]: r for r in _read_eval_curve(_require(metrics / "recone_eval.csv", "train-recone"))}
    steps = sorted(set(zero) & set(one))
    if not steps:
        raise PrerequisiteError("the reczero and recone eval curves share no logged steps")
    compare_csv = run_dir / "eval" / "compare.csv"
    with open(compare_csv, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ("step", "reczero_mae", "recone_mae", "reczero_format", "recone_format")
        )
        for s in steps:
            writer.writerow(
                (
                    s,
                    repr(zero[s]["mae"]),
                    repr(one[s]["mae"]),
                    repr(zero[s]["format_valid_fraction"]),
                    repr(one[s]["format_valid_fraction"]),
                )
            )
    summary = {
        "steps": steps,
        "recone_mae_lower_everywhere": all(one[s]["mae"] < zero[s]["mae"] for s in steps),
        "recone_format_higher_at_step0": (
            one[steps[0]]["format_valid_fraction"] > zero[steps[0]]["format_valid_fraction"]
            if steps[0] == 0
            else False
        ),
        "final": {
            "reczero_mae": zero[steps[-1]]["mae"],
            "recone_mae": one[steps[-1]]["mae"],
        },
    }
    _write_json(run_dir / "eval" / "compare.json", summary)
    _mark_done(run_dir, "report")
    _say(
        quiet,
        f"report: {len(steps)} shared eval points, recone lower mae everywhere: "
        f"{summary['recone_mae_lower_everywhere']} -> {compare_csv}",
    )
    return 0


# --- entry point --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; omitted keys use desk defaults")
    common.add_argument("--seed", type=int, help="override run.seed")
    common.add_argument("--out", help="override run.out (parent of run directories)")
    common.add_argument("--quiet", action="store_true", help="suppress progress output")
    parser = argparse.ArgumentParser(
        prog="recrl",
        description="train tiny rating-prediction policies with rule-reward RL",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", parents=[common], help="synthesize dataset + vocabulary")
    sub.add_parser("train-reczero", parents=[common], help="RL from random init")
    sub.add_parser("coldstart-gen", parents=[common], help="scripted-teacher SFT traces")
    sub.add_parser("sft", parents=[common], help="supervised warm start from the traces")
    sub.add_parser("train-recone", parents=[common], help="RL from the SFT checkpoint")
    evalp = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on test")
    evalp.add_argument(
        "--target", choices=EVAL_TARGETS, help="which parameters to evaluate (default run.eval_target)"
    )
    sub.add_parser("ablate", parents=[common], help="variant x seed grid with medians")
    sub.add_parser("report", parents=[common], help="merge reczero/recone eval curves")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        doc = effective_config(args.config, args.seed, args.out)
        settings = settings_from_doc(doc)
        run_dir = prepare_run_dir(doc)
        with run_lock(run_dir):
            if args.command == "gen-data":
                return cmd_gen_data(settings, run_dir, args.quiet)
            if args.command == "train-reczero":
                return cmd_train_reczero(settings, run_dir, args.quiet)
            if args.command == "coldstart-gen":
                return cmd_coldstart_gen(settings, run_dir, args.quiet)
            if args.command == "sft":
                return cmd_sft(settings, run_dir, args.quiet)
            if args.command == "train-recone":
                return cmd_train_recone(settings, run_dir, args.quiet)
            if args.command == "eval":
                return cmd_eval(settings, run_dir, args.quiet, args.target)
            if args.command == "ablate":
                return cmd_ablate(settings, run_dir, args.quiet)
            return cmd_report(settings, run_dir, args.quiet)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (PrerequisiteError, ParseError, EmptyDatasetError, FileNotFoundError) as exc:
        print(f"prerequisite error: {exc}", file=sys.stderr)
        return 3
    except NumericsError as exc:
        print(f"numerics error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
