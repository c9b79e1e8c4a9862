"""End-to-end command tests on a miniature config: every command runs, exit
codes map to error classes, reruns warn instead of overwriting, and two
pipelines with the same config and seed produce byte-identical artifacts."""

import json
import subprocess
import sys
from pathlib import Path

import pytest

from recrl import cli
from recrl.errors import ConfigError

TINY = {
    "run": {"train_fraction": 0.8},
    "world": {
        "n_users": 6,
        "n_items": 30,
        "alphabet_size": 6,
        "attrs_per_item": 3,
        "events_per_user": 10,
        "min_history": 3,
        "max_history": 5,
    },
    "policy": {"embedding_dim": 6, "hidden_dim": 8},
    "grpo": {
        "group_size": 3,
        "batch_size": 4,
        "max_new_tokens": 20,
        "max_steps": 2,
        "eval_interval": 1,
    },
    "sft": {"subset": 8, "batch_size": 4, "epochs": 1, "max_steps": 2},
    "eval": {"max_new_tokens": 20, "batch_size": 64},
    "ablation": {"variants": ["no_thinking", "sft_only"], "seeds": [0, 1]},
}


def write_cfg(tmp_path: Path, doc=None) -> str:
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(doc if doc is not None else TINY))
    return str(path)


def run(cmd: str, cfg: str, out: Path, *extra: str) -> int:
    return cli.main([cmd, "--config", cfg, "--out", str(out), "--quiet", *extra])


def test_unknown_config_key_paths(tmp_path):
    bad = write_cfg(tmp_path, {"grpo": {"group_sizee": 4}})
    assert cli.main(["gen-data", "--config", bad, "--out", str(tmp_path / "r")]) == 2
    with pytest.raises(ConfigError, match="grpo.group_sizee"):
        cli.effective_config(bad, None, None)
    with pytest.raises(ConfigError, match="'bogus'"):
        cli.effective_config(write_cfg(tmp_path, {"bogus": 1}), None, None)
    with pytest.raises(ConfigError, match="must be a section"):
        cli.effective_config(write_cfg(tmp_path, {"world": 3}), None, None)
    (tmp_path / "cfg.json").write_text("{not json")
    with pytest.raises(ConfigError, match="not valid JSON"):
        cli.effective_config(str(tmp_path / "cfg.json"), None, None)


def test_settings_validation_errors(tmp_path):
    for patch in (
        {"run": {"mode": "sideways"}},
        {"run": {"train_fraction": 1.0}},
        {"run": {"eval_target": "oracle"}},
        {"run": {"seed": True}},
        {"sft": {"subset": 0}},
        {"policy": {"hidden_dim": 0}},
        {"ablation": {"variants": ["nope"]}},
    ):
        doc = cli.effective_config(write_cfg(tmp_path, patch), None, None)
        with pytest.raises(ConfigError):
            cli.settings_from_doc(doc)


def test_config_hash_ignores_out_but_not_seed():
    a = cli.effective_config(None, 5, "/tmp/a")
    b = cli.effective_config(None, 5, "/tmp/b")
    c = cli.effective_config(None, 6, "/tmp/a")
    assert cli.config_hash(a) == cli.config_hash(b)
    assert cli.config_hash(a) != cli.config_hash(c)


def test_full_pipeline_smoke(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    out = tmp_path / "runs"
    for cmd in ("gen-data", "coldstart-gen", "sft", "train-recone", "train-reczero"):
        assert run(cmd, cfg, out) == 0, cmd
    assert run("eval", cfg, out, "--target", "untrained") == 0
    assert run("eval", cfg, out, "--target", "reczero") == 0
    assert run("report", cfg, out) == 0
    assert run("ablate", cfg, out) == 0

    run_dir = out / cli.config_hash(cli.effective_config(cfg, None, str(out)))
    for rel in (
        "config.json",
        "dataset/world.json",
        "dataset/train.jsonl",
        "dataset/test.jsonl",
        "dataset/vocab.json",
        "traces/sft_traces.jsonl",
        "traces/summary.json",
        "checkpoints/sft.ckpt",
        "checkpoints/reczero.ckpt",
        "checkpoints/recone.ckpt",
        "metrics/sft_steps.csv",
        "metrics/reczero_steps.csv",
        "metrics/reczero_eval.csv",
        "metrics/recone_steps.csv",
        "metrics/recone_eval.csv",
        "eval/untrained_report.json",
        "eval/reczero_report.json",
        "eval/compare.csv",
        "eval/compare.json",
        "eval/ablation.json",
        "eval/cost.json",
    ):
        assert (run_dir / rel).exists(), rel
    assert not (run_dir / ".lock").exists()

    report = json.loads((run_dir / "eval" / "reczero_report.json").read_text())
    assert report["target"] == "reczero" and report["n"] > 0
    compare = json.loads((run_dir / "eval" / "compare.json").read_text())
    assert compare["steps"][0] == 0 and len(compare["steps"]) == 3
    ablation = json.loads((run_dir / "eval" / "ablation.json").read_text())
    assert len(ablation["results"]) == 4
    assert set(ablation["medians"]) == {"no_thinking", "sft_only"}

    # reruns warn on stderr and leave outputs alone
    before = (run_dir / "metrics" / "reczero_steps.csv").read_bytes()
    capsys.readouterr()
    assert run("train-reczero", cfg, out) == 0
    assert "already completed" in capsys.readouterr().err
    assert (run_dir / "metrics" / "reczero_steps.csv").read_bytes() == before


def test_prerequisite_exit_codes(tmp_path):
    cfg = write_cfg(tmp_path)
    out = tmp_path / "runs"
    assert run("train-reczero", cfg, out) == 3  # no dataset yet
    assert run("gen-data", cfg, out) == 0
    assert run("train-recone", cfg, out) == 3  # no sft checkpoint
    assert run("eval", cfg, out, "--target", "recone") == 3
    assert run("report", cfg, out) == 3
    # a failed command must release the lock for the next one
    assert run("coldstart-gen", cfg, out) == 0


def test_lock_file_rejects_second_command(tmp_path):
    cfg = write_cfg(tmp_path)
    out = tmp_path / "runs"
    doc = cli.effective_config(cfg, None, str(out))
    run_dir = cli.prepare_run_dir(doc)
    (run_dir / ".lock").write_text("12345\n")
    assert run("gen-data", cfg, out) == 3
    (run_dir / ".lock").unlink()
    assert run("gen-data", cfg, out) == 0


def test_same_seed_pipelines_are_byte_identical(tmp_path):
    cfg = write_cfg(tmp_path)
    dirs = []
    for name in ("one", "two"):
        out = tmp_path / name
        for cmd in ("gen-data", "coldstart-gen", "sft", "train-reczero", "train-recone"):
            assert run(cmd, cfg, out, "--seed", "9") == 0
        doc = cli.effective_config(cfg, 9, str(out))
        dirs.append(out / cli.config_hash(doc))
    for rel in (
        "dataset/train.jsonl",
        "traces/sft_traces.jsonl",
        "metrics/reczero_steps.csv",
        "metrics/reczero_eval.csv",
        "metrics/recone_eval.csv",
        "checkpoints/sft.ckpt",
        "checkpoints/reczero.ckpt",
        "checkpoints/recone.ckpt",
    ):
        assert (dirs[0] / rel).read_bytes() == (dirs[1] / rel).read_bytes(), rel


def test_console_entry_reports_config_errors(tmp_path):
    bad = write_cfg(tmp_path, {"reward": {"scheme": "vibes"}})
    proc = subprocess.run(
        [sys.executable, "-m", "recrl.cli", "gen-data", "--config", bad, "--out", str(tmp_path / "r")],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 2
    assert "config error" in proc.stderr
