"""CLI contract: commands, exit codes, determinism of artifacts."""

import json
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from diffwm.cli import main


@pytest.fixture
def runner():
    return CliRunner()


def _train(runner, tmp_path, name, *extra):
    out = tmp_path / name
    res = runner.invoke(main, ["train", "--profile", "ci", "--seed", "3",
                               "--outdir", str(out), *extra])
    return res, out


def test_train_smoke_writes_artifacts(runner, tmp_path):
    res, out = _train(runner, tmp_path, "run1")
    assert res.exit_code == 0, res.output
    assert (out / "metrics.jsonl").exists()
    assert (out / "checkpoint.ckpt").exists()
    summary = json.loads((out / "summary.json").read_text())
    assert "final_epoch_mean_return" in summary
    assert summary["env_steps_total"] > 0
    rows = [json.loads(l) for l in (out / "metrics.jsonl").read_text().splitlines()]
    names = {r["name"] for r in rows}
    assert {"diffusion_loss", "reward_end_loss", "policy_loss",
            "value_loss"} <= names


def test_train_deterministic_artifacts(runner, tmp_path):
    res1, out1 = _train(runner, tmp_path, "runA")
    res2, out2 = _train(runner, tmp_path, "runB")
    assert res1.exit_code == res2.exit_code == 0
    assert (out1 / "summary.json").read_text() == (out2 / "summary.json").read_text()
    assert (out1 / "metrics.jsonl").read_text() == (out2 / "metrics.jsonl").read_text()


def test_train_bad_config_key_exits_2(runner, tmp_path):
    res, _ = _train(runner, tmp_path, "run2", "--set", "bogus.key=1")
    assert res.exit_code == 2
    assert "bogus.key" in res.output


def test_train_bad_value_exits_2(runner, tmp_path):
    res, _ = _train(runner, tmp_path, "run3", "--set", "agent.gamma=maybe")
    assert res.exit_code == 2


def test_eval_roundtrip_and_scores_feed_metrics(runner, tmp_path):
    res, out = _train(runner, tmp_path, "run4")
    assert res.exit_code == 0
    evout = tmp_path / "ev"
    res = runner.invoke(main, ["eval", "--checkpoint", str(out / "checkpoint.ckpt"),
                               "--episodes", "3", "--outdir", str(evout)])
    assert res.exit_code == 0, res.output
    report = json.loads((evout / "eval_report.json").read_text())
    assert report["episodes"] == 3 and len(report["returns"]) == 3
    res = runner.invoke(main, ["metrics", str(evout / "scores.csv")])
    assert res.exit_code == 0, res.output
    assert "Har-HNS" in res.output


def test_eval_zero_episodes_ok(runner, tmp_path):
    res, out = _train(runner, tmp_path, "run5")
    evout = tmp_path / "ev0"
    res = runner.invoke(main, ["eval", "--checkpoint", str(out / "checkpoint.ckpt"),
                               "--episodes", "0", "--outdir", str(evout)])
    assert res.exit_code == 0, res.output
    report = json.loads((evout / "eval_report.json").read_text())
    assert report["returns"] == []
    assert not (evout / "scores.csv").exists()


def test_eval_missing_checkpoint_fails(runner, tmp_path):
    bad = tmp_path / "nope.ckpt"
    bad.write_bytes(b"not a checkpoint")
    res = runner.invoke(main, ["eval", "--checkpoint", str(bad), "--episodes", "1",
                               "--outdir", str(tmp_path / "evx")])
    assert res.exit_code == 1


def test_eval_random_policy_lands_in_anchor_band(runner, tmp_path):
    """A freshly initialized (near-uniform) policy should score near the
    random anchor on the toy task."""
    res, out = _train(runner, tmp_path, "run6", "--set", "run.num_epochs=1")
    assert res.exit_code == 0
    evout = tmp_path / "evband"
    res = runner.invoke(main, ["eval", "--checkpoint", str(out / "checkpoint.ckpt"),
                               "--episodes", "10", "--seed", "77",
                               "--outdir", str(evout)])
    assert res.exit_code == 0
    report = json.loads((evout / "eval_report.json").read_text())
    from diffwm.envs import compute_anchors
    anchors = compute_anchors("dot-collect", episodes=20, seed=0, obs_size=32,
                              grid_size=6, max_episode_len=20)
    band = 5 * max(anchors["random_std"], 0.5)
    assert abs(report["mean"] - anchors["random_mean"]) <= band


def test_metrics_on_bundled_benchmark(runner):
    res = runner.invoke(main, ["metrics", "--benchmark", "jedi"])
    assert res.exit_code == 0, res.output
    assert "1.4502" in res.output
    assert "0.3766" in res.output
    res = runner.invoke(main, ["metrics", "--benchmark", "diamond"])
    assert "1.4591" in res.output
    assert "0.3194" in res.output


def test_metrics_parse_error_exits_2(runner, tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("this,is,not\na,score,table\n")
    res = runner.invoke(main, ["metrics", str(bad)])
    assert res.exit_code == 2
    res = runner.invoke(main, ["metrics", str(tmp_path / "missing.csv")])
    assert res.exit_code == 2
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    res = runner.invoke(main, ["metrics", str(empty)])
    assert res.exit_code == 2


def test_metrics_single_row_table(runner, tmp_path):
    path = tmp_path / "one.csv"
    path.write_text("task,random,human,score_1\ntoy,0.0,2.0,1.0\n")
    res = runner.invoke(main, ["metrics", str(path)])
    assert res.exit_code == 0
    assert "0.5000" in res.output  # HNS of the single row everywhere


def test_metrics_emits_plot_data(runner, tmp_path):
    plots = tmp_path / "plots"
    res = runner.invoke(main, ["metrics", "--benchmark", "jedi",
                               "--plots-dir", str(plots),
                               "--out", str(tmp_path / "agg.json")])
    assert res.exit_code == 0
    assert (plots / "performance_profile.csv").exists()
    assert (plots / "per_task_hns.csv").exists()
    agg = json.loads((tmp_path / "agg.json").read_text())
    assert abs(agg["mean"] - 1.450) < 0.005


def test_verify_ib_passes(runner):
    res = runner.invoke(main, ["verify-ib", "--model", "both", "--trials", "30",
                               "--seed", "0"])
    assert res.exit_code == 0, res.output
    assert res.output.count("[PASS]") == 2


def test_anchors_command(runner, tmp_path):
    out = tmp_path / "anchors.json"
    res = runner.invoke(main, ["anchors", "--env", "dot-collect", "--obs-size",
                               "32", "--grid-size", "6", "--episodes", "4",
                               "--seed", "0", "--out", str(out)])
    assert res.exit_code == 0, res.output
    manifest = json.loads(out.read_text())
    key = "dot-collect/32px/g6/fixed"
    assert key in manifest
    assert manifest[key]["reference_mean"] > manifest[key]["random_mean"]


def test_outdir_env_override(runner, tmp_path, monkeypatch):
    target = tmp_path / "envdir"
    monkeypatch.setenv("DIFFWM_OUT", str(target))
    res, requested = _train(runner, tmp_path, "ignored")
    assert res.exit_code == 0
    assert target.exists() and not requested.exists()
