"""Command-line interface: train, eval, metrics, verify-ib, anchors.

Exit codes: 0 success, 1 runtime failure, 2 usage/config error. The output
directory may be overridden with the ``DIFFWM_OUT`` environment variable;
there is no other environment coupling besides the kernel-backend switch
(``DIFFWM_BACKEND``).
"""

from __future__ import annotations

import json
import os
import sys
from importlib import resources
from pathlib import Path

import click
import numpy as np

from . import metrics as M
from .config import Config, ConfigError
from .envs import ENV_NAMES, anchor_key, compute_anchors, load_anchor_manifest, \
    write_anchor_manifest
from .iboracle import run_cdj_campaign, run_jepa_campaign
from .trainer import CheckpointError, Trainer


def _outdir(cli_value: str | None, default: str) -> Path:
    root = os.environ.get("DIFFWM_OUT") or cli_value or default
    path = Path(root)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _bundled(name: str):
    return resources.files("diffwm").joinpath(f"data/{name}")


@click.group()
def main():
    """Latent diffusion world model: training, evaluation, and verification."""


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="Flat JSON config file (dotted keys).")
@click.option("--profile", default="desk", show_default=True,
              type=click.Choice(["paper", "desk", "ci"]))
@click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE",
              help="Config override, repeatable.")
@click.option("--seed", type=int, default=None, help="Shortcut for run.seed.")
@click.option("--epochs", type=int, default=None, help="Shortcut for run.num_epochs.")
@click.option("--outdir", default=None, help="Output directory (env DIFFWM_OUT wins).")
def train(config_path, profile, overrides, seed, epochs, outdir):
    """Run the full training loop and write metrics, checkpoint, summary."""
    try:
        ov = Config.parse_cli_overrides(overrides)
        if seed is not None:
            ov["run.seed"] = seed
        if epochs is not None:
            ov["run.num_epochs"] = epochs
        if config_path:
            cfg = Config.from_file(config_path, profile=profile, overrides=ov)
        else:
            cfg = Config(overrides=ov, profile=profile)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        raise SystemExit(2)
    out = _outdir(outdir, f"runs/{cfg['env.name']}-seed{cfg['run.seed']}")
    (out / "config.json").write_text(
        json.dumps(cfg.as_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    try:
        trainer = Trainer(cfg)
        ckpt_every = cfg["run.checkpoint_every"]
        with open(out / "metrics.jsonl", "w", encoding="utf-8") as fh:
            def on_epoch(m):
                for row in m.records():
                    fh.write(json.dumps(row, sort_keys=True) + "\n")
                if ckpt_every and m.epoch % ckpt_every == 0:
                    trainer.save_checkpoint(out / "checkpoint.ckpt")
            history = trainer.run(on_epoch=on_epoch)
        trainer.save_checkpoint(out / "checkpoint.ckpt")
        eval_returns = trainer.evaluate(cfg["run.eval_episodes"])
        last = history[-1] if history else None
        summary = {
            "epochs": trainer.epoch,
            "env_steps_total": trainer.env.total_steps,
            "final_epoch_episode_returns": (list(map(float, last.episode_returns))
                                            if last else []),
            "final_epoch_mean_return": (float(np.mean(last.episode_returns))
                                        if last and last.episode_returns else None),
            "final_losses": {
                "diffusion": last.diffusion_loss[-1] if last and last.diffusion_loss else None,
                "reward_end": last.reward_end_loss[-1] if last and last.reward_end_loss else None,
                "policy": last.policy_loss[-1] if last and last.policy_loss else None,
                "value": last.value_loss[-1] if last and last.value_loss else None,
            },
            "eval_episodes": len(eval_returns),
            "eval_returns": [float(r) for r in eval_returns],
            "eval_return_mean": float(np.mean(eval_returns)) if eval_returns else None,
            "eval_return_std": float(np.std(eval_returns)) if eval_returns else None,
        }
        (out / "summary.json").write_text(
            json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        click.echo(f"run complete: {out / 'summary.json'}")
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        raise SystemExit(2)
    except Exception as exc:
        click.echo(f"runtime failure: {exc}", err=True)
        raise SystemExit(1)


@main.command("eval")
@click.option("--checkpoint", "ckpt", type=click.Path(exists=True), required=True)
@click.option("--episodes", type=int, default=10, show_default=True)
@click.option("--seed", type=int, default=1234, show_default=True)
@click.option("--greedy", is_flag=True, help="Argmax actions instead of sampling.")
@click.option("--outdir", default=None)
def eval_cmd(ckpt, episodes, seed, greedy, outdir):
    """Evaluate a trained checkpoint; emits a score-table for `metrics`."""
    out = _outdir(outdir, "eval")
    try:
        trainer = Trainer.load_checkpoint(ckpt)
    except CheckpointError as exc:
        click.echo(f"checkpoint error: {exc}", err=True)
        raise SystemExit(1)
    try:
        returns = trainer.evaluate(episodes, seed=seed, greedy=greedy)
        name = trainer.cfg["env.name"]
        report = {
            "env": name,
            "episodes": episodes,
            "seed": seed,
            "greedy": greedy,
            "returns": [float(r) for r in returns],
            "mean": float(np.mean(returns)) if returns else None,
            "std": float(np.std(returns)) if returns else None,
        }
        (out / "eval_report.json").write_text(
            json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        if returns:
            anchors = load_anchor_manifest(_bundled("anchors.json"))
            key = anchor_key(name, trainer.cfg["env.obs_size"],
                             trainer.cfg["env.grid_size"],
                             trainer.cfg["env.stochastic_frameskip"])
            if key in anchors:
                entry = anchors[key]
            else:
                entry = compute_anchors(name, episodes=20, seed=0,
                                        **trainer.cfg.env_kwargs())
            row = M.ScoreRow(task=name, random_score=entry["random_mean"],
                             human_score=entry["reference_mean"],
                             scores=tuple(float(r) for r in returns))
            M.write_score_table(M.ScoreTable((row,)), out / "scores.csv")
        click.echo(f"eval written to {out}")
    except Exception as exc:
        click.echo(f"runtime failure: {exc}", err=True)
        raise SystemExit(1)


@main.command("metrics")
@click.argument("table", type=click.Path(), required=False)
@click.option("--benchmark", "benchmark_method", default=None,
              help="Use the bundled benchmark table; value selects the method column.")
@click.option("--method", default=None,
              help="Method column when TABLE is a multi-method benchmark file.")
@click.option("--bootstrap", "n_boot", type=int, default=0,
              help="Bootstrap resamples for confidence intervals.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--plots-dir", type=click.Path(), default=None,
              help="Emit performance-profile and bar-chart data here.")
@click.option("--out", "out_json", type=click.Path(), default=None)
def metrics_cmd(table, benchmark_method, method, n_boot, seed, plots_dir, out_json):
    """Aggregate a score table: mean, IQM, optimality gap, Har-HNS."""
    try:
        if benchmark_method:
            tab = M.load_benchmark_table(_bundled("atari100k_table.csv"),
                                         benchmark_method)
        elif table:
            if method:
                tab = M.load_benchmark_table(table, method)
            else:
                tab = M.load_score_table(table)
        else:
            raise M.ScoreTableParseError("provide TABLE or --benchmark METHOD")
    except (M.ScoreTableParseError, M.DegenerateAnchorError, OSError) as exc:
        click.echo(f"score table error: {exc}", err=True)
        raise SystemExit(2)
    try:
        agg = M.aggregate(tab)
        result = agg.as_dict()
        iqm_label = " (approx: per-task means only)" if agg.iqm_is_approx else ""
        click.echo(f"tasks:                {len(tab.rows)}")
        click.echo(f"mean HNS:             {agg.mean:.4f}")
        click.echo(f"IQM HNS{iqm_label}:   {agg.iqm:.4f}")
        click.echo(f"optimality gap:       {agg.optimality_gap:.4f}")
        click.echo(f"Har-HNS (literal):    {agg.har_hns:.4f}")
        click.echo(f"Har-HNS (offset sub): {agg.har_hns_offset_subtracted:.4f}")
        if n_boot > 0:
            rng = np.random.default_rng(seed)
            for name, stat in (("mean", lambda t: M.aggregate(t).mean),
                               ("iqm", lambda t: M.aggregate(t).iqm)):
                try:
                    lo, hi = M.bootstrap_ci(tab, stat, n_boot, rng)
                    result[f"{name}_ci"] = [lo, hi]
                    click.echo(f"{name} 95% CI:          [{lo:.4f}, {hi:.4f}]")
                except M.MissingSeedDataError:
                    click.echo(f"{name} 95% CI:          unavailable (no seed data)")
        if plots_dir:
            pdir = Path(plots_dir)
            pdir.mkdir(parents=True, exist_ok=True)
            M.write_profile_csv(M.performance_profile(tab.all_run_hns()),
                                pdir / "performance_profile.csv")
            M.write_bar_csv(tab, pdir / "per_task_hns.csv")
        if out_json:
            Path(out_json).write_text(json.dumps(result, indent=2, sort_keys=True) + "\n",
                                      encoding="utf-8")
    except Exception as exc:
        click.echo(f"runtime failure: {exc}", err=True)
        raise SystemExit(1)


@main.command("verify-ib")
@click.option("--model", type=click.Choice(["jepa", "cdj", "both"]), default="both",
              show_default=True)
@click.option("--trials", type=int, default=200, show_default=True)
@click.option("--alphabet-max", type=int, default=4, show_default=True)
@click.option("--chain-steps", type=int, default=3, show_default=True,
              help="Maximum diffusion chain length for the cdj model.")
@click.option("--seed", type=int, default=0, show_default=True)
def verify_ib(model, trials, alphabet_max, chain_steps, seed):
    """Verify the information-bottleneck identities by exact enumeration."""
    rng = np.random.default_rng(seed)
    ok = True
    if model in ("jepa", "both"):
        rep = run_jepa_campaign(trials, rng, alphabet_max=alphabet_max)
        status = "PASS" if rep.passed else "FAIL"
        click.echo(f"[{status}] one-step model: {rep.trials} trials, "
                   f"{rep.failures} failures, worst identity residual "
                   f"{rep.worst_identity_residual:.3e}, worst DPI slack "
                   f"{rep.worst_dpi_slack:.3e}")
        ok &= rep.passed
    if model in ("cdj", "both"):
        trials_cdj = trials if model == "cdj" else max(1, trials // 2)
        rep = run_cdj_campaign(trials_cdj, rng, alphabet_max=min(alphabet_max, 3),
                               chain_max=chain_steps)
        status = "PASS" if rep.passed else "FAIL"
        click.echo(f"[{status}] conditional-diffusion model: {rep.trials} trials, "
                   f"{rep.failures} failures, worst identity residual "
                   f"{rep.worst_identity_residual:.3e}, worst path-split residual "
                   f"{rep.worst_path_residual:.3e}, worst decomposition residual "
                   f"{rep.worst_decomp_residual:.3e}, worst DPI slack "
                   f"{rep.worst_dpi_slack:.3e}, worst bound slack "
                   f"{rep.worst_bound_slack:.3e}")
        ok &= rep.passed
    raise SystemExit(0 if ok else 1)


@main.command("anchors")
@click.option("--env", "env_name", type=click.Choice(list(ENV_NAMES)), required=True)
@click.option("--obs-size", type=int, default=64, show_default=True)
@click.option("--grid-size", type=int, default=8, show_default=True)
@click.option("--episodes", type=int, default=30, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--stochastic", is_flag=True)
@click.option("--out", "out_path", type=click.Path(), default="anchors.json",
              show_default=True)
def anchors_cmd(env_name, obs_size, grid_size, episodes, seed, stochastic, out_path):
    """Compute random/reference anchor scores for a toy environment config."""
    try:
        entry = compute_anchors(env_name, episodes=episodes, seed=seed,
                                obs_size=obs_size, grid_size=grid_size,
                                stochastic=stochastic)
        key = anchor_key(env_name, obs_size, grid_size, stochastic)
        manifest = {}
        if Path(out_path).exists():
            manifest = load_anchor_manifest(out_path)
        manifest[key] = entry
        write_anchor_manifest(manifest, out_path)
        click.echo(f"{key}: random {entry['random_mean']:.2f}, "
                   f"reference {entry['reference_mean']:.2f} -> {out_path}")
    except Exception as exc:
        click.echo(f"runtime failure: {exc}", err=True)
        raise SystemExit(1)


if __name__ == "__main__":
    main()
