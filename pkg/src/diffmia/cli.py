"""Command-line entry point: ``diffmia train|attack|sweep|report``."""
from __future__ import annotations

import dataclasses
import logging
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import click
from sklearn.exceptions import ConvergenceWarning

from . import pipeline
from .config import ConfigError, RunConfig, load_config
from .trainer import TrainingDiverged

OUTPUT_ROOT_ENV = "DIFFMIA_OUTPUT_ROOT"
_FAILURES = (ConfigError, FileNotFoundError, ValueError, OSError, TrainingDiverged)


def resolve_config(path, seed_override=None, trials=None) -> RunConfig:
    cfg = load_config(path)
    n = cfg.eval.trials if trials is None else trials
    if n < 1:
        raise ConfigError("--trials must be at least 1")
    seeds = list(cfg.eval.seeds)
    if seed_override is not None:
        seeds = [seed_override + i for i in range(n)]
    elif len(seeds) < n:
        seeds += [seeds[-1] + i for i in range(1, n - len(seeds) + 1)]
    return dataclasses.replace(cfg, eval=dataclasses.replace(cfg.eval, trials=n,
                                                             seeds=tuple(seeds)))


def resolve_out(cfg: RunConfig, config_path, out) -> Path:
    if out:
        return Path(out)
    root = Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))
    return root / (cfg.output_dir or Path(config_path).stem)


def _train_one(args):
    cfg, seed, run_dir = args
    pipeline.train_trial(cfg, seed, run_dir)
    return seed


def _attack_one(args):
    cfg, seed, run_dir, checkpoint = args
    trial = pipeline.load_trial(cfg, run_dir, seed, checkpoint)
    reports = pipeline.run_attacks(cfg, trial)
    pipeline.write_reports(cfg, run_dir, reports)
    return [(r.attack_name, r.seed, r.asr, r.auc) for r in reports]


def _map(fn, jobs, items):
    if jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


def _guard(fn):
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except _FAILURES as exc:
            raise click.ClickException(str(exc)) from exc
    wrapper.__name__, wrapper.__doc__ = fn.__name__, fn.__doc__
    return wrapper


config_opt = click.option("--config", "config_path", required=True,
                          type=click.Path(dir_okay=False), help="TOML run configuration.")
out_opt = click.option("--out", default=None, type=click.Path(file_okay=False),
                       help=f"Run directory (default: ${OUTPUT_ROOT_ENV}/<name>).")
seed_opt = click.option("--seed-override", type=int, default=None,
                        help="Use seeds S, S+1, ... instead of the configured list.")
trials_opt = click.option("--trials", type=int, default=None, help="Number of trials.")
jobs_opt = click.option("--jobs", type=int, default=1, show_default=True,
                        help="Run trials concurrently in this many processes.")


@click.group()
@click.option("-v", "--verbose", is_flag=True)
def main(verbose):
    """Membership-inference audits of diffusion models."""
    logging.basicConfig(level=logging.DEBUG if verbose else logging.WARNING)
    if not verbose:
        warnings.filterwarnings("ignore", category=ConvergenceWarning)


@main.command()
@config_opt
@out_opt
@seed_opt
@trials_opt
@jobs_opt
@_guard
def train(config_path, out, seed_override, trials, jobs):
    """Train one checkpoint per trial."""
    cfg = resolve_config(config_path, seed_override, trials)
    run_dir = resolve_out(cfg, config_path, out)
    seeds = cfg.trial_seeds()
    _map(_train_one, jobs, [(cfg, s, run_dir) for s in seeds])
    click.echo(f"trained {len(seeds)} trial(s) into {run_dir / 'checkpoints'}")


@main.command()
@config_opt
@click.option("--checkpoint", default=None, type=click.Path(dir_okay=False),
              help="Attack this checkpoint only (its training seed names the trial).")
@out_opt
@seed_opt
@trials_opt
@jobs_opt
@_guard
def attack(config_path, checkpoint, out, seed_override, trials, jobs):
    """Score every enabled attack; write scores, metrics and ROC files."""
    cfg = resolve_config(config_path, seed_override, trials)
    run_dir = resolve_out(cfg, config_path, out)
    if checkpoint:
        items = [(cfg, None, run_dir, checkpoint)]
    else:
        items = [(cfg, s, run_dir, None) for s in cfg.trial_seeds()]
    for rows in _map(_attack_one, jobs, items):
        for name, seed, a, u in rows:
            click.echo(f"{name:12s} seed={seed} asr={a:.4f} auc={u:.4f}")


@main.command()
@config_opt
@click.option("--checkpoint", default=None, type=click.Path(dir_okay=False))
@out_opt
@seed_opt
@trials_opt
@click.option("--t-list", default=None, help="Comma-separated timesteps (default: config).")
@_guard
def sweep(config_path, checkpoint, out, seed_override, trials, t_list):
    """SecMI_stat across timesteps; one (t, asr, auc) row per t."""
    cfg = resolve_config(config_path, seed_override, trials)
    run_dir = resolve_out(cfg, config_path, out)
    ts = [int(t) for t in t_list.split(",")] if t_list else None
    seeds = [None] if checkpoint else cfg.trial_seeds()
    for seed in seeds:
        trial = pipeline.load_trial(cfg, run_dir, seed, checkpoint)
        for t, (a, u) in pipeline.run_sweep(cfg, trial, ts, run_dir).items():
            click.echo(f"seed={trial.seed} t={t} asr={a:.4f} auc={u:.4f}")


@main.command()
@click.argument("run_dir", type=click.Path(file_okay=False))
@_guard
def report(run_dir):
    """Aggregate all trials in RUN_DIR into summary.json and plot CSVs."""
    summary = pipeline.summarize(run_dir)
    for key, agg in summary.items():
        click.echo(f"{key:20s} trials={agg['trials']} auc={agg['auc']['median']:.4f} "
                   f"asr={agg['asr']['median']:.4f}")


if __name__ == "__main__":
    main()
