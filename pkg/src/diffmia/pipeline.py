"""End-to-end audit orchestration shared by the CLI and the acceptance suite.

Run-directory layout::

    run_dir/
      checkpoints/seed{s}.ckpt, seed{s}_loss.csv, seed{s}_data.csv
      scores/{attack}_seed{s}_t{t}.csv
      metrics/{attack}_seed{s}_t{t}.json
      roc/{attack}_seed{s}_t{t}.csv
      sweep/secmi_stat_seed{s}.csv
      summary.json, plots/{attack}_roc.csv
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .baselines import (ORIENTATION, ganleaks_bb_score, generate_synthetic, loss_mia_score,
                        mc_set_score, median_pairwise_radius)
from .config import RunConfig
from .data import Dataset, generate_toy, load_dataset, save_dataset, split
from .metrics import AttackReport, aggregate_trials
from .schedule import build_linear_schedule
from .secmi import compute_t_errors, secmi_nns, secmi_stat, t_sweep, train_attack_classifier
from .trainer import Checkpoint, train, write_loss_trace

logger = logging.getLogger(__name__)

SUBDIRS = ("checkpoints", "scores", "metrics", "roc")


@dataclass
class TrialArtifacts:
    seed: int
    dataset: Dataset
    checkpoint: Checkpoint


def schedule_for(cfg: RunConfig):
    s = cfg.schedule
    return build_linear_schedule(s.T, s.beta_start, s.beta_end)


def prepare_dataset(cfg: RunConfig, seed: int) -> Dataset:
    """Load the configured dataset file or generate one, then split with ``seed``.

    A file that already carries a split is used as is.
    """
    ds = cfg.dataset
    if ds.path:
        path = Path(ds.path)
        if not path.is_file():
            raise FileNotFoundError(f"dataset file not found: {path}")
        data = load_dataset(path)
        if data.split is not None:
            return data
    else:
        data = generate_toy(ds.dist_kind, ds.n, ds.d, ds.seed, modes=ds.modes,
                            spread=ds.spread, noise=ds.noise, image_side=ds.image_side,
                            conditional=ds.conditional)
    return split(data, ds.ratio, seed)


def paths(run_dir, attack: str, seed: int, t: int | None, weights: str = "raw") -> dict:
    run_dir = Path(run_dir)
    tag = attack if weights == "raw" else f"{attack}_{weights}"
    stem = f"{tag}_seed{seed}_t{t}"
    return {"scores": run_dir / "scores" / f"{stem}.csv",
            "metrics": run_dir / "metrics" / f"{stem}.json",
            "roc": run_dir / "roc" / f"{stem}.csv"}


def checkpoint_path(run_dir, seed: int) -> Path:
    return Path(run_dir) / "checkpoints" / f"seed{seed}.ckpt"


def dataset_path(run_dir, seed: int) -> Path:
    return Path(run_dir) / "checkpoints" / f"seed{seed}_data.csv"


def make_dirs(run_dir) -> None:
    for sub in SUBDIRS:
        (Path(run_dir) / sub).mkdir(parents=True, exist_ok=True)


def train_trial(cfg: RunConfig, seed: int, run_dir=None) -> TrialArtifacts:
    """Split with ``seed``, train on the members, optionally persist everything."""
    dataset = prepare_dataset(cfg, seed)
    ckpt = train(dataset.members(), schedule_for(cfg), cfg.train_config(seed),
                 image_shape=dataset.image_shape)
    holdout = {s.sample_id for s in dataset.holdouts()}
    if ckpt.ids_seen & holdout:
        raise RuntimeError("trainer consumed hold-out samples")
    if run_dir is not None:
        make_dirs(run_dir)
        ckpt.save(checkpoint_path(run_dir, seed))
        write_loss_trace(Path(run_dir) / "checkpoints" / f"seed{seed}_loss.csv",
                         ckpt.loss_trace)
        save_dataset(dataset, dataset_path(run_dir, seed))
    return TrialArtifacts(seed, dataset, ckpt)


def load_trial(cfg: RunConfig, run_dir, seed: int | None = None,
               checkpoint=None) -> TrialArtifacts:
    ckpt_file = Path(checkpoint) if checkpoint else checkpoint_path(run_dir, seed)
    ckpt = Checkpoint.load(ckpt_file)
    if ckpt.schedule != schedule_for(cfg):
        raise ValueError(f"{ckpt_file}: checkpoint schedule does not match the config")
    seed = ckpt.train_config.seed if seed is None else seed
    data_file = dataset_path(run_dir, seed)
    dataset = load_dataset(data_file) if data_file.is_file() else prepare_dataset(cfg, seed)
    return TrialArtifacts(seed, dataset, ckpt)


def _model(cfg: RunConfig, ckpt: Checkpoint):
    return ckpt.ema_model() if cfg.attack.weights == "ema" else ckpt.model


def run_attacks(cfg: RunConfig, trial: TrialArtifacts) -> list[AttackReport]:
    """Every enabled attack against one trained trial, in configured order."""
    acfg = cfg.attack_config()
    schedule = schedule_for(cfg)
    acfg.validate(schedule)
    model = _model(cfg, trial.checkpoint)
    ds, seed = trial.dataset, trial.seed
    X, ids, labels, cond = ds.X, ds.ids, ds.labels, ds.conditions
    levels = tuple(cfg.eval.fpr_levels)
    synth = None
    reports = []
    for name in cfg.attack.attacks:
        if name == "secmi_stat":
            table = compute_t_errors(model, schedule, X, acfg, ids, labels, cond)
            rep = secmi_stat(table, config=acfg, seed=seed, fpr_levels=levels)
        elif name == "secmi_nns":
            table = compute_t_errors(model, schedule, X, acfg, ids, labels, cond,
                                     keep_vectors=True)
            clf = train_attack_classifier(table.vectors, labels,
                                          cfg.attack.nns_train_fraction, ids, seed)
            keep = np.isin(ids, clf.eval_ids)
            rep = secmi_nns(clf, table.vectors[keep], labels[keep], ids[keep], seed)
            rep = AttackReport.from_scores("secmi_nns", "high_is_member", rep.sample_ids,
                                           rep.scores, rep.labels, levels, seed=seed,
                                           t=acfg.t_sec)
        elif name == "loss":
            t_set = cfg.attack.loss_t_set or (acfg.t_sec,)
            s = loss_mia_score(model, schedule, X, t_set, seed, ids, cond)
            rep = AttackReport.from_scores("loss", ORIENTATION["loss"], ids, s, labels,
                                           levels, seed=seed,
                                           t=t_set[0] if len(t_set) == 1 else None)
        else:
            if synth is None:
                size = cfg.attack.synthetic_size
                # conditional models cycle through the dataset's conditions
                synth_cond = None if cond is None else np.resize(cond, (size, cond.shape[1]))
                synth = generate_synthetic(model, schedule, size, seed, synth_cond)
            if name == "ganleaks_bb":
                s = ganleaks_bb_score(X, synth, acfg.distance)
            else:
                radius = cfg.attack.mc_radius or median_pairwise_radius(synth, acfg.distance)
                s = mc_set_score(X, synth, radius, acfg.distance)
            rep = AttackReport.from_scores(name, ORIENTATION[name], ids, s, labels, levels,
                                           seed=seed)
        reports.append(rep)
    return reports


def write_scores_csv(path, report: AttackReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", "attack", "t", "score", "label"])
        t = "" if report.t is None else report.t
        for i, s, lab in zip(report.sample_ids, report.scores, report.labels):
            w.writerow([int(i), report.attack_name, t, repr(float(s)), int(lab)])


def write_reports(cfg: RunConfig, run_dir, reports) -> list[Path]:
    make_dirs(run_dir)
    written = []
    for rep in reports:
        p = paths(run_dir, rep.attack_name, rep.seed, cfg.attack.t_sec, cfg.attack.weights)
        write_scores_csv(p["scores"], rep)
        rep.write_metrics_json(p["metrics"])
        rep.write_roc_csv(p["roc"])
        written += [p["scores"], p["metrics"], p["roc"]]
    return written


def run_sweep(cfg: RunConfig, trial: TrialArtifacts, t_list=None, run_dir=None) -> dict:
    """SecMI_stat at each timestep in ``t_list``; writes one ``t,asr,auc`` row per t."""
    t_list = list(t_list or cfg.attack.t_sweep or [cfg.attack.t_sec])
    schedule = schedule_for(cfg)
    for t in t_list:
        cfg.attack_config(int(t)).validate(schedule)
    ds = trial.dataset
    out = t_sweep(_model(cfg, trial.checkpoint), schedule, ds.X, ds.labels, t_list,
                  cfg.attack_config(), ds.conditions)
    if run_dir is not None:
        d = Path(run_dir) / "sweep"
        d.mkdir(parents=True, exist_ok=True)
        tag = "secmi_stat" if cfg.attack.weights == "raw" else "secmi_stat_ema"
        with open(d / f"{tag}_seed{trial.seed}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "asr", "auc"])
            for t, (a, u) in out.items():
                w.writerow([t, repr(a), repr(u)])
    return out


def _group_key(path: Path) -> str:
    """``secmi_stat_ema_seed3_t10`` -> ``secmi_stat_ema_t10``: one group per attack, weights, t."""
    tag, _, rest = path.stem.partition("_seed")
    return f"{tag}_{rest.partition('_')[2]}"


def summarize(run_dir) -> dict:
    """Aggregate every metrics JSON in ``run_dir`` and write plot-ready ROC CSVs."""
    run_dir = Path(run_dir)
    files = sorted((run_dir / "metrics").glob("*.json")) if (run_dir / "metrics").is_dir() else []
    if not files:
        raise FileNotFoundError(f"no completed trials under {run_dir}")
    groups: dict = {}
    for f in files:
        m = json.loads(f.read_text())
        groups.setdefault(_group_key(f), []).append((f, m))
    summary = {}
    plots = run_dir / "plots"
    plots.mkdir(exist_ok=True)
    for key in sorted(groups):
        rows = sorted(groups[key], key=lambda fm: (fm[1]["seed"] is None, fm[1]["seed"]))
        agg = aggregate_trials([m for _, m in rows])
        agg["seeds"] = [m["seed"] for _, m in rows]
        summary[key] = agg
        with open(plots / f"{key}_roc.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["seed", "fpr", "tpr", "log10_fpr"])
            for f, m in rows:
                with open(run_dir / "roc" / f.with_suffix(".csv").name, newline="") as rf:
                    for r in list(csv.reader(rf))[1:]:
                        w.writerow([m["seed"], *r])
    with open(run_dir / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary


__all__ = ["TrialArtifacts", "prepare_dataset", "train_trial", "load_trial", "run_attacks",
           "write_reports", "write_scores_csv", "run_sweep", "summarize", "paths",
           "checkpoint_path", "dataset_path", "schedule_for"]
