"""Run configuration: a TOML document with fixed sections; unknown keys are errors."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .secmi import AttackConfig
from .trainer import TrainConfig

ATTACKS = ("secmi_stat", "secmi_nns", "loss", "ganleaks_bb", "mc_set")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetSection:
    dist_kind: str = "gaussian_mixture"
    n: int = 128
    d: int = 2
    seed: int = 0
    modes: int = 8
    spread: float = 0.05
    noise: float = 0.05
    image_side: int = 8
    conditional: bool = False
    ratio: float = 0.5
    path: str = ""


@dataclass(frozen=True)
class ScheduleSection:
    T: int = 100
    beta_start: float = 1e-4
    beta_end: float = 0.02


@dataclass(frozen=True)
class TrainSection:
    epochs: int = 1
    batch_size: int = 64
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    ema_decay: float = 0.999
    augmentation: str = "none"
    jitter_sigma: float = 0.0
    hidden_dims: tuple = (64, 64)
    time_embedding_dim: int = 16
    coord_embedding_dim: int = 0
    lr_schedule: str = "constant"
    noise_draws: int = 1


@dataclass(frozen=True)
class AttackSection:
    t_sec: int = 10
    stride_k: int = 1
    distance: str = "squared_l2"
    threshold_mode: str = "best_accuracy"
    tau: float | None = None
    attacks: tuple = ("secmi_stat",)
    weights: str = "raw"
    t_sweep: tuple = ()
    loss_t_set: tuple = ()
    synthetic_size: int = 1000
    mc_radius: float | None = None
    nns_train_fraction: float = 0.2


@dataclass(frozen=True)
class EvalSection:
    fpr_levels: tuple = (0.01, 0.001)
    trials: int = 1
    seeds: tuple = (0,)


@dataclass(frozen=True)
class RunConfig:
    dataset: DatasetSection = field(default_factory=DatasetSection)
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    train: TrainSection = field(default_factory=TrainSection)
    attack: AttackSection = field(default_factory=AttackSection)
    eval: EvalSection = field(default_factory=EvalSection)
    output_dir: str = ""

    def trial_seeds(self) -> list[int]:
        return list(self.eval.seeds[:self.eval.trials])

    def train_config(self, seed: int) -> TrainConfig:
        tr = self.train
        return TrainConfig(epochs=tr.epochs, batch_size=tr.batch_size,
                           learning_rate=tr.learning_rate, weight_decay=tr.weight_decay,
                           ema_decay=tr.ema_decay, augmentation=tr.augmentation,
                           jitter_sigma=tr.jitter_sigma, seed=seed,
                           hidden_dims=tr.hidden_dims,
                           time_embedding_dim=tr.time_embedding_dim,
                           coord_embedding_dim=tr.coord_embedding_dim,
                           lr_schedule=tr.lr_schedule, noise_draws=tr.noise_draws)

    def attack_config(self, t_sec: int | None = None) -> AttackConfig:
        a = self.attack
        return AttackConfig(a.t_sec if t_sec is None else t_sec, a.stride_k, a.distance,
                            a.threshold_mode, a.tau)

    def replace(self, **sections) -> "RunConfig":
        """Copy with per-section overrides, e.g. ``replace(train={"epochs": 0})``."""
        changes = {}
        for name, upd in sections.items():
            if isinstance(upd, dict):
                changes[name] = _build(type(getattr(self, name)), upd, name,
                                       base=getattr(self, name))
            else:
                changes[name] = upd
        return dataclasses.replace(self, **changes)


_SECTIONS = {"dataset": DatasetSection, "schedule": ScheduleSection, "train": TrainSection,
             "attack": AttackSection, "eval": EvalSection}


def _build(cls, data: dict, section: str, base=None):
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(names)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")
    values = {}
    for key, val in data.items():
        default = getattr(cls(), key)
        if isinstance(default, tuple):
            if not isinstance(val, (list, tuple)):
                raise ConfigError(f"[{section}] {key} must be a list")
            val = tuple(val)
        values[key] = val
    obj = cls() if base is None else base
    return dataclasses.replace(obj, **values)


def parse_config(data: dict) -> RunConfig:
    unknown = set(data) - set(_SECTIONS) - {"output_dir"}
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(sorted(unknown))}")
    sections = {}
    for name, cls in _SECTIONS.items():
        sub = data.get(name, {})
        if not isinstance(sub, dict):
            raise ConfigError(f"[{name}] must be a table")
        sections[name] = _build(cls, sub, name)
    cfg = RunConfig(**sections, output_dir=str(data.get("output_dir", "")))
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    for a in cfg.attack.attacks:
        if a not in ATTACKS:
            raise ConfigError(f"unknown attack {a!r}; choose from {ATTACKS}")
    if cfg.attack.weights not in ("raw", "ema"):
        raise ConfigError("attack.weights must be 'raw' or 'ema'")
    if cfg.eval.trials < 1:
        raise ConfigError("eval.trials must be at least 1")
    if len(cfg.eval.seeds) < cfg.eval.trials:
        raise ConfigError("eval.seeds must list one seed per trial")
    if cfg.attack.t_sec + cfg.attack.stride_k > cfg.schedule.T:
        raise ConfigError("attack.t_sec + attack.stride_k exceeds schedule.T")
    try:
        cfg.train_config(0)
        cfg.attack_config()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> RunConfig:
    with open(path, "rb") as fh:
        try:
            data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(data)


def reference_config_path() -> Path:
    return Path(__file__).parent / "configs" / "reference.toml"
