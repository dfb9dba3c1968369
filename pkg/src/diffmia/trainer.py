"""Noise-prediction training on the member set, with EMA and checkpoints."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .model import EmaState, EpsilonMLP, ema_update, loss_and_gradient
from .schedule import NoiseSchedule

logger = logging.getLogger(__name__)

AUGMENTATIONS = ("none", "jitter", "sign_flip", "horizontal_flip")
LR_SCHEDULES = ("constant", "cosine")
DIVERGENCE_LIMIT = 1e6
CHECKPOINT_VERSION = 1


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1
    batch_size: int = 64
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    ema_decay: float = 0.999
    augmentation: str = "none"
    jitter_sigma: float = 0.0
    seed: int = 0
    hidden_dims: tuple = (64, 64)
    time_embedding_dim: int = 16
    coord_embedding_dim: int = 0
    lr_schedule: str = "constant"
    noise_draws: int = 1

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ValueError("ema_decay must lie in [0, 1)")
        if self.augmentation not in AUGMENTATIONS:
            raise ValueError(f"unknown augmentation {self.augmentation!r}")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ValueError(f"lr_schedule must be one of {LR_SCHEDULES}")
        if self.noise_draws < 1:
            raise ValueError("noise_draws must be positive")
        if self.jitter_sigma < 0:
            raise ValueError("jitter_sigma must be nonnegative")
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_dims"] = list(self.hidden_dims)
        return d


class AdamW:
    """Adam with decoupled weight decay."""

    def __init__(self, n_params: int, lr: float, weight_decay: float = 0.0,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.weight_decay = lr, weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.step_count = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.step_count += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1 ** self.step_count)
        v_hat = self.v / (1 - self.beta2 ** self.step_count)
        params = params * (1.0 - self.lr * self.weight_decay)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def apply_augmentation(sample, kind: str, rng, *, sigma: float = 0.0,
                       image_shape=None, force: bool | None = None) -> np.ndarray:
    """Toy augmentations applied per training draw.

    ``sign_flip`` and ``horizontal_flip`` fire with probability 1/2; ``force``
    overrides the coin for testing.
    """
    x = np.asarray(sample, dtype=np.float64)
    if kind == "none":
        return x.copy()
    if kind == "jitter":
        if sigma == 0:
            return x.copy()
        return x + sigma * rng.standard_normal(x.shape)
    if kind in ("sign_flip", "horizontal_flip"):
        if kind == "horizontal_flip" and image_shape is None:
            raise ValueError("horizontal_flip needs image-shaped data")
        flip = bool(rng.integers(2)) if force is None else force
        if not flip:
            return x.copy()
        if kind == "sign_flip":
            return -x
        return x.reshape(image_shape)[:, ::-1].reshape(x.shape).copy()
    raise ValueError(f"unknown augmentation {kind!r}")


@dataclass
class Checkpoint:
    model: EpsilonMLP
    ema: EmaState
    schedule: NoiseSchedule
    train_config: TrainConfig
    step_count: int = 0
    loss_trace: list = field(default_factory=list)
    rows_seen: int = 0
    ids_seen: frozenset = frozenset()

    def ema_model(self) -> EpsilonMLP:
        return self.model.with_params(self.ema.shadow_params)

    def save(self, path) -> None:
        header = {
            "version": CHECKPOINT_VERSION,
            "model": self.model.header(),
            "ema_decay": self.ema.decay,
            "schedule": self.schedule.describe(),
            "train_config": self.train_config.to_dict(),
            "step_count": self.step_count,
            "rows_seen": self.rows_seen,
        }
        payload = np.concatenate([self.model.params, self.ema.shadow_params]).astype("<f8")
        Path(path).write_bytes(json.dumps(header, sort_keys=True).encode() + b"\n"
                               + payload.tobytes())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        blob = Path(path).read_bytes()
        head, sep, payload = blob.partition(b"\n")
        try:
            header = json.loads(head)
        except ValueError as exc:
            raise ValueError(f"{path}: unreadable checkpoint header") from exc
        if not sep or header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported or corrupt checkpoint")
        n = header["model"]["param_count"]
        if len(payload) != 16 * n:
            raise ValueError(f"{path}: parameter payload has wrong length")
        flat = np.frombuffer(payload, dtype="<f8").astype(np.float64)
        model = EpsilonMLP.from_header(header["model"], flat[:n])
        cfg = dict(header["train_config"])
        return cls(model=model, ema=EmaState(header["ema_decay"], flat[n:].copy()),
                   schedule=NoiseSchedule.from_description(header["schedule"]),
                   train_config=TrainConfig(**cfg), step_count=header["step_count"],
                   rows_seen=header["rows_seen"])


def write_loss_trace(path, loss_trace) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "mean_loss"])
        for epoch, loss in loss_trace:
            w.writerow([epoch, repr(float(loss))])


def train(member_data, schedule: NoiseSchedule, config: TrainConfig, *,
          image_shape=None, model: EpsilonMLP | None = None) -> Checkpoint:
    """Fit the noise predictor on member samples only.

    ``member_data`` is a sequence of :class:`diffmia.data.LabeledSample` that
    must all carry ``membership == 1``. Each epoch shuffles the members and
    drops the final partial batch.
    """
    member_data = list(member_data)
    if not member_data:
        raise ValueError("no member samples to train on")
    if any(s.membership != 1 for s in member_data):
        raise ValueError("train() only accepts samples labeled as members")
    if config.batch_size > len(member_data):
        raise ValueError("batch_size exceeds the member-set size")
    X = np.stack([s.x0 for s in member_data])
    ids = np.array([s.sample_id for s in member_data])
    conds = None
    if member_data[0].condition is not None:
        conds = np.stack([s.condition for s in member_data])
    n, d = X.shape
    if model is None:
        model = EpsilonMLP(d, config.hidden_dims, schedule.T, config.time_embedding_dim,
                           0 if conds is None else conds.shape[1], seed=config.seed,
                           coord_embedding_dim=config.coord_embedding_dim)
    elif model.num_timesteps != schedule.T:
        raise ValueError("model and schedule disagree on T")
    rng = np.random.default_rng([config.seed, 1])
    opt = AdamW(model.param_count, config.learning_rate, config.weight_decay)
    ema = EmaState(config.ema_decay, model.params.copy())
    params = model.params.copy()
    trace = []
    rows_seen = 0
    ids_seen: set = set()
    n_batches = n // config.batch_size
    total_steps = config.epochs * n_batches
    for epoch in range(1, config.epochs + 1):
        perm = rng.permutation(n)
        losses = []
        for b in range(n_batches):
            idx = perm[b * config.batch_size:(b + 1) * config.batch_size]
            if config.augmentation == "none":
                x0 = X[idx]
            else:
                x0 = np.stack([apply_augmentation(X[i], config.augmentation, rng,
                                                  sigma=config.jitter_sigma,
                                                  image_shape=image_shape) for i in idx])
            cond = None if conds is None else conds[idx]
            if config.noise_draws > 1:
                x0 = np.tile(x0, (config.noise_draws, 1))
                cond = None if cond is None else np.tile(cond, (config.noise_draws, 1))
            t = rng.integers(1, schedule.T + 1, size=len(x0))
            eps = rng.standard_normal(x0.shape)
            loss, grad = loss_and_gradient(model, schedule, x0, t, eps, cond, params=params)
            if not np.isfinite(loss) or loss > DIVERGENCE_LIMIT:
                raise TrainingDiverged(f"loss {loss} at epoch {epoch}")
            if config.lr_schedule == "cosine":
                opt.lr = config.learning_rate * 0.5 * (
                    1.0 + math.cos(math.pi * opt.step_count / total_steps))
            params = opt.step(params, grad)
            ema = ema_update(ema, params)
            rows_seen += len(idx)
            ids_seen.update(int(i) for i in ids[idx])
            losses.append(loss)
        trace.append((epoch, float(np.mean(losses))))
    model.set_params(params)
    logger.debug("trained %d epochs, final loss %s", config.epochs,
                 trace[-1][1] if trace else None)
    return Checkpoint(model=model, ema=ema, schedule=schedule, train_config=config,
                      step_count=opt.step_count, loss_trace=trace, rows_seen=rows_seen,
                      ids_seen=frozenset(ids_seen))
