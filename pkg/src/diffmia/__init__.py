"""Membership-inference auditing for small diffusion models."""
from .baselines import GANLeaksBB, LossMIA, MonteCarloSet
from .config import RunConfig, load_config
from .data import Dataset, LabeledSample, generate_toy, load_dataset, save_dataset, split
from .estimator import DiffusionModel
from .metrics import AttackReport, aggregate_trials, asr, auc, roc_curve, tpr_at_fpr
from .model import EpsilonMLP
from .schedule import NoiseSchedule, build_linear_schedule, q_sample
from .secmi import AttackConfig, SecMINNs, SecMIStat, TErrorTransformer, t_error
from .trainer import Checkpoint, TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "AttackConfig", "AttackReport", "Checkpoint", "Dataset", "DiffusionModel",
    "EpsilonMLP", "GANLeaksBB", "LabeledSample", "LossMIA", "MonteCarloSet",
    "NoiseSchedule", "RunConfig", "SecMINNs", "SecMIStat", "TErrorTransformer",
    "TrainConfig", "aggregate_trials", "asr", "auc", "build_linear_schedule",
    "generate_toy", "load_config", "load_dataset", "q_sample", "roc_curve",
    "save_dataset", "split", "t_error", "tpr_at_fpr", "train",
]
