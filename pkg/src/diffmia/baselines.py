"""Reference attacks: noise-prediction loss, GAN-Leaks (black box), Monte-Carlo Set.

Orientation: the loss and GAN-Leaks scores are lower-is-member; the
Monte-Carlo Set score is higher-is-member.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist, pdist
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .sampler import ancestral_sample
from .schedule import NoiseSchedule, q_sample

ORIENTATION = {
    "loss": "low_is_member",
    "ganleaks_bb": "low_is_member",
    "mc_set": "high_is_member",
}
_METRIC = {"squared_l2": "sqeuclidean", "l1": "cityblock"}


def _metric(distance: str) -> str:
    try:
        return _METRIC[distance]
    except KeyError:
        raise ValueError(f"unknown distance {distance!r}") from None


@dataclass(frozen=True)
class SyntheticSet:
    samples: np.ndarray
    generator_seed: int

    def __post_init__(self):
        if len(self.samples) == 0:
            raise ValueError("synthetic set is empty")


def generate_synthetic(model, schedule: NoiseSchedule, n: int, seed: int,
                       cond=None) -> SyntheticSet:
    samples = ancestral_sample(model, schedule, n, seed, model.data_dim, cond)
    return SyntheticSet(samples, seed)


def loss_mia_score(model, schedule: NoiseSchedule, x0, t_set, seed: int = 0,
                   sample_ids=None, cond=None):
    """Mean noise-prediction error over ``t_set`` with per-sample seeded noise.

    The noise for sample ``i`` comes from a generator seeded by
    ``(seed, sample_id)``, so a sample's score does not depend on its batch.
    """
    t_set = [int(t) for t in t_set]
    if not t_set:
        raise ValueError("t_set must be nonempty")
    x0 = np.asarray(x0, dtype=np.float64)
    single = x0.ndim == 1
    x0 = np.atleast_2d(x0)
    n, d = x0.shape
    ids = np.arange(n) if sample_ids is None else np.asarray(sample_ids)
    eps = np.stack([np.random.default_rng([seed, int(i)]).standard_normal((len(t_set), d))
                    for i in ids])
    total = np.zeros(n)
    for j, t in enumerate(t_set):
        xt = q_sample(schedule, x0, t, eps[:, j])
        total += np.sum((model(xt, t, cond) - eps[:, j]) ** 2, axis=-1)
    score = total / len(t_set)
    return float(score[0]) if single else score


def ganleaks_bb_score(x0, synth: SyntheticSet, distance: str = "squared_l2"):
    """Distance to the nearest synthetic sample."""
    x0 = np.asarray(x0, dtype=np.float64)
    single = x0.ndim == 1
    d = cdist(np.atleast_2d(x0), synth.samples, metric=_metric(distance))
    score = d.min(axis=1)
    return float(score[0]) if single else score


def mc_set_score(x0, synth: SyntheticSet, radius: float, distance: str = "squared_l2"):
    """Fraction of synthetic samples within ``radius`` (in the chosen distance)."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    x0 = np.asarray(x0, dtype=np.float64)
    single = x0.ndim == 1
    d = cdist(np.atleast_2d(x0), synth.samples, metric=_metric(distance))
    score = np.mean(d <= radius, axis=1)
    return float(score[0]) if single else score


def median_pairwise_radius(synth: SyntheticSet, distance: str = "squared_l2") -> float:
    """Median pairwise distance within the synthetic set."""
    if len(synth.samples) < 2:
        raise ValueError("need at least two synthetic samples")
    return float(np.median(pdist(synth.samples, metric=_metric(distance))))


class LossMIA(TransformerMixin, BaseEstimator):
    def __init__(self, model=None, schedule=None, t_set=(10,), seed=0):
        self.model = model
        self.schedule = schedule
        self.t_set = t_set
        self.seed = seed

    def fit(self, X, y=None):
        self.n_features_in_ = check_array(X).shape[1]
        return self

    def transform(self, X, sample_ids=None):
        check_is_fitted(self, "n_features_in_")
        s = loss_mia_score(self.model, self.schedule, check_array(X), self.t_set,
                           self.seed, sample_ids)
        return s[:, None]


class GANLeaksBB(TransformerMixin, BaseEstimator):
    """Nearest-synthetic-sample distance; ``fit`` stores the synthetic set."""

    def __init__(self, distance="squared_l2"):
        self.distance = distance

    def fit(self, synthetic, y=None):
        self.synthetic_ = SyntheticSet(check_array(synthetic), -1)
        self.n_features_in_ = self.synthetic_.samples.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "synthetic_")
        return ganleaks_bb_score(check_array(X), self.synthetic_, self.distance)[:, None]


class MonteCarloSet(TransformerMixin, BaseEstimator):
    """Neighbor-count score; ``radius=None`` uses the median pairwise distance."""

    def __init__(self, radius=None, distance="squared_l2"):
        self.radius = radius
        self.distance = distance

    def fit(self, synthetic, y=None):
        self.synthetic_ = SyntheticSet(check_array(synthetic), -1)
        self.radius_ = (median_pairwise_radius(self.synthetic_, self.distance)
                        if self.radius is None else float(self.radius))
        self.n_features_in_ = self.synthetic_.samples.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "synthetic_")
        return mc_set_score(check_array(X), self.synthetic_, self.radius_,
                            self.distance)[:, None]
