"""Scikit-learn style wrapper around training and sampling a noise predictor."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .data import LabeledSample
from .sampler import ancestral_sample
from .schedule import build_linear_schedule
from .secmi import AttackConfig, t_error
from .trainer import TrainConfig, train


class DiffusionModel(BaseEstimator):
    """Train a small diffusion model on ``X`` (every row is a member).

    Fitted attributes: ``checkpoint_``, ``model_``, ``schedule_``,
    ``loss_curve_`` and ``n_features_in_``.

    >>> import numpy as np
    >>> X = np.random.default_rng(0).uniform(-1, 1, (8, 2))
    >>> dm = DiffusionModel(n_timesteps=20, epochs=2, batch_size=4).fit(X)
    >>> dm.sample(3).shape
    (3, 2)
    """

    def __init__(self, n_timesteps=100, beta_start=1e-4, beta_end=0.02,
                 hidden_dims=(64, 64), time_embedding_dim=16, coord_embedding_dim=0,
                 epochs=1, batch_size=64, learning_rate=1e-3, weight_decay=0.0,
                 ema_decay=0.999, augmentation="none", jitter_sigma=0.0, random_state=0):
        self.n_timesteps = n_timesteps
        self.beta_start = beta_start
        self.beta_end = beta_end
        self.hidden_dims = hidden_dims
        self.time_embedding_dim = time_embedding_dim
        self.coord_embedding_dim = coord_embedding_dim
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.ema_decay = ema_decay
        self.augmentation = augmentation
        self.jitter_sigma = jitter_sigma
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_array(X)
        self.schedule_ = build_linear_schedule(self.n_timesteps, self.beta_start, self.beta_end)
        config = TrainConfig(epochs=self.epochs, batch_size=min(self.batch_size, len(X)),
                             learning_rate=self.learning_rate,
                             weight_decay=self.weight_decay, ema_decay=self.ema_decay,
                             augmentation=self.augmentation, jitter_sigma=self.jitter_sigma,
                             seed=self.random_state, hidden_dims=self.hidden_dims,
                             time_embedding_dim=self.time_embedding_dim,
                             coord_embedding_dim=self.coord_embedding_dim)
        members = [LabeledSample(i, x, 1) for i, x in enumerate(X)]
        self.checkpoint_ = train(members, self.schedule_, config)
        self.model_ = self.checkpoint_.model
        self.loss_curve_ = [loss for _, loss in self.checkpoint_.loss_trace]
        self.n_features_in_ = X.shape[1]
        return self

    def sample(self, n, seed=0, use_ema=False):
        check_is_fitted(self, "model_")
        model = self.checkpoint_.ema_model() if use_ema else self.model_
        return ancestral_sample(model, self.schedule_, n, seed, self.n_features_in_)

    def t_error(self, X, t_sec=10, stride_k=1, distance="squared_l2"):
        """SecMI t-error of each row; lower suggests membership."""
        check_is_fitted(self, "model_")
        X = check_array(X)
        return np.atleast_1d(t_error(self.model_, self.schedule_, X,
                                     AttackConfig(t_sec, stride_k, distance)))
