"""Step-wise error comparison membership inference (SecMI).

A sample is deterministically noised from ``t = 0`` to ``t_sec`` with the
model's own noise estimates, pushed one more stride forward and then one
stride back. Members tend to come back closer to where they started; the
gap is the t-error.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.neural_network import MLPClassifier
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import FunctionTransformer, StandardScaler
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .metrics import DEFAULT_FPR_LEVELS, AttackReport, best_threshold
from .sampler import deterministic_reverse, phi_step, psi_step
from .schedule import NoiseSchedule, q_sample

DISTANCES = ("squared_l2", "l1")


@dataclass(frozen=True)
class AttackConfig:
    t_sec: int = 10
    stride_k: int = 1
    distance: str = "squared_l2"
    threshold_mode: str = "best_accuracy"
    tau: float | None = None

    def __post_init__(self):
        if self.t_sec < 1 or self.stride_k < 1:
            raise ValueError("t_sec and stride_k must be positive")
        if self.distance not in DISTANCES:
            raise ValueError(f"distance must be one of {DISTANCES}")
        if self.threshold_mode not in ("best_accuracy", "fixed"):
            raise ValueError("threshold_mode must be 'best_accuracy' or 'fixed'")
        if self.threshold_mode == "fixed" and self.tau is None:
            raise ValueError("fixed threshold mode needs tau")

    def validate(self, schedule: NoiseSchedule) -> None:
        if self.t_sec + self.stride_k > schedule.T:
            raise ValueError(f"t_sec + stride_k = {self.t_sec + self.stride_k} exceeds "
                             f"T = {schedule.T}")


def distance(err, kind: str = "squared_l2") -> np.ndarray:
    """Row-wise distance of an error vector (or batch) from zero."""
    err = np.asarray(err, dtype=np.float64)
    if kind == "squared_l2":
        return np.sum(err ** 2, axis=-1)
    if kind == "l1":
        return np.sum(np.abs(err), axis=-1)
    raise ValueError(f"unknown distance {kind!r}")


def reconstruction_error(model, schedule: NoiseSchedule, x0, config: AttackConfig,
                         cond=None) -> np.ndarray:
    """Signed error ``psi(phi(x_t)) - x_t`` at ``t_sec`` for a batch ``(n, d)``.

    Uses ``ceil(t_sec / stride_k) + 2`` model queries.
    """
    config.validate(schedule)
    t, k = config.t_sec, config.stride_k
    with np.errstate(all="raise"):
        try:
            x_t = deterministic_reverse(model, schedule, x0, 0, t, k, cond)
            x_up = phi_step(model, schedule, x_t, t, cond, t_next=t + k)
            x_back = psi_step(model, schedule, x_up, t + k, cond, t_prev=t)
        except FloatingPointError as exc:
            raise FloatingPointError(f"t-error computation overflowed at t_sec={t}, "
                                     f"stride={k}: {exc}") from exc
    err = x_back - x_t
    if not np.all(np.isfinite(err)):
        raise FloatingPointError(f"non-finite reconstruction at t_sec={t}")
    return err


def t_error(model, schedule: NoiseSchedule, x0, config: AttackConfig, cond=None):
    """t-error of one sample (returns a float) or a batch (returns an array)."""
    x0 = np.asarray(x0, dtype=np.float64)
    err = reconstruction_error(model, schedule, np.atleast_2d(x0), config, cond)
    scores = distance(err, config.distance)
    return float(scores[0]) if x0.ndim == 1 else scores


def delta_diagnostic(model, schedule: NoiseSchedule, x0, eps, t: int,
                     stride: int = 1, cond=None):
    """Gap between the stochastic step loss and the t-error proxy.

    ``||eps_theta(x_t, t) - eps||^2 - ||sqrt(1 - abar_t) (eps_theta(x~_t, t)
    - eps_theta(phi(x~_t, t), t + stride))||^2`` with ``x_t = q_sample(x0, t,
    eps)`` and ``x~_t`` the deterministic reverse of ``x0`` to ``t``.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    single = x0.ndim == 1
    x0 = np.atleast_2d(x0)
    eps = np.atleast_2d(np.asarray(eps, dtype=np.float64))
    x_t = q_sample(schedule, x0, t, eps)
    loss_term = np.sum((model(x_t, t, cond) - eps) ** 2, axis=-1)
    x_tilde = deterministic_reverse(model, schedule, x0, 0, t, stride, cond)
    e_here = model(x_tilde, t, cond)
    x_next = phi_step(model, schedule, x_tilde, t, cond, t_next=t + stride)
    e_next = model(x_next, t + stride, cond)
    proxy = np.sum((math.sqrt(1.0 - schedule.alpha_bar(t)) * (e_here - e_next)) ** 2,
                   axis=-1)
    delta = loss_term - proxy
    return float(delta[0]) if single else delta


@dataclass
class TErrorTable:
    """Per-sample t-errors, optionally with the absolute error vectors."""

    sample_ids: np.ndarray
    t: np.ndarray
    scores: np.ndarray
    labels: np.ndarray | None = None
    vectors: np.ndarray | None = None
    distance: str = "squared_l2"

    @property
    def entries(self) -> dict:
        return {(int(i), int(t)): float(s)
                for i, t, s in zip(self.sample_ids, self.t, self.scores)}

    def at(self, t: int) -> "TErrorTable":
        mask = self.t == t
        return TErrorTable(self.sample_ids[mask], self.t[mask], self.scores[mask],
                           None if self.labels is None else self.labels[mask],
                           None if self.vectors is None else self.vectors[mask],
                           self.distance)

    def merge(self, other: "TErrorTable") -> "TErrorTable":
        """Union of two tables, ordered by ``(t, sample_id)`` regardless of argument order."""
        if self.distance != other.distance:
            raise ValueError("cannot merge tables computed with different distances")
        have = set(self.entries)
        clash = have & set(other.entries)
        if any(self.entries[k] != other.entries[k] for k in clash):
            raise ValueError("conflicting scores for the same (sample_id, t)")

        def cat(a, b):
            if a is None or b is None:
                return None
            return np.concatenate([a, b])

        keep = np.array([(int(i), int(t)) not in have
                         for i, t in zip(other.sample_ids, other.t)], dtype=bool)
        ids = np.concatenate([self.sample_ids, other.sample_ids[keep]])
        ts = np.concatenate([self.t, other.t[keep]])
        order = np.lexsort((ids, ts))
        labels = cat(self.labels, None if other.labels is None else other.labels[keep])
        vecs = cat(self.vectors, None if other.vectors is None else other.vectors[keep])
        return TErrorTable(ids[order], ts[order],
                           np.concatenate([self.scores, other.scores[keep]])[order],
                           None if labels is None else labels[order],
                           None if vecs is None else vecs[order], self.distance)

    def score_rows(self, attack: str = "secmi_stat"):
        labels = self.labels if self.labels is not None else [None] * len(self.scores)
        return [(int(i), attack, int(t), float(s), None if l is None else int(l))
                for i, t, s, l in zip(self.sample_ids, self.t, self.scores, labels)]

    def write_error_vectors(self, path) -> None:
        """Binary records: int64 sample_id, int64 t, then d little-endian float64."""
        if self.vectors is None:
            raise ValueError("table was computed without error vectors")
        with open(path, "wb") as fh:
            d = self.vectors.shape[1]
            fh.write(struct.pack("<q", d))
            for i, t, v in zip(self.sample_ids, self.t, self.vectors):
                fh.write(struct.pack("<qq", int(i), int(t)))
                fh.write(np.asarray(v, dtype="<f8").tobytes())


def read_error_vectors(path):
    blob = open(path, "rb").read()
    (d,) = struct.unpack_from("<q", blob, 0)
    rec = 16 + 8 * d
    body = blob[8:]
    if len(body) % rec:
        raise ValueError(f"{path}: truncated error-vector dump")
    ids, ts, vecs = [], [], []
    for off in range(0, len(body), rec):
        i, t = struct.unpack_from("<qq", body, off)
        ids.append(i)
        ts.append(t)
        vecs.append(np.frombuffer(body, dtype="<f8", count=d, offset=off + 16))
    return np.array(ids), np.array(ts), np.array(vecs).reshape(-1, d)


def compute_t_errors(model, schedule: NoiseSchedule, X, config: AttackConfig,
                     sample_ids=None, labels=None, cond=None,
                     keep_vectors: bool = False) -> TErrorTable:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    err = reconstruction_error(model, schedule, X, config, cond)
    ids = np.arange(len(X)) if sample_ids is None else np.asarray(sample_ids)
    return TErrorTable(ids, np.full(len(X), config.t_sec), distance(err, config.distance),
                       None if labels is None else np.asarray(labels).astype(int),
                       np.abs(err) if keep_vectors else None, config.distance)


def secmi_stat(table: TErrorTable, labels=None, config: AttackConfig | None = None,
               seed: int | None = None, fpr_levels=DEFAULT_FPR_LEVELS) -> AttackReport:
    """Threshold attack: predict member iff t-error <= tau."""
    config = config or AttackConfig()
    labels = table.labels if labels is None else np.asarray(labels)
    if len(table.scores) == 0:
        raise ValueError("empty score table")
    if labels is None:
        raise ValueError("labels are required to evaluate the attack")
    tau = config.tau if config.threshold_mode == "fixed" else None
    t = int(table.t[0]) if len(set(table.t.tolist())) == 1 else None
    return AttackReport.from_scores("secmi_stat", "low_is_member", table.sample_ids,
                                    table.scores, labels, fpr_levels, tau, seed, t)


class TErrorTransformer(TransformerMixin, BaseEstimator):
    """Map samples to t-errors (``output='score'``) or absolute error vectors.

    Stateless with respect to the data; ``fit`` only validates the
    configuration. Usable as the first stage of a pipeline ending in
    :class:`SecMIStat` or :class:`SecMINNs`.
    """

    def __init__(self, model=None, schedule=None, t_sec=10, stride_k=1,
                 distance="squared_l2", output="score"):
        self.model = model
        self.schedule = schedule
        self.t_sec = t_sec
        self.stride_k = stride_k
        self.distance = distance
        self.output = output

    def _config(self):
        return AttackConfig(self.t_sec, self.stride_k, self.distance)

    def fit(self, X, y=None):
        if self.model is None or self.schedule is None:
            raise ValueError("TErrorTransformer needs a model and a schedule")
        if self.output not in ("score", "abs_error"):
            raise ValueError("output must be 'score' or 'abs_error'")
        self._config().validate(self.schedule)
        X = check_array(X)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X, cond=None):
        check_is_fitted(self, "n_features_in_")
        X = check_array(X)
        err = reconstruction_error(self.model, self.schedule, X, self._config(), cond)
        if self.output == "abs_error":
            return np.abs(err)
        return distance(err, self.distance)[:, None]


class SecMIStat(ClassifierMixin, BaseEstimator):
    """Threshold classifier over t-error scores (lower means member)."""

    def __init__(self, threshold_mode="best_accuracy", tau=None):
        self.threshold_mode = threshold_mode
        self.tau = tau

    def fit(self, X, y):
        X, y = check_X_y(X, y, ensure_2d=False)
        scores = np.asarray(X, dtype=np.float64).reshape(len(y), -1)[:, 0]
        self.classes_ = np.array([0, 1])
        if self.threshold_mode == "fixed":
            if self.tau is None:
                raise ValueError("fixed threshold mode needs tau")
            self.threshold_ = float(self.tau)
        elif self.threshold_mode == "best_accuracy":
            self.threshold_, self.train_asr_ = best_threshold(scores, y, "low_is_member")
        else:
            raise ValueError(f"unknown threshold_mode {self.threshold_mode!r}")
        return self

    def decision_function(self, X):
        check_is_fitted(self, "threshold_")
        X = check_array(X, ensure_2d=False)
        return -np.asarray(X, dtype=np.float64).reshape(len(X), -1)[:, 0]

    def predict(self, X):
        return (-self.decision_function(X) <= self.threshold_).astype(int)


def _log_abs(X):
    return np.log(np.abs(X) + 1e-12)


class SecMINNs(ClassifierMixin, BaseEstimator):
    """Small neural attack model over absolute error vectors.

    Features are log-magnitudes, standardized, fed to a one-output MLP
    (logistic output). ``predict_proba[:, 1]`` is the member confidence.
    """

    def __init__(self, hidden_layer_sizes=(32, 32), learning_rate_init=1e-3,
                 max_iter=500, alpha=1e-4, random_state=0):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.learning_rate_init = learning_rate_init
        self.max_iter = max_iter
        self.alpha = alpha
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        if len(np.unique(y)) < 2:
            raise ValueError("attack training split contains a single class")
        self.pipeline_ = make_pipeline(
            FunctionTransformer(_log_abs),
            StandardScaler(),
            MLPClassifier(hidden_layer_sizes=self.hidden_layer_sizes,
                          learning_rate_init=self.learning_rate_init,
                          max_iter=self.max_iter, alpha=self.alpha,
                          random_state=self.random_state),
        )
        self.pipeline_.fit(X, y)
        self.classes_ = self.pipeline_.classes_
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "pipeline_")
        return self.pipeline_.predict_proba(check_array(X))

    def decision_function(self, X):
        return self.predict_proba(X)[:, 1]

    def predict(self, X):
        return self.pipeline_.predict(check_array(X))


@dataclass
class AttackClassifier:
    estimator: SecMINNs
    train_ids: np.ndarray
    eval_ids: np.ndarray
    train_fraction: float
    train_accuracy: float = field(default=float("nan"))


def attack_split(sample_ids, labels, train_fraction: float = 0.2, seed: int = 0):
    """Stratified split: ``train_fraction`` of each class goes to attack training."""
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie in (0, 1)")
    ids = np.asarray(sample_ids)
    labels = np.asarray(labels).astype(int)
    rng = np.random.default_rng(seed)
    train = np.zeros(len(ids), dtype=bool)
    for cls in (0, 1):
        idx = np.flatnonzero(labels == cls)
        take = int(round(train_fraction * len(idx)))
        train[rng.permutation(idx)[:take]] = True
    return train


def train_attack_classifier(error_vectors, labels, train_fraction: float = 0.2,
                            sample_ids=None, seed: int = 0, **params) -> AttackClassifier:
    """Fit :class:`SecMINNs` on a stratified ``train_fraction`` split."""
    E = np.atleast_2d(np.asarray(error_vectors, dtype=np.float64))
    labels = np.asarray(labels).astype(int)
    ids = np.arange(len(E)) if sample_ids is None else np.asarray(sample_ids)
    train = attack_split(ids, labels, train_fraction, seed)
    if len(np.unique(labels[train])) < 2:
        raise ValueError("attack training split contains a single class")
    est = SecMINNs(random_state=seed, **params).fit(E[train], labels[train])
    acc = float(np.mean(est.predict(E[train]) == labels[train]))
    return AttackClassifier(est, ids[train], ids[~train], train_fraction, acc)


def secmi_nns(classifier: AttackClassifier, error_vectors, labels, sample_ids=None,
              seed: int | None = None) -> AttackReport:
    """Evaluate the attack model; refuses samples it was trained on."""
    E = np.atleast_2d(np.asarray(error_vectors, dtype=np.float64))
    ids = np.arange(len(E)) if sample_ids is None else np.asarray(sample_ids)
    if np.intersect1d(ids, classifier.train_ids).size:
        raise ValueError("evaluation samples overlap the attack-model training split")
    conf = classifier.estimator.decision_function(E)
    return AttackReport.from_scores("secmi_nns", "high_is_member", ids, conf, labels,
                                    seed=seed)


def t_sweep(model, schedule: NoiseSchedule, X, labels, t_list, config: AttackConfig,
            cond=None) -> dict:
    """``{t: (asr, auc)}`` of the threshold attack at each timestep."""
    out = {}
    for t in t_list:
        cfg = AttackConfig(int(t), config.stride_k, config.distance,
                           config.threshold_mode, config.tau)
        table = compute_t_errors(model, schedule, X, cfg, labels=labels, cond=cond)
        rep = secmi_stat(table, config=cfg)
        out[int(t)] = (rep.asr, rep.auc)
    return out
