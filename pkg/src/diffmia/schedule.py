"""Closed-form Gaussian diffusion quantities.

All public functions use 1-based timesteps ``t in {1..T}``; ``alpha_bar(0)`` is
defined as 1 so that deterministic operators can start from clean data.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class GaussianPosterior:
    mean: np.ndarray
    variance: float


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Precomputed variance schedule.

    Arrays are stored 0-based (``betas[t - 1]`` is beta_t); use the accessor
    methods for 1-based lookups.
    """

    T: int
    betas: np.ndarray
    beta_start: float
    beta_end: float
    schedule_kind: str = "linear"
    alphas: np.ndarray = field(init=False, repr=False)
    alpha_bars: np.ndarray = field(init=False, repr=False)
    posterior_variances: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=np.float64).copy()
        if betas.ndim != 1 or betas.shape[0] != self.T:
            raise ValueError(f"expected {self.T} betas, got shape {betas.shape}")
        if self.T < 1:
            raise ValueError("T must be at least 1")
        if not np.all((betas > 0) & (betas < 1)):
            raise ValueError("betas must lie in the open interval (0, 1)")
        alphas = 1.0 - betas
        alpha_bars = np.empty_like(alphas)
        acc = 1.0
        for i, a in enumerate(alphas):
            acc = acc * a
            alpha_bars[i] = acc
        prev = np.concatenate([[1.0], alpha_bars[:-1]])
        post_var = (1.0 - prev) / (1.0 - alpha_bars) * betas
        for name, arr in (("betas", betas), ("alphas", alphas),
                          ("alpha_bars", alpha_bars),
                          ("posterior_variances", post_var)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def alpha_bar(self, t):
        """Cumulative product at 1-based ``t`` (scalar or array); 0 maps to 1."""
        t = np.asarray(t)
        if np.any(t < 0) or np.any(t > self.T):
            raise ValueError(f"timestep out of range [0, {self.T}]: {t}")
        padded = np.concatenate([[1.0], self.alpha_bars])
        out = padded[t]
        return float(out) if out.ndim == 0 else out

    def beta(self, t: int) -> float:
        _check_t(self, t, low=1)
        return float(self.betas[t - 1])

    def alpha(self, t: int) -> float:
        _check_t(self, t, low=1)
        return float(self.alphas[t - 1])

    def posterior_variance(self, t: int) -> float:
        _check_t(self, t, low=1)
        return float(self.posterior_variances[t - 1])

    def describe(self) -> dict:
        return {"T": self.T, "beta_start": self.beta_start,
                "beta_end": self.beta_end, "schedule_kind": self.schedule_kind}

    @classmethod
    def from_description(cls, desc: dict) -> "NoiseSchedule":
        if desc.get("schedule_kind", "linear") != "linear":
            raise ValueError(f"unsupported schedule kind {desc['schedule_kind']!r}")
        return build_linear_schedule(int(desc["T"]), float(desc["beta_start"]),
                                     float(desc["beta_end"]))

    def __eq__(self, other):
        if not isinstance(other, NoiseSchedule):
            return NotImplemented
        return (self.T == other.T and self.schedule_kind == other.schedule_kind
                and np.array_equal(self.betas, other.betas))

    def __hash__(self):
        return hash((self.T, self.schedule_kind, self.betas.tobytes()))


def _check_t(schedule: NoiseSchedule, t, low: int = 1, high: int | None = None):
    high = schedule.T if high is None else high
    if not (low <= int(t) <= high):
        raise ValueError(f"timestep {t} outside [{low}, {high}]")


def build_linear_schedule(T: int, beta_start: float = 1e-4,
                          beta_end: float = 0.02) -> NoiseSchedule:
    """Linear beta schedule, inclusive of both endpoints."""
    if T < 1:
        raise ValueError("T must be at least 1")
    if not (0 < beta_start <= beta_end < 1):
        raise ValueError("need 0 < beta_start <= beta_end < 1")
    if T == 1:
        betas = np.array([beta_start], dtype=np.float64)
    else:
        betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    return NoiseSchedule(T=T, betas=betas, beta_start=beta_start, beta_end=beta_end)


def schedule_from_betas(betas) -> NoiseSchedule:
    betas = np.asarray(betas, dtype=np.float64)
    return NoiseSchedule(T=len(betas), betas=betas, beta_start=float(betas[0]),
                         beta_end=float(betas[-1]), schedule_kind="custom")


def q_sample(schedule: NoiseSchedule, x0, t, eps) -> np.ndarray:
    """x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.

    ``x0``/``eps`` may be a single vector or a batch ``(n, d)``; ``t`` may be an
    int or a length-``n`` integer array.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise ValueError(f"x0 shape {x0.shape} does not match eps shape {eps.shape}")
    t = np.asarray(t)
    if np.any(t < 1) or np.any(t > schedule.T):
        raise ValueError(f"timestep outside [1, {schedule.T}]")
    ab = np.asarray(schedule.alpha_bar(t), dtype=np.float64)
    if ab.ndim == 1:
        ab = ab[:, None]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def posterior_coefficients(schedule: NoiseSchedule, t: int) -> tuple[float, float]:
    """Coefficients (on x0, on x_t) of the mean of q(x_{t-1} | x_t, x0)."""
    ab_t = schedule.alpha_bar(t)
    ab_prev = schedule.alpha_bar(t - 1)
    beta_t = schedule.beta(t)
    c0 = np.sqrt(ab_prev) * beta_t / (1.0 - ab_t)
    ct = np.sqrt(schedule.alpha(t)) * (1.0 - ab_prev) / (1.0 - ab_t)
    return float(c0), float(ct)


def true_posterior(schedule: NoiseSchedule, x0, xt, t: int,
                   allow_t1: bool = False) -> GaussianPosterior:
    """Mean and variance of q(x_{t-1} | x_t, x0).

    At ``t == 1`` the posterior collapses onto x0 (zero variance); that case is
    only evaluated when ``allow_t1`` is set.
    """
    _check_t(schedule, t, low=1 if allow_t1 else 2)
    x0 = np.asarray(x0, dtype=np.float64)
    xt = np.asarray(xt, dtype=np.float64)
    if x0.shape != xt.shape:
        raise ValueError("x0 and xt must have the same shape")
    c0, ct = posterior_coefficients(schedule, t)
    return GaussianPosterior(mean=c0 * x0 + ct * xt,
                             variance=schedule.posterior_variance(t))
