"""Deterministic reverse/denoise operators and stochastic ancestral sampling.

``model`` is anything callable as ``model(x_t, t, cond) -> eps_hat`` over a
batch ``(n, d)``; :class:`diffmia.model.EpsilonMLP` qualifies. Each operator
below queries the model exactly once per step.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .schedule import NoiseSchedule

_SQRT_ABAR_FLOOR = 1e-12


@dataclass(frozen=True)
class TrajectoryConfig:
    stride_k: int = 1
    t_start: int = 0
    t_end: int = 1
    conditioning: np.ndarray | None = None

    def __post_init__(self):
        if self.stride_k < 1:
            raise ValueError("stride_k must be a positive integer")
        if self.t_start < 0 or self.t_end < 0:
            raise ValueError("timesteps must be nonnegative")


def _as_batch(x):
    x = np.asarray(x, dtype=np.float64)
    return np.atleast_2d(x), x.ndim == 1


def predict_x0(model, schedule: NoiseSchedule, xt, t: int, cond=None, eps_hat=None):
    """Clean-data estimate ``(x_t - sqrt(1 - abar_t) eps_hat) / sqrt(abar_t)``."""
    ab = schedule.alpha_bar(t)
    if math.sqrt(ab) < _SQRT_ABAR_FLOOR:
        raise ValueError(f"sqrt(alpha_bar) underflows at t={t}")
    xt = np.asarray(xt, dtype=np.float64)
    if eps_hat is None:
        eps_hat = model(xt, t, cond)
    return (xt - math.sqrt(1.0 - ab) * eps_hat) / math.sqrt(ab)


def _ddim_move(model, schedule, xt, t, t_to, cond):
    eps_hat = model(xt, t, cond)
    x0_hat = predict_x0(model, schedule, xt, t, eps_hat=eps_hat)
    ab_to = schedule.alpha_bar(t_to)
    return math.sqrt(ab_to) * x0_hat + math.sqrt(1.0 - ab_to) * eps_hat


def phi_step(model, schedule: NoiseSchedule, xt, t: int, cond=None, t_next: int | None = None):
    """One deterministic noising step from ``t`` to ``t_next`` (default ``t + 1``).

    The model is evaluated at the operand's own timestep ``t``.
    """
    t_next = t + 1 if t_next is None else t_next
    if not (0 <= t < t_next <= schedule.T):
        raise ValueError(f"invalid reverse step {t} -> {t_next} for T={schedule.T}")
    return _ddim_move(model, schedule, xt, t, t_next, cond)


def psi_step(model, schedule: NoiseSchedule, xt, t: int, cond=None, t_prev: int | None = None):
    """One deterministic denoising step from ``t`` to ``t_prev`` (default ``t - 1``).

    At ``t_prev == 0`` this returns the clean-data estimate, since abar_0 = 1.
    """
    t_prev = t - 1 if t_prev is None else t_prev
    if not (0 <= t_prev < t <= schedule.T):
        raise ValueError(f"invalid denoise step {t} -> {t_prev} for T={schedule.T}")
    return _ddim_move(model, schedule, xt, t, t_prev, cond)


def stride_grid(start: int, stop: int, k: int) -> list[int]:
    """Timesteps visited moving from ``start`` to ``stop`` in strides of ``k``.

    A final shorter step lands exactly on ``stop``.
    """
    if k < 1:
        raise ValueError("stride must be positive")
    sign = 1 if stop >= start else -1
    grid = list(range(start, stop, sign * k))
    grid.append(stop)
    return grid


def deterministic_reverse(model, schedule: NoiseSchedule, x_s, s: int, t: int,
                          stride: int = 1, cond=None, trace: list | None = None):
    """Iterate :func:`phi_step` from ``s`` up to ``t``; ``ceil((t - s) / stride)`` queries."""
    if not (0 <= s < t <= schedule.T):
        raise ValueError(f"invalid reverse span {s} -> {t}")
    x = np.asarray(x_s, dtype=np.float64)
    grid = stride_grid(s, t, stride)
    if trace is not None:
        trace.append((grid[0], x))
    for a, b in zip(grid[:-1], grid[1:]):
        x = phi_step(model, schedule, x, a, cond, t_next=b)
        if trace is not None:
            trace.append((b, x))
    return x


def deterministic_denoise(model, schedule: NoiseSchedule, x_t, t: int, s: int,
                          stride: int = 1, cond=None, trace: list | None = None):
    """Iterate :func:`psi_step` from ``t`` down to ``s``; ``ceil((t - s) / stride)`` queries."""
    if not (0 <= s < t <= schedule.T):
        raise ValueError(f"invalid denoise span {t} -> {s}")
    x = np.asarray(x_t, dtype=np.float64)
    grid = stride_grid(t, s, stride)
    if trace is not None:
        trace.append((grid[0], x))
    for a, b in zip(grid[:-1], grid[1:]):
        x = psi_step(model, schedule, x, a, cond, t_prev=b)
        if trace is not None:
            trace.append((b, x))
    return x


def ddpm_mean(schedule: NoiseSchedule, xt, t: int, eps_hat):
    """Mean of p(x_{t-1} | x_t) implied by a noise estimate."""
    beta = schedule.beta(t)
    coef = beta / math.sqrt(1.0 - schedule.alpha_bar(t))
    return (xt - coef * eps_hat) / math.sqrt(schedule.alpha(t))


def ancestral_sample(model, schedule: NoiseSchedule, n: int, seed: int, data_dim: int,
                     cond=None, x_T=None, zero_variance: bool = False) -> np.ndarray:
    """Draw ``n`` samples through the full stochastic chain ``T -> 0``.

    Sample ``i`` uses its own generator seeded by ``(seed, i)``, so a sample
    does not depend on how many others are drawn alongside it.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    T = schedule.T
    init = np.empty((n, data_dim))
    noise = np.empty((n, T, data_dim))
    for i in range(n):
        rng = np.random.default_rng([seed, i])
        init[i] = rng.standard_normal(data_dim)
        noise[i] = rng.standard_normal((T, data_dim))
    x = init if x_T is None else np.broadcast_to(np.asarray(x_T, dtype=np.float64),
                                                 (n, data_dim)).copy()
    for t in range(T, 0, -1):
        eps_hat = model(x, t, cond)
        x = ddpm_mean(schedule, x, t, eps_hat)
        if t > 1 and not zero_variance:
            x = x + math.sqrt(schedule.posterior_variance(t)) * noise[:, T - t]
    return x


def dump_trajectory_csv(path, sample_ids, trace) -> None:
    """Write a ``trace`` collected by the deterministic operators as long-form CSV."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", "t", "component_index", "value"])
        for t, x in trace:
            x = np.atleast_2d(x)
            for sid, row in zip(sample_ids, x):
                for j, v in enumerate(row):
                    w.writerow([sid, t, j, repr(float(v))])
