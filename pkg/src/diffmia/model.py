"""Noise predictor: an MLP over ``[x_t, time-embedding(t), condition]``.

Parameters live in one flat float64 vector so the optimizer, EMA and the
checkpoint format all see the same layout: for each layer, the weight matrix
(row-major, ``fan_in x fan_out``) followed by its bias.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .schedule import NoiseSchedule, q_sample

FORMAT_VERSION = 1


def sinusoidal_embedding(t, num_timesteps: int, dim: int) -> np.ndarray:
    """Sin/cos features of ``t / num_timesteps`` at geometrically spaced frequencies."""
    if dim % 2:
        raise ValueError("time embedding dimension must be even")
    t = np.atleast_1d(np.asarray(t, dtype=np.float64)) / num_timesteps
    freqs = np.pi * np.geomspace(1.0, max(num_timesteps / 2.0, 1.0), dim // 2)
    ang = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def coordinate_embedding(x, dim: int) -> np.ndarray:
    """Per-coordinate sin/cos features at octave frequencies; ``dim`` features per coordinate."""
    if dim % 2:
        raise ValueError("coordinate embedding dimension must be even")
    freqs = np.pi * 2.0 ** np.arange(dim // 2)
    ang = x[:, :, None] * freqs[None, None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=2).reshape(len(x), -1)


def _silu(z):
    return z * expit(z)


def _silu_grad(z):
    s = expit(z)
    return s * (1.0 + z * (1.0 - s))


class EpsilonMLP:
    """Time-conditioned MLP predicting the noise added to ``x_0``.

    ``n_queries`` counts forward calls; a batched call counts once, i.e. one
    query per row.
    """

    def __init__(self, data_dim: int, hidden_dims=(64, 64), num_timesteps: int = 100,
                 time_embedding_dim: int = 16, condition_dim: int = 0,
                 seed: int | None = 0, params=None, coord_embedding_dim: int = 0):
        if data_dim < 1 or num_timesteps < 1:
            raise ValueError("data_dim and num_timesteps must be positive")
        if condition_dim < 0:
            raise ValueError("condition_dim must be nonnegative")
        self.data_dim = int(data_dim)
        self.hidden_dims = tuple(int(h) for h in hidden_dims)
        self.num_timesteps = int(num_timesteps)
        self.time_embedding_dim = int(time_embedding_dim)
        self.condition_dim = int(condition_dim)
        self.coord_embedding_dim = int(coord_embedding_dim)
        in_dim = (self.data_dim * (1 + self.coord_embedding_dim)
                  + self.time_embedding_dim + self.condition_dim)
        self.layer_dims = [in_dim, *self.hidden_dims, self.data_dim]
        self._shapes = []
        offset = 0
        for fan_in, fan_out in zip(self.layer_dims[:-1], self.layer_dims[1:]):
            self._shapes.append((offset, fan_in, fan_out))
            offset += fan_in * fan_out + fan_out
        self.param_count = offset
        self.n_queries = 0
        if params is None:
            params = self._init_params(np.random.default_rng(seed))
        self.set_params(params)

    def _init_params(self, rng) -> np.ndarray:
        chunks = []
        for _, fan_in, fan_out in self._shapes:
            bound = 1.0 / np.sqrt(fan_in)
            chunks.append(rng.uniform(-bound, bound, size=fan_in * fan_out))
            chunks.append(rng.uniform(-bound, bound, size=fan_out))
        return np.concatenate(chunks)

    def set_params(self, params) -> None:
        params = np.array(params, dtype=np.float64).ravel()
        if params.shape[0] != self.param_count:
            raise ValueError(f"expected {self.param_count} parameters, got {params.shape[0]}")
        self.params = params

    def with_params(self, params) -> "EpsilonMLP":
        return EpsilonMLP(self.data_dim, self.hidden_dims, self.num_timesteps,
                          self.time_embedding_dim, self.condition_dim, params=params,
                          coord_embedding_dim=self.coord_embedding_dim)

    def _layers(self, params=None):
        params = self.params if params is None else params
        for offset, fan_in, fan_out in self._shapes:
            W = params[offset:offset + fan_in * fan_out].reshape(fan_in, fan_out)
            b = params[offset + fan_in * fan_out:offset + fan_in * fan_out + fan_out]
            yield W, b

    def _inputs(self, xt, t, cond):
        xt = np.asarray(xt, dtype=np.float64)
        single = xt.ndim == 1
        xt = np.atleast_2d(xt)
        n = xt.shape[0]
        if xt.shape[1] != self.data_dim:
            raise ValueError(f"expected data dimension {self.data_dim}, got {xt.shape[1]}")
        t = np.broadcast_to(np.asarray(t), (n,))
        if np.any(t < 0) or np.any(t > self.num_timesteps):
            raise ValueError(f"timestep outside [0, {self.num_timesteps}]")
        parts = [xt]
        if self.coord_embedding_dim:
            parts.append(coordinate_embedding(xt, self.coord_embedding_dim))
        parts.append(sinusoidal_embedding(t, self.num_timesteps, self.time_embedding_dim))
        if self.condition_dim:
            if cond is None:
                raise ValueError("model is conditional; a condition vector is required")
            cond = np.atleast_2d(np.asarray(cond, dtype=np.float64))
            if cond.shape[1] != self.condition_dim:
                raise ValueError(f"expected condition dimension {self.condition_dim}")
            parts.append(np.broadcast_to(cond, (n, self.condition_dim)))
        elif cond is not None:
            raise ValueError("model is unconditional but a condition was given")
        return np.concatenate(parts, axis=1), single

    def _forward_cached(self, inp, params=None):
        pre, acts = [], [inp]
        h = inp
        layers = list(self._layers(params))
        for i, (W, b) in enumerate(layers):
            z = h @ W + b
            if i < len(layers) - 1:
                pre.append(z)
                h = _silu(z)
                acts.append(h)
            else:
                h = z
        return h, pre, acts

    def forward(self, xt, t, cond=None) -> np.ndarray:
        inp, single = self._inputs(xt, t, cond)
        self.n_queries += 1
        out, _, _ = self._forward_cached(inp)
        return out[0] if single else out

    __call__ = forward

    def backward(self, inp, grad_out, params=None, cache=None) -> np.ndarray:
        """Gradient of ``sum(grad_out * forward(inp))`` with respect to the flat params."""
        pre, acts = cache if cache is not None else self._forward_cached(inp, params)[1:]
        layers = list(self._layers(params))
        grads = [None] * len(layers)
        delta = grad_out
        for i in range(len(layers) - 1, -1, -1):
            W, _ = layers[i]
            grads[i] = (acts[i].T @ delta, delta.sum(axis=0))
            if i > 0:
                delta = (delta @ W.T) * _silu_grad(pre[i - 1])
        return np.concatenate([np.concatenate([gW.ravel(), gb]) for gW, gb in grads])

    def header(self) -> dict:
        return {"version": FORMAT_VERSION, "layer_dims": self.layer_dims,
                "hidden_dims": list(self.hidden_dims), "data_dim": self.data_dim,
                "num_timesteps": self.num_timesteps,
                "time_embedding_dim": self.time_embedding_dim,
                "condition_dim": self.condition_dim, "param_count": self.param_count,
                "coord_embedding_dim": self.coord_embedding_dim}

    @classmethod
    def from_header(cls, header: dict, params) -> "EpsilonMLP":
        if header.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported model format version {header.get('version')}")
        model = cls(header["data_dim"], header["hidden_dims"], header["num_timesteps"],
                    header["time_embedding_dim"], header["condition_dim"], params=params,
                    coord_embedding_dim=header.get("coord_embedding_dim", 0))
        if model.layer_dims != list(header["layer_dims"]):
            raise ValueError("layer_dims in header are inconsistent")
        return model

    def to_bytes(self) -> bytes:
        head = json.dumps(self.header(), sort_keys=True).encode() + b"\n"
        return head + self.params.astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "EpsilonMLP":
        head, _, payload = blob.partition(b"\n")
        header = json.loads(head)
        params = np.frombuffer(payload, dtype="<f8")
        if params.shape[0] != header["param_count"]:
            raise ValueError("parameter payload is truncated or oversized")
        return cls.from_header(header, params.astype(np.float64))


def loss_and_gradient(model: EpsilonMLP, schedule: NoiseSchedule, x0, t, eps,
                      cond=None, params=None):
    """Noise-prediction loss and its exact gradient.

    Loss is the batch mean of ``||eps_theta(q_sample(x0, t, eps), t) - eps||^2``
    (squared error summed over coordinates).
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=np.float64))
    eps = np.atleast_2d(np.asarray(eps, dtype=np.float64))
    if x0.shape[0] == 0:
        raise ValueError("empty batch")
    t = np.broadcast_to(np.asarray(t), (x0.shape[0],))
    if np.any(t < 1) or np.any(t > schedule.T):
        raise ValueError(f"timestep outside [1, {schedule.T}]")
    xt = q_sample(schedule, x0, t, eps)
    inp, _ = model._inputs(xt, t, cond)
    out, pre, acts = model._forward_cached(inp, params)
    resid = out - eps
    n = x0.shape[0]
    loss = float(np.sum(resid ** 2) / n)
    grad = model.backward(inp, 2.0 * resid / n, params, cache=(pre, acts))
    return loss, grad


@dataclass(frozen=True)
class EmaState:
    decay: float
    shadow_params: np.ndarray

    def __post_init__(self):
        if not 0.0 <= self.decay < 1.0:
            raise ValueError("EMA decay must lie in [0, 1)")


def ema_update(ema: EmaState, params) -> EmaState:
    params = np.asarray(params, dtype=np.float64)
    if params.shape != ema.shadow_params.shape:
        raise ValueError("EMA shadow and params differ in length")
    shadow = ema.decay * ema.shadow_params + (1.0 - ema.decay) * params
    return EmaState(ema.decay, shadow)
