"""Toy datasets, member/hold-out splits and their on-disk format."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

DATASET_VERSION = 1
DIST_KINDS = ("gaussian_mixture", "swiss_roll", "tiny_image_grid")


@dataclass(frozen=True)
class LabeledSample:
    sample_id: int
    x0: np.ndarray
    membership: int | None = None
    condition: np.ndarray | None = None


@dataclass(frozen=True)
class SplitAssignment:
    member_ids: frozenset
    holdout_ids: frozenset
    seed: int
    ratio: float

    def __post_init__(self):
        if self.member_ids & self.holdout_ids:
            raise ValueError("member and hold-out sets overlap")


@dataclass
class Dataset:
    """A generated dataset plus the metadata needed to regenerate it."""

    samples: list
    dist_kind: str
    seed: int
    params: dict = field(default_factory=dict)
    split: SplitAssignment | None = None
    image_shape: tuple | None = None

    @property
    def d(self) -> int:
        return int(self.samples[0].x0.shape[0])

    @property
    def X(self) -> np.ndarray:
        return np.stack([s.x0 for s in self.samples])

    @property
    def ids(self) -> np.ndarray:
        return np.array([s.sample_id for s in self.samples])

    @property
    def labels(self) -> np.ndarray:
        return np.array([-1 if s.membership is None else s.membership for s in self.samples])

    @property
    def conditions(self) -> np.ndarray | None:
        if self.samples[0].condition is None:
            return None
        return np.stack([s.condition for s in self.samples])

    def members(self) -> list:
        return [s for s in self.samples if s.membership == 1]

    def holdouts(self) -> list:
        return [s for s in self.samples if s.membership == 0]


def mixture_centers(modes: int, radius: float = 0.8) -> np.ndarray:
    ang = 2.0 * np.pi * np.arange(modes) / modes
    return radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)


def generate_toy(dist_kind: str, n: int, d: int = 2, seed: int = 0, *, modes: int = 8,
                 spread: float = 0.05, noise: float = 0.05, image_side: int = 8,
                 conditional: bool = False) -> Dataset:
    """Seeded toy data with every coordinate in [-1, 1].

    ``gaussian_mixture`` places ``modes`` equal-weight isotropic Gaussians on a
    circle of radius 0.8 (``d == 2``). ``swiss_roll`` is the 2D spiral.
    ``tiny_image_grid`` produces ``image_side x image_side`` textures flattened
    to ``d == image_side ** 2``. ``conditional`` attaches the one-hot mode index
    (mixture only) as the condition vector.
    """
    if dist_kind not in DIST_KINDS:
        raise ValueError(f"unknown dist_kind {dist_kind!r}")
    if n < 2:
        raise ValueError("n must be at least 2")
    rng = np.random.default_rng(seed)
    conds = None
    image_shape = None
    params: dict = {}
    if dist_kind == "gaussian_mixture":
        if d != 2:
            raise ValueError("gaussian_mixture is two-dimensional")
        centers = mixture_centers(modes)
        comp = rng.integers(0, modes, size=n)
        X = centers[comp] + spread * rng.standard_normal((n, 2))
        params = {"modes": modes, "spread": spread}
        if conditional:
            conds = np.eye(modes)[comp]
            params["conditional"] = True
    elif dist_kind == "swiss_roll":
        if d != 2:
            raise ValueError("swiss_roll is two-dimensional")
        u = 1.5 * np.pi * (1.0 + 2.0 * rng.uniform(size=n))
        X = np.stack([u * np.cos(u), u * np.sin(u)], axis=1) / (4.5 * np.pi)
        X = X + noise * rng.standard_normal((n, 2))
        params = {"noise": noise}
    else:
        if d != image_side * image_side:
            raise ValueError(f"tiny_image_grid needs d == {image_side}**2")
        yy, xx = np.mgrid[0:image_side, 0:image_side] / max(image_side - 1, 1)
        freq = rng.uniform(0.5, 2.5, size=(n, 2))
        phase = rng.uniform(0, 2 * np.pi, size=(n, 1, 1))
        img = np.sin(2 * np.pi * (freq[:, 0, None, None] * xx + freq[:, 1, None, None] * yy)
                     + phase)
        # left-right asymmetric ramp so that mirroring is observable
        img = 0.7 * img + 0.3 * (2 * xx - 1)
        X = img.reshape(n, -1) + noise * rng.standard_normal((n, d))
        image_shape = (image_side, image_side)
        params = {"noise": noise, "image_side": image_side}
    X = np.clip(X, -1.0, 1.0)
    samples = [LabeledSample(i, X[i].copy(), None, None if conds is None else conds[i])
               for i in range(n)]
    return Dataset(samples, dist_kind, seed, params, image_shape=image_shape)


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split(dataset: Dataset, ratio: float = 0.5, seed: int = 0) -> Dataset:
    """Uniformly random member/hold-out partition; returns a relabeled copy."""
    n = len(dataset.samples)
    if n < 2:
        raise ValueError("need at least two samples to split")
    if not 0 < ratio < 1:
        raise ValueError("ratio must lie in (0, 1)")
    n_mem = round_half_up(ratio * n)
    perm = np.random.default_rng(seed).permutation(n)
    ids = dataset.ids
    member_ids = frozenset(int(i) for i in ids[perm[:n_mem]])
    holdout_ids = frozenset(int(i) for i in ids[perm[n_mem:]])
    assignment = SplitAssignment(member_ids, holdout_ids, seed, ratio)
    samples = [replace(s, membership=int(s.sample_id in member_ids)) for s in dataset.samples]
    return replace(dataset, samples=samples, split=assignment)


def save_dataset(dataset: Dataset, path) -> None:
    """JSON header line followed by CSV rows ``sample_id,membership,x...[,c...]``."""
    cond_dim = 0 if dataset.conditions is None else dataset.conditions.shape[1]
    header = {
        "version": DATASET_VERSION, "d": dataset.d, "n": len(dataset.samples),
        "dist_kind": dataset.dist_kind, "seed": dataset.seed, "params": dataset.params,
        "ratio": None if dataset.split is None else dataset.split.ratio,
        "split_seed": None if dataset.split is None else dataset.split.seed,
        "condition_dim": cond_dim, "encoding": "csv",
        "image_shape": None if dataset.image_shape is None else list(dataset.image_shape),
    }
    lines = [json.dumps(header, sort_keys=True)]
    for s in dataset.samples:
        m = "" if s.membership is None else str(s.membership)
        vals = [repr(float(v)) for v in s.x0]
        if cond_dim:
            vals += [repr(float(v)) for v in s.condition]
        lines.append(",".join([str(s.sample_id), m, *vals]))
    Path(path).write_text("\n".join(lines) + "\n")


def load_dataset(path) -> Dataset:
    text = Path(path).read_text()
    rows = text.splitlines()
    if not rows:
        raise ValueError(f"{path}: empty dataset file")
    header = json.loads(rows[0])
    if header.get("version") != DATASET_VERSION:
        raise ValueError(f"{path}: unsupported dataset version {header.get('version')}")
    if header.get("encoding") != "csv":
        raise ValueError(f"{path}: unsupported encoding {header.get('encoding')}")
    d, n, cdim = header["d"], header["n"], header["condition_dim"]
    body = rows[1:]
    if len(body) != n or not text.endswith("\n"):
        raise ValueError(f"{path}: truncated file, expected {n} rows")
    samples = []
    for row in body:
        parts = row.split(",")
        if len(parts) != 2 + d + cdim:
            raise ValueError(f"{path}: malformed row {row!r}")
        vals = np.array([float(v) for v in parts[2:]])
        samples.append(LabeledSample(int(parts[0]), vals[:d],
                                     None if parts[1] == "" else int(parts[1]),
                                     vals[d:] if cdim else None))
    split_info = None
    if header["ratio"] is not None:
        split_info = SplitAssignment(
            frozenset(s.sample_id for s in samples if s.membership == 1),
            frozenset(s.sample_id for s in samples if s.membership == 0),
            header["split_seed"], header["ratio"])
    shape = header.get("image_shape")
    return Dataset(samples, header["dist_kind"], header["seed"], header["params"],
                   split_info, None if shape is None else tuple(shape))
