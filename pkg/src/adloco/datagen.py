"""Synthetic datasets, per-trainer shards and reproducible mini-batch sampling."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from adloco.errors import ConfigError, UsageError
from adloco.objectives import Batch

RECIPES = {
    "gaussian-quadratic": "quadratic",
    "two-cluster": "logistic",
    "teacher-mlp": "mlp",
}

TEACHER_HIDDEN = 8
SEPARATION = 0.5
CENTRE_SCALE = 0.05


def stream(*key: int) -> np.random.Generator:
    """Counter-based generator keyed by a tuple of non-negative integers."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(list(key))))


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    targets: np.ndarray
    recipe: str = "custom"
    seed: int = 0

    def __post_init__(self):
        if self.features.ndim != 2 or len(self.features) == 0:
            raise ConfigError("dataset needs a non-empty (n, d) feature array")
        if self.targets.shape != (len(self.features),):
            raise ConfigError("targets must have one entry per sample")
        self.features.flags.writeable = False
        self.targets.flags.writeable = False

    def __len__(self) -> int:
        return len(self.targets)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def take(self, idx: np.ndarray) -> Batch:
        return Batch(self.features[idx], self.targets[idx])


def generate(recipe: str, n: int, d: int, seed: int, scale: float = 1.0) -> Dataset:
    """Build a dataset deterministically from ``(recipe, n, d, seed, scale)``.

    ``gaussian-quadratic``
        targets for the quadratic loss: ``xi = scale * (c + z)`` with a small
        random centre ``c ~ N(0, CENTRE_SCALE^2 I)`` and unit Gaussian noise ``z``.
    ``two-cluster``
        balanced binary labels, features ``scale * (+-m + z)`` with ``m`` a
        random direction of norm ``SEPARATION``.
    ``teacher-mlp``
        Gaussian inputs, regression targets from a random tanh teacher network
        plus 0.1 noise.
    """
    if recipe not in RECIPES:
        raise ConfigError(f"unknown recipe {recipe!r}; expected one of {sorted(RECIPES)}")
    if n < 1 or d < 1:
        raise ConfigError("n and d must be >= 1")
    rng = stream(seed, 0xDA7A)
    if recipe == "gaussian-quadratic":
        centre = CENTRE_SCALE * rng.standard_normal(d)
        features = scale * (centre + rng.standard_normal((n, d)))
        targets = np.zeros(n)
    elif recipe == "two-cluster":
        direction = rng.standard_normal(d)
        direction *= SEPARATION / np.linalg.norm(direction)
        targets = rng.integers(0, 2, size=n).astype(np.float64)
        signs = 2.0 * targets - 1.0
        features = scale * (signs[:, None] * direction + rng.standard_normal((n, d)))
    else:
        W = rng.standard_normal((TEACHER_HIDDEN, d)) / math.sqrt(d)
        v = rng.standard_normal(TEACHER_HIDDEN) / math.sqrt(TEACHER_HIDDEN)
        features = scale * rng.standard_normal((n, d))
        targets = np.tanh(features @ W.T) @ v + 0.1 * rng.standard_normal(n)
    return Dataset(features, targets, recipe, seed)


@dataclass
class Shard:
    owner: int
    indices: np.ndarray
    rng: np.random.Generator = field(repr=False)

    def __post_init__(self):
        if len(self.indices) == 0:
            raise ConfigError("shard must hold at least one index")

    def draw(self, shape) -> np.ndarray:
        """Dataset indices sampled uniformly with replacement from this shard."""
        return self.indices[self.rng.integers(0, len(self.indices), size=shape)]

    def get_state(self) -> dict:
        return self.rng.bit_generator.state

    def set_state(self, state: dict) -> None:
        self.rng.bit_generator.state = state


def shard(ds: Dataset, k: int, fraction: float, seed: int) -> list[Shard]:
    """``k`` independent uniform random subsets of size ``ceil(fraction * |ds|)``."""
    if k < 1:
        raise ConfigError("trainer count k must be >= 1")
    if not 0.0 < fraction <= 1.0:
        raise ConfigError(f"shard fraction must lie in (0, 1], got {fraction}")
    size = math.ceil(fraction * len(ds))
    shards = []
    for tid in range(k):
        picker = stream(seed, tid, 0)
        indices = np.sort(picker.choice(len(ds), size=size, replace=False))
        shards.append(Shard(tid, indices, stream(seed, tid, 1)))
    return shards


def next_batch(sh: Shard, ds: Dataset, b: int) -> Batch:
    if b < 1:
        raise UsageError(f"batch size must be >= 1, got {b}")
    return ds.take(sh.draw(b))


def dump_csv(ds: Dataset, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{j}" for j in range(ds.dim)] + ["target"])
        for row, target in zip(ds.features, ds.targets):
            writer.writerow([repr(float(v)) for v in row] + [repr(float(target))])


def load_csv(path: str | Path) -> Dataset:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"dataset file not found: {path}")
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise ConfigError(f"dataset file {path} has no samples")
    try:
        data = np.array([[float(v) for v in row] for row in rows[1:]], dtype=np.float64)
    except ValueError as exc:
        raise ConfigError(f"non-numeric value in {path}: {exc}") from None
    return Dataset(data[:, :-1].copy(), data[:, -1].copy(), "csv", 0)
