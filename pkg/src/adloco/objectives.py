"""Per-sample loss families with hand-derived gradients.

Three families stand in for a large model's loss:

* ``quadratic``: ``f(x; xi) = 0.5 * ||x - xi||^2`` (the sample's features are xi)
* ``logistic``: binary log-loss of ``sigmoid(<x, a>)`` against a 0/1 label
* ``mlp``: one tanh hidden layer, scalar output, squared loss

All arithmetic is float64. Every function here is pure.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence, Union

import numpy as np
from scipy.special import expit

from adloco.errors import ConfigError, UsageError

KINDS = ("quadratic", "logistic", "mlp")


class Sample(NamedTuple):
    features: np.ndarray
    target: float


class Batch(NamedTuple):
    """Stacked samples: ``features`` is (b, input_dim), ``targets`` is (b,)."""

    features: np.ndarray
    targets: np.ndarray

    def __len__(self) -> int:
        return len(self.targets)


BatchLike = Union[Batch, Sequence[Sample]]


def as_batch(batch: BatchLike) -> Batch:
    if isinstance(batch, Batch):
        return batch
    batch = list(batch)
    if not batch:
        raise UsageError("batch must contain at least one sample")
    features = np.stack([np.asarray(s.features, dtype=np.float64) for s in batch])
    targets = np.array([float(s.target) for s in batch], dtype=np.float64)
    return Batch(features, targets)


@dataclass(frozen=True)
class Objective:
    kind: str
    input_dim: int
    hidden: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown objective kind {self.kind!r}; expected one of {KINDS}")
        if self.input_dim < 1:
            raise ConfigError("input_dim must be >= 1")
        if self.kind == "mlp" and self.hidden < 1:
            raise ConfigError("mlp objective needs hidden >= 1")

    @property
    def param_dim(self) -> int:
        if self.kind == "mlp":
            return self.hidden * self.input_dim + 2 * self.hidden + 1
        return self.input_dim

    @property
    def code(self) -> int:
        return KINDS.index(self.kind)

    def init_params(self, rng: np.random.Generator, scale: float) -> np.ndarray:
        return scale * rng.standard_normal(self.param_dim)

    # -- shape checks -------------------------------------------------------

    def _check(self, x: np.ndarray, features: np.ndarray) -> None:
        if x.shape != (self.param_dim,):
            raise ConfigError(
                f"parameter vector has shape {x.shape}, objective expects ({self.param_dim},)"
            )
        if features.shape[-1] != self.input_dim:
            raise ConfigError(
                f"sample has {features.shape[-1]} features, objective expects {self.input_dim}"
            )

    def _unpack(self, x: np.ndarray):
        h, d = self.hidden, self.input_dim
        W = x[: h * d].reshape(h, d)
        c = x[h * d : h * d + h]
        v = x[h * d + h : h * d + 2 * h]
        e = x[-1]
        return W, c, v, e

    # -- vectorised per-sample evaluation ------------------------------------

    def losses(self, x: np.ndarray, features: np.ndarray, targets: np.ndarray) -> np.ndarray:
        """Per-sample losses for a stacked batch."""
        x = np.asarray(x, dtype=np.float64)
        features = np.atleast_2d(np.asarray(features, dtype=np.float64))
        targets = np.asarray(targets, dtype=np.float64).reshape(-1)
        self._check(x, features)
        if self.kind == "quadratic":
            diff = x - features
            return 0.5 * np.einsum("ij,ij->i", diff, diff)
        if self.kind == "logistic":
            z = features @ x
            return np.logaddexp(0.0, z) - targets * z
        W, c, v, e = self._unpack(x)
        act = np.tanh(features @ W.T + c)
        resid = act @ v + e - targets
        return 0.5 * resid * resid

    def per_sample_grads(
        self, x: np.ndarray, features: np.ndarray, targets: np.ndarray
    ) -> np.ndarray:
        """Per-sample gradients, shape (b, param_dim)."""
        x = np.asarray(x, dtype=np.float64)
        features = np.atleast_2d(np.asarray(features, dtype=np.float64))
        targets = np.asarray(targets, dtype=np.float64).reshape(-1)
        self._check(x, features)
        if self.kind == "quadratic":
            return x - features
        if self.kind == "logistic":
            p = expit(features @ x)
            return (p - targets)[:, None] * features
        W, c, v, e = self._unpack(x)
        b = features.shape[0]
        act = np.tanh(features @ W.T + c)
        resid = act @ v + e - targets
        dpre = resid[:, None] * v * (1.0 - act * act)
        gW = dpre[:, :, None] * features[:, None, :]
        return np.concatenate(
            [gW.reshape(b, -1), dpre, resid[:, None] * act, resid[:, None]], axis=1
        )

    def mean_loss(self, x: np.ndarray, features: np.ndarray, targets: np.ndarray) -> float:
        return float(np.mean(self.losses(x, features, targets)))


def loss(obj: Objective, x: np.ndarray, s: Sample) -> float:
    return float(obj.losses(x, np.asarray(s.features, dtype=np.float64)[None, :], [s.target])[0])


def grad_sample(obj: Objective, x: np.ndarray, s: Sample) -> np.ndarray:
    return obj.per_sample_grads(x, np.asarray(s.features, dtype=np.float64)[None, :], [s.target])[0]


def grad_batch(obj: Objective, x: np.ndarray, batch: BatchLike) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(mean_grad, per_sample)`` for a non-empty batch.

    ``per_sample`` is a (b, param_dim) array; ``mean_grad`` is its row mean.
    """
    batch = as_batch(batch)
    if len(batch) == 0:
        raise UsageError("batch must contain at least one sample")
    per_sample = obj.per_sample_grads(x, batch.features, batch.targets)
    return per_sample.mean(axis=0), per_sample
