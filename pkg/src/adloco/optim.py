"""Inner (per-worker) and outer (per-trainer) optimizers.

Inner optimizer state is shaped like the parameters it updates, so a single
state can drive a stack of ``M`` worker replicas, shape ``(M, d)``, at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from adloco.errors import ConfigError, UsageError

INNER_KINDS = ("sgd", "adamw")
OUTER_KINDS = ("sgd", "nesterov")


@dataclass
class InnerOptimizerState:
    kind: str = "adamw"
    lr: float = 2e-5
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: np.ndarray | None = field(default=None, repr=False)
    v: np.ndarray | None = field(default=None, repr=False)
    step: int = 0

    def __post_init__(self):
        if self.kind not in INNER_KINDS:
            raise ConfigError(f"unknown inner optimizer {self.kind!r}")
        if self.lr <= 0:
            raise ConfigError("inner learning rate must be > 0")

    def ensure_moments(self, shape) -> None:
        if self.kind != "adamw":
            return
        if self.m is None:
            self.m = np.zeros(shape)
            self.v = np.zeros(shape)
        elif self.m.shape != tuple(shape):
            raise UsageError(f"optimizer moments have shape {self.m.shape}, parameters {shape}")

    def copy(self) -> "InnerOptimizerState":
        m = None if self.m is None else self.m.copy()
        v = None if self.v is None else self.v.copy()
        return InnerOptimizerState(
            self.kind, self.lr, self.weight_decay, self.beta1, self.beta2, self.eps, m, v, self.step
        )


@dataclass
class OuterOptimizerState:
    kind: str = "sgd"
    lr: float = 0.5
    momentum: float = 0.9
    buffer: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in OUTER_KINDS:
            raise ConfigError(f"unknown outer optimizer {self.kind!r}")
        if self.lr <= 0:
            raise ConfigError("outer learning rate must be > 0")


def inner_step(state: InnerOptimizerState, x: np.ndarray, g: np.ndarray) -> np.ndarray:
    """One update; returns new parameters and advances ``state``.

    AdamW follows the decoupled form: decay is applied to the parameters
    directly, then the bias-corrected Adam step.
    """
    x = np.asarray(x, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if x.shape != g.shape:
        raise UsageError(f"gradient shape {g.shape} does not match parameters {x.shape}")
    state.step += 1
    if state.kind == "sgd":
        return x - state.lr * g
    state.ensure_moments(x.shape)
    t = state.step
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * g
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * (g * g)
    m_hat = state.m / (1.0 - state.beta1**t)
    v_hat = state.v / (1.0 - state.beta2**t)
    x = x - state.lr * state.weight_decay * x
    return x - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


def outer_step(
    state: OuterOptimizerState,
    x_prev: np.ndarray,
    delta: np.ndarray,
    worker_mean: np.ndarray | None = None,
) -> np.ndarray:
    """Apply the averaged pseudo-gradient ``delta`` to ``x_prev``.

    With plain SGD the result is ``x_prev - lr * delta``. When the caller also
    passes the worker mean (so ``delta == x_prev - worker_mean``) the same
    point is computed as ``worker_mean + (1 - lr) * delta``, which returns the
    worker mean exactly for ``lr == 1``.
    """
    x_prev = np.asarray(x_prev, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    if x_prev.shape != delta.shape:
        raise UsageError(f"delta shape {delta.shape} does not match parameters {x_prev.shape}")
    if state.kind == "sgd":
        if worker_mean is not None:
            return worker_mean + (1.0 - state.lr) * delta
        return x_prev - state.lr * delta
    if state.buffer is None:
        state.buffer = np.zeros_like(x_prev)
    state.buffer = state.momentum * state.buffer + delta
    return x_prev - state.lr * (delta + state.momentum * state.buffer)
