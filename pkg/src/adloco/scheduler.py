"""Adaptive batch-size tests driven by per-sample gradient statistics.

Vector variances are the trace of the unbiased sample covariance, i.e.
``sum_i ||g_i - mean||^2 / (b - 1)``.  The full-data gradient norm in each
test is replaced by the batch estimate ``||mean_grad||``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from adloco.errors import ConfigError, UsageError

DEFAULT_CAP = 2**16
ZERO_GRAD_NORM_SQ = 1e-24
TESTS = ("norm", "inner_product", "augmented")


@dataclass(frozen=True)
class GradientStats:
    mean_grad: np.ndarray
    grad_norm_sq: float
    variance_trace: float
    inner_products: np.ndarray
    batch_size_used: int
    degenerate: bool = False


@dataclass(frozen=True)
class BatchDecision:
    requested: int
    test_used: str
    diagnostics: GradientStats


def compute_stats(per_sample: np.ndarray) -> GradientStats:
    per_sample = np.atleast_2d(np.asarray(per_sample, dtype=np.float64))
    b = per_sample.shape[0]
    if b == 0:
        raise UsageError("need at least one per-sample gradient")
    mean = per_sample.mean(axis=0)
    inner = per_sample @ mean
    if b < 2:
        return GradientStats(mean, float(mean @ mean), 0.0, inner, b, degenerate=True)
    dev = per_sample - mean
    var = float(np.einsum("ij,ij->", dev, dev)) / (b - 1)
    return GradientStats(mean, float(mean @ mean), var, inner, b)


def _clamp(value: float, cap: int) -> int:
    if value >= cap:
        return cap
    return max(1, math.ceil(value))


def _check_rate(name: str, value: float) -> None:
    if not value > 0:
        raise ConfigError(f"{name} must be > 0, got {value}")


def norm_test_batch(stats: GradientStats, eta: float, cap: int = DEFAULT_CAP) -> int:
    """``ceil(variance / (eta^2 ||g||^2))`` clamped to ``[1, cap]``."""
    _check_rate("eta", eta)
    if stats.variance_trace == 0.0:
        return 1
    if stats.grad_norm_sq < ZERO_GRAD_NORM_SQ:
        return cap
    return _clamp(stats.variance_trace / (eta**2 * stats.grad_norm_sq), cap)


def inner_product_test_batch(stats: GradientStats, theta: float, cap: int = DEFAULT_CAP) -> int:
    """``ceil(Var_i <g_i, g> / (theta^2 ||g||^4))`` clamped to ``[1, cap]``."""
    _check_rate("theta", theta)
    if stats.degenerate:
        raise UsageError("inner-product test needs at least two per-sample gradients")
    ip_var = float(np.var(stats.inner_products, ddof=1))
    if ip_var == 0.0:
        return 1
    if stats.grad_norm_sq < ZERO_GRAD_NORM_SQ:
        return cap
    return _clamp(ip_var / (theta**2 * stats.grad_norm_sq**2), cap)


def orthogonal_variance(stats: GradientStats, per_sample: np.ndarray) -> float:
    """Variance trace of the per-sample components orthogonal to the mean gradient."""
    per_sample = np.asarray(per_sample, dtype=np.float64)
    coef = stats.inner_products / stats.grad_norm_sq
    resid = per_sample - coef[:, None] * stats.mean_grad
    dev = resid - resid.mean(axis=0)
    return float(np.einsum("ij,ij->", dev, dev)) / (len(per_sample) - 1)


def augmented_test_batch(
    stats: GradientStats,
    per_sample: np.ndarray,
    base: int,
    nu: float,
    cap: int = DEFAULT_CAP,
) -> int:
    """``max(base, ceil(orthogonal variance / (nu^2 ||g||^2)))`` clamped to ``[1, cap]``."""
    _check_rate("nu", nu)
    if stats.degenerate:
        raise UsageError("augmented test needs at least two per-sample gradients")
    if stats.grad_norm_sq < ZERO_GRAD_NORM_SQ:
        return cap
    ortho = orthogonal_variance(stats, per_sample)
    if ortho == 0.0:
        return min(max(base, 1), cap)
    return min(max(base, _clamp(ortho / (nu**2 * stats.grad_norm_sq), cap)), cap)


def decide(
    test: str,
    per_sample: np.ndarray,
    *,
    eta: float,
    theta: float,
    nu: float,
    cap: int = DEFAULT_CAP,
) -> BatchDecision | None:
    """Run the chosen test on a set of per-sample gradients.

    Returns ``None`` for a degenerate (single-gradient) batch: there is no
    variance estimate, so the caller keeps its current batch size.
    """
    if test not in TESTS:
        raise ConfigError(f"unknown batch test {test!r}; expected one of {TESTS}")
    stats = compute_stats(per_sample)
    if stats.degenerate:
        return None
    if test == "norm":
        requested = norm_test_batch(stats, eta, cap)
    else:
        requested = inner_product_test_batch(stats, theta, cap)
        if test == "augmented":
            requested = augmented_test_batch(stats, per_sample, requested, nu, cap)
    return BatchDecision(requested, test, stats)
