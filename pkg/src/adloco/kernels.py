"""Inner-loop kernels: H local steps for a stack of worker replicas.

Two interchangeable implementations share one entry point, ``inner_loop``:

* a numba ``@njit`` kernel that fuses gradient evaluation and the optimizer
  update per worker, releasing the GIL so trainers can run in threads;
* a pure-numpy path that vectorises each step across workers.

Set ``ADLOCO_DISABLE_NUMBA=1`` (or leave numba uninstalled) to force the
numpy path. Within one path results are deterministic; the two paths agree
to rounding error, not bit for bit.
"""

from __future__ import annotations

import math
import os

import numpy as np

from adloco.objectives import Objective
from adloco.optim import InnerOptimizerState, inner_step

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

NUMBA_DISABLED = os.environ.get("ADLOCO_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")
USE_NUMBA = numba is not None and not NUMBA_DISABLED

_QUAD, _LOGIT, _MLP = 0, 1, 2
_SGD, _ADAMW = 0, 1
# entries per count-matrix block in the numpy quadratic path
COUNT_BLOCK = 1 << 22


# -- numpy path ---------------------------------------------------------------


def batch_grads_numpy(obj: Objective, X: np.ndarray, F: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Accumulated gradient per worker.

    ``X`` is (M, p); ``F`` is (M, A, B, d) and ``Y`` is (M, A, B): ``A``
    micro-batches of ``B`` samples per worker. Each micro-batch gradient is a
    sample mean; the result is the mean over micro-batches, shape (M, p).
    """
    M, A, B = Y.shape
    if obj.kind == "quadratic":
        micro = X[:, None, :] - F.sum(axis=2) / B
    elif obj.kind == "logistic":
        z = np.einsum("mabd,md->mab", F, X)
        p = 0.5 * (1.0 + np.tanh(0.5 * z))
        micro = np.einsum("mab,mabd->mad", p - Y, F) / B
    else:
        micro = np.empty((M, A, X.shape[1]))
        for w in range(M):
            for a in range(A):
                micro[w, a] = obj.per_sample_grads(X[w], F[w, a], Y[w, a]).sum(axis=0) / B
    return micro.sum(axis=1) / A


def _sample_means(features: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Mean sampled row per (step, worker), via count matrix @ features.

    Avoids materialising ``features[idx]``, which dominates for large batches.
    """
    H, M = idx.shape[:2]
    n = len(features)
    flat = idx.reshape(H * M, -1)
    out = np.empty((H * M, features.shape[1]))
    rows = max(1, COUNT_BLOCK // n)
    for lo in range(0, H * M, rows):
        block = flat[lo : lo + rows]
        keys = (np.arange(len(block))[:, None] * n + block).ravel()
        counts = np.bincount(keys, minlength=len(block) * n).reshape(len(block), n)
        out[lo : lo + rows] = counts.astype(np.float64) @ features
    return (out / flat.shape[1]).reshape(H, M, -1)


def _inner_loop_numpy(obj, X, features, targets, idx, state):
    if obj.kind == "quadratic":
        # gradient is x minus the mean sampled row, so only row means are needed
        for mean_rows in _sample_means(features, idx):
            X = inner_step(state, X, X - mean_rows)
        return X
    for step_idx in idx:
        G = batch_grads_numpy(obj, X, features[step_idx], targets[step_idx])
        X = inner_step(state, X, G)
    return X


# -- numba path ---------------------------------------------------------------

if numba is not None:

    @numba.njit(cache=True, nogil=True)
    def _sigmoid(z):
        return 0.5 * (1.0 + math.tanh(0.5 * z))

    @numba.njit(cache=True, nogil=True)
    def _accumulate_grad(code, hidden, x, F, Y, rows, g, scratch):
        # adds sum over rows of per-sample gradients into g
        din = F.shape[1]
        if code == _QUAD:
            for r in rows:
                for j in range(din):
                    g[j] += x[j] - F[r, j]
        elif code == _LOGIT:
            for r in rows:
                z = 0.0
                for j in range(din):
                    z += F[r, j] * x[j]
                coef = _sigmoid(z) - Y[r]
                for j in range(din):
                    g[j] += coef * F[r, j]
        else:
            h = hidden
            off_c = h * din
            off_v = off_c + h
            last = off_v + h
            for r in rows:
                out = x[last]
                for k in range(h):
                    pre = x[off_c + k]
                    for j in range(din):
                        pre += x[k * din + j] * F[r, j]
                    scratch[k] = math.tanh(pre)
                    out += x[off_v + k] * scratch[k]
                resid = out - Y[r]
                for k in range(h):
                    act = scratch[k]
                    dpre = resid * x[off_v + k] * (1.0 - act * act)
                    for j in range(din):
                        g[k * din + j] += dpre * F[r, j]
                    g[off_c + k] += dpre
                    g[off_v + k] += resid * act
                g[last] += resid

    @numba.njit(cache=True, nogil=True)
    def _inner_loop_numba(code, hidden, X, F, Y, idx, opt, lr, wd, b1, b2, eps, m, v, step0):
        H, M, A, B = idx.shape
        p = X.shape[1]
        g = np.empty(p)
        micro = np.empty(p)
        scratch = np.empty(max(hidden, 1))
        for s in range(H):
            t = step0 + s + 1
            c1 = 1.0 - b1**t
            c2 = 1.0 - b2**t
            for w in range(M):
                x = X[w]
                g[:] = 0.0
                for a in range(A):
                    micro[:] = 0.0
                    _accumulate_grad(code, hidden, x, F, Y, idx[s, w, a], micro, scratch)
                    for j in range(p):
                        g[j] += micro[j] / B
                for j in range(p):
                    gj = g[j] / A
                    if opt == _SGD:
                        x[j] = x[j] - lr * gj
                    else:
                        m[w, j] = b1 * m[w, j] + (1.0 - b1) * gj
                        v[w, j] = b2 * v[w, j] + (1.0 - b2) * (gj * gj)
                        xj = x[j] - lr * wd * x[j]
                        x[j] = xj - lr * (m[w, j] / c1) / (math.sqrt(v[w, j] / c2) + eps)


def inner_loop(
    obj: Objective,
    X: np.ndarray,
    features: np.ndarray,
    targets: np.ndarray,
    idx: np.ndarray,
    state: InnerOptimizerState,
    use_numba: bool | None = None,
) -> np.ndarray:
    """Run ``idx.shape[0]`` inner steps on worker stack ``X`` (M, p).

    ``idx`` holds dataset row indices, shape (H, M, A, B). Returns the new
    stack; ``state`` is advanced by H steps.
    """
    if use_numba is None:
        use_numba = USE_NUMBA
    X = np.array(X, dtype=np.float64, order="C")
    state.ensure_moments(X.shape)
    if not use_numba:
        return _inner_loop_numpy(obj, X, features, targets, idx, state)
    if state.kind == "adamw":
        m, v, opt = state.m, state.v, _ADAMW
    else:
        m = v = np.zeros((1, 1))
        opt = _SGD
    _inner_loop_numba(
        obj.code, obj.hidden, X, features, targets, np.ascontiguousarray(idx, dtype=np.int64),
        opt, state.lr, state.weight_decay, state.beta1, state.beta2, state.eps, m, v, state.step,
    )
    state.step += idx.shape[0]
    return X
