import numpy as np
import pytest

from adloco import kernels
from adloco.datagen import generate, stream
from adloco.objectives import Objective
from adloco.optim import InnerOptimizerState, inner_step

OBJECTIVES = [Objective("quadratic", 3), Objective("logistic", 3), Objective("mlp", 3, hidden=4)]
RECIPE = {"quadratic": "gaussian-quadratic", "logistic": "two-cluster", "mlp": "teacher-mlp"}


def reference_loop(obj, X, ds, idx, state):
    """One worker at a time, one micro-batch at a time, through the public optimizer."""
    X = X.copy()
    H, M = idx.shape[:2]
    for h in range(H):
        grads = np.empty_like(X)
        for w in range(M):
            micro = [obj.per_sample_grads(X[w], ds.features[rows], ds.targets[rows]).mean(axis=0) for rows in idx[h, w]]
            grads[w] = np.mean(micro, axis=0)
        X = inner_step(state, X, grads)
    return X


@pytest.mark.parametrize("obj", OBJECTIVES, ids=lambda o: o.kind)
@pytest.mark.parametrize("kind", ["sgd", "adamw"])
def test_numpy_path_matches_reference(obj, kind):
    ds = generate(RECIPE[obj.kind], 40, 3, 0)
    rng = stream(404, obj.code)
    X = 0.3 * rng.standard_normal((3, obj.param_dim))
    idx = rng.integers(0, 40, size=(4, 3, 2, 5))
    fast = kernels.inner_loop(obj, X, ds.features, ds.targets, idx, InnerOptimizerState(kind, 0.05, 0.1), use_numba=False)
    ref = reference_loop(obj, X, ds, idx, InnerOptimizerState(kind, 0.05, 0.1))
    np.testing.assert_allclose(fast, ref, rtol=1e-12, atol=1e-13)


@pytest.mark.skipif(kernels.numba is None, reason="numba not installed")
@pytest.mark.parametrize("obj", OBJECTIVES, ids=lambda o: o.kind)
@pytest.mark.parametrize("kind", ["sgd", "adamw"])
def test_numba_matches_numpy(obj, kind):
    ds = generate(RECIPE[obj.kind], 40, 3, 0)
    rng = stream(405, obj.code)
    X = 0.3 * rng.standard_normal((2, obj.param_dim))
    idx = rng.integers(0, 40, size=(6, 2, 3, 4))
    states = [InnerOptimizerState(kind, 0.05, 0.1) for _ in range(2)]
    a = kernels.inner_loop(obj, X, ds.features, ds.targets, idx, states[0], use_numba=True)
    b = kernels.inner_loop(obj, X, ds.features, ds.targets, idx, states[1], use_numba=False)
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)
    assert states[0].step == states[1].step == 6
    if kind == "adamw":
        np.testing.assert_allclose(states[0].m, states[1].m, rtol=0, atol=1e-12)
        np.testing.assert_allclose(states[0].v, states[1].v, rtol=0, atol=1e-12)


def test_input_stack_is_not_mutated():
    obj = OBJECTIVES[1]
    ds = generate("two-cluster", 20, 3, 0)
    X = np.ones((2, 3))
    kernels.inner_loop(obj, X, ds.features, ds.targets, np.zeros((2, 2, 1, 3), dtype=np.int64), InnerOptimizerState("sgd", 0.1))
    np.testing.assert_array_equal(X, np.ones((2, 3)))
