"""Quick oracle and invariant checks runnable from an installed package.

Each check compares a module against an independent recomputation
(finite differences, pure-Python loops, closed forms). ``run_all`` returns
0 only if every check passes.
"""

from __future__ import annotations

import math

import numpy as np

from adloco import engine, kernels
from adloco.config import RunConfig
from adloco.datagen import generate, shard, stream
from adloco.objectives import Objective
from adloco.optim import InnerOptimizerState, OuterOptimizerState, outer_step
from adloco.pool import PoolState, TrainerState, check_merge, do_merge, plan_batch
from adloco.scheduler import compute_stats, inner_product_test_batch, norm_test_batch


def _objectives():
    return [Objective("quadratic", 3), Objective("logistic", 3), Objective("mlp", 3, hidden=4)]


def check_gradients() -> bool:
    rng = stream(11, 1)
    for obj in _objectives():
        for _ in range(20):
            x = rng.standard_normal(obj.param_dim)
            a = rng.standard_normal((1, obj.input_dim))
            y = np.array([float(rng.integers(0, 2))])
            g = obj.per_sample_grads(x, a, y)[0]
            fd = np.empty_like(x)
            for j in range(len(x)):
                e = np.zeros_like(x)
                e[j] = 1e-5
                fd[j] = (obj.losses(x + e, a, y)[0] - obj.losses(x - e, a, y)[0]) / 2e-5
            if np.linalg.norm(g - fd) > 1e-6 * max(np.linalg.norm(fd), 1e-12) + 1e-9:
                return False
    return True


def check_scheduler() -> bool:
    rng = stream(11, 2)
    for _ in range(20):
        b, d = int(rng.integers(2, 9)), int(rng.integers(1, 5))
        G = rng.standard_normal((b, d)).tolist()
        mean = [sum(row[j] for row in G) / b for j in range(d)]
        norm_sq = sum(m * m for m in mean)
        var = sum(sum((row[j] - mean[j]) ** 2 for j in range(d)) for row in G) / (b - 1)
        ips = [sum(row[j] * mean[j] for j in range(d)) for row in G]
        ip_mean = sum(ips) / b
        ip_var = sum((v - ip_mean) ** 2 for v in ips) / (b - 1)
        stats = compute_stats(np.array(G))
        if norm_test_batch(stats, 0.8) != min(2**16, max(1, math.ceil(var / (0.64 * norm_sq)))):
            return False
        if inner_product_test_batch(stats, 0.5) != min(2**16, max(1, math.ceil(ip_var / (0.25 * norm_sq**2)))):
            return False
    return True


def check_merge_algebra() -> bool:
    if check_merge({1: 5, 2: 2, 3: 9, 4: 2}, 2) != {2, 4}:
        return False
    rng = stream(11, 3)
    ds = generate("gaussian-quadratic", 8, 2, 0)
    trainers = [
        TrainerState(i, rng.standard_normal(2), int(rng.integers(1, 10)), sh, InnerOptimizerState(), OuterOptimizerState())
        for i, sh in enumerate(shard(ds, 4, 0.5, 0))
    ]
    pool = PoolState(trainers)
    weights = {t.id: t.requested_batch for t in trainers}
    before = sum(weights[t.id] * t.params for t in trainers)
    do_merge(pool, {0, 1, 2, 3})
    (rep,) = pool.alive()
    return bool(np.allclose(before, sum(weights.values()) * rep.params, atol=1e-12, rtol=0))


def check_switch_table() -> bool:
    table = {5: (False, 1, 4), 9: (True, 3, 4), 8: (False, 1, 4)}
    for requested, expected in table.items():
        plan = plan_batch(requested, 4, 2)
        if (plan.use_accumulation, plan.accum_steps, plan.micro_batch) != expected:
            return False
    return True


def check_reductions() -> bool:
    cfg = RunConfig(
        num_outer_steps=4, num_inner_steps=1, workers_per_trainer=1, num_init_trainers=1,
        adaptive=False, merging=False, switch_mode=False, lr_outer=1.0, n_samples=64, dim=3,
        initial_batch_size=4, lr_inner=0.05,
    )
    a = engine.run(cfg)
    s = engine.run(cfg.replace(algorithm="sgd"))
    if not np.array_equal(a.final_params[0], s.final_params[0]):
        return False
    d = engine.run(cfg.replace(algorithm="diloco", num_init_trainers=2, workers_per_trainer=2, num_inner_steps=3))
    a2 = engine.run(cfg.replace(num_init_trainers=2, workers_per_trainer=2, num_inner_steps=3))
    return [r.loss for r in d.rows] == [r.loss for r in a2.rows]


def check_federated_average() -> bool:
    rng = stream(11, 4)
    for _ in range(10):
        xs = rng.standard_normal((3, 5))
        prev = rng.standard_normal(5)
        mean = xs.mean(axis=0)
        out = outer_step(OuterOptimizerState("sgd", 1.0), prev, prev - mean, mean)
        if np.max(np.abs(out - mean)) > 1e-12:
            return False
    return True


def check_kernels() -> bool:
    if not kernels.USE_NUMBA:
        return True
    rng = stream(11, 5)
    ds = generate("two-cluster", 32, 3, 0)
    for obj in _objectives():
        X = rng.standard_normal((2, obj.param_dim))
        idx = rng.integers(0, 32, size=(3, 2, 2, 4))
        out = []
        for use in (True, False):
            state = InnerOptimizerState("adamw", 0.01, 0.1)
            out.append(kernels.inner_loop(obj, X, ds.features, ds.targets, idx, state, use_numba=use))
        if np.max(np.abs(out[0] - out[1])) > 1e-12:
            return False
    return True


CHECKS = {
    "gradients vs finite differences": check_gradients,
    "batch tests vs brute force": check_scheduler,
    "merge algebra": check_merge_algebra,
    "switch-mode table": check_switch_table,
    "reduction identities": check_reductions,
    "federated averaging identity": check_federated_average,
    "numba kernel vs numpy path": check_kernels,
}


def run_all(verbose: bool = False) -> int:
    failed = 0
    for name, check in CHECKS.items():
        try:
            ok = check()
        except Exception as exc:  # a crashing check is a failing check
            ok = False
            if verbose:
                print(f"  {name}: raised {exc!r}")
        failed += not ok
        if verbose:
            print(f"{'PASS' if ok else 'FAIL'}  {name}")
    return 1 if failed else 0
