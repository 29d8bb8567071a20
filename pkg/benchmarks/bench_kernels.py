"""Time the numba inner-loop kernel against the pure-numpy path.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Reports the best of ``--repeat`` timings for the kernel alone (per loss family
and batch size) and for whole engine runs. The first numba call compiles or
loads the on-disk cache, so it is excluded from the timings.
"""

from __future__ import annotations

import argparse
import time

from adloco import engine, kernels
from adloco.config import RunConfig
from adloco.datagen import generate, stream
from adloco.objectives import Objective
from adloco.optim import InnerOptimizerState

FAMILIES = {
    "quadratic": ("gaussian-quadratic", Objective("quadratic", 50)),
    "logistic": ("two-cluster", Objective("logistic", 50)),
    "mlp": ("teacher-mlp", Objective("mlp", 50, hidden=8)),
}
RUNS = {
    "logistic defaults": RunConfig(),
    "quadratic d=200, T=40": RunConfig(recipe="gaussian-quadratic", dim=200, num_outer_steps=40),
    "mlp, T=10": RunConfig(recipe="teacher-mlp", num_outer_steps=10),
}


def best_of(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def bench_kernel(repeat: int) -> None:
    print(f"{'kernel':<12}{'batch':>7}{'numba s':>11}{'numpy s':>11}{'speedup':>9}")
    for name, (recipe, obj) in FAMILIES.items():
        ds = generate(recipe, 4096, obj.input_dim, 0)
        rng = stream(0)
        X = 0.01 * rng.standard_normal((4, obj.param_dim))
        for batch in (1, 32, 512):
            idx = rng.integers(0, 4096, size=(50, 4, 1, batch))

            def call(use):
                kernels.inner_loop(obj, X, ds.features, ds.targets, idx, InnerOptimizerState("adamw", 1e-3, 0.1), use)

            call(True)  # compile / load cache
            fast = best_of(lambda: call(True), repeat)
            slow = best_of(lambda: call(False), repeat)
            print(f"{name:<12}{batch:>7}{fast:>11.4f}{slow:>11.4f}{slow / fast:>8.1f}x")


def bench_runs(repeat: int) -> None:
    print(f"\n{'run':<24}{'numba s':>11}{'numpy s':>11}{'speedup':>9}")
    saved = kernels.USE_NUMBA
    try:
        for name, cfg in RUNS.items():
            kernels.USE_NUMBA = True
            engine.run(cfg.replace(num_outer_steps=1))
            fast = best_of(lambda: engine.run(cfg), repeat)
            kernels.USE_NUMBA = False
            slow = best_of(lambda: engine.run(cfg), max(1, repeat // 2))
            print(f"{name:<24}{fast:>11.3f}{slow:>11.3f}{slow / fast:>8.1f}x")
    finally:
        kernels.USE_NUMBA = saved


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    if kernels.numba is None:
        raise SystemExit("numba is not installed; nothing to compare")
    bench_kernel(args.repeat)
    bench_runs(args.repeat)


if __name__ == "__main__":
    main()
