"""Outer-loop simulation of AdLoCo and its baselines, with communication accounting.

Every algorithm shares one round structure: each alive trainer copies its
model to ``M`` workers, the workers take ``H`` inner steps, and the trainer
applies an outer update from the averaged worker delta. Trainers only touch
their own state between barriers, so rounds may run trainers in threads
without changing any result.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from adloco import kernels
from adloco.config import RunConfig
from adloco.datagen import RECIPES, Dataset, generate, shard, stream
from adloco.errors import ConfigError, UsageError
from adloco.objectives import Objective
from adloco.optim import InnerOptimizerState, OuterOptimizerState, outer_step
from adloco.pool import AccumulationPlan, PoolState, TrainerState, check_merge, do_merge, plan_batch
from adloco.scheduler import decide

# upper bound on sampled indices held in memory per draw
MAX_DRAW = 1 << 21


@dataclass(frozen=True)
class MetricsRow:
    step: int
    trainer_id: int
    loss: float
    requested_batch: int
    accum_flag: bool
    alive_trainers: int
    comm_step: float
    comm_cum: float


@dataclass(frozen=True)
class MergeEvent:
    step: int
    merged: tuple[int, ...]
    representative: int
    pool_size: int


@dataclass
class RunMetrics:
    config: RunConfig
    rows: list[MetricsRow] = field(default_factory=list)
    merges: list[MergeEvent] = field(default_factory=list)
    comm_steps: list[float] = field(default_factory=list)
    comm_total: float = 0.0
    wall_clock: list[float] = field(default_factory=list)
    inner_updates: int = 0
    final_params: dict[int, np.ndarray] = field(default_factory=dict)
    # worker models of each trainer's last round (post-averaging for LocalSGD)
    final_workers: dict[int, np.ndarray] = field(default_factory=dict)
    diagnostics: list[dict] = field(default_factory=list)

    def steps(self) -> list[int]:
        return sorted({r.step for r in self.rows})

    def at(self, step: int) -> list[MetricsRow]:
        return [r for r in self.rows if r.step == step]

    def loss_curve(self) -> np.ndarray:
        """Mean held-out loss over alive trainers, one entry per step (0..T)."""
        return np.array([np.mean([r.loss for r in self.at(s)]) for s in self.steps()])

    def batch_curve(self) -> np.ndarray:
        """Mean requested batch over alive trainers, one entry per step (0..T)."""
        return np.array([np.mean([r.requested_batch for r in self.at(s)]) for s in self.steps()])

    def cumulative_comm(self) -> np.ndarray:
        return np.cumsum(self.comm_steps)

    @property
    def final_loss(self) -> float:
        return float(self.loss_curve()[-1])


def account_communication(metrics: RunMetrics, step: int, pool: PoolState) -> float:
    """Charge one synchronisation: ``sum over alive trainers of b_max / requested``."""
    units = sum(pool.b_max / t.requested_batch for t in pool.alive())
    metrics.comm_steps.append(units)
    metrics.comm_total += units
    return units


def fit_log_growth(cum_c) -> tuple[float, float, float, float]:
    """Least-squares fits ``C ~ a ln(N + 1) + b`` and ``C ~ a N + b``.

    ``N`` is the 0-based position in ``cum_c``. Returns ``(a, b, r2_log,
    r2_linear)`` where ``a, b`` belong to the logarithmic fit. A constant
    sequence has both coefficients of determination set to 0.
    """
    y = np.asarray(cum_c, dtype=np.float64)
    if y.ndim != 1 or len(y) < 10:
        raise UsageError("fit_log_growth needs a sequence of at least 10 values")
    n = np.arange(len(y), dtype=np.float64)
    ss_tot = float(np.sum((y - y.mean()) ** 2))

    def fit(x):
        A = np.column_stack([x, np.ones_like(x)])
        coef, *_ = np.linalg.lstsq(A, y, rcond=None)
        resid = y - A @ coef
        r2 = 0.0 if ss_tot == 0.0 else 1.0 - float(resid @ resid) / ss_tot
        return coef, r2

    (a, b), r2_log = fit(np.log(n + 1.0))
    _, r2_lin = fit(n)
    return float(a), float(b), r2_log, r2_lin


def steps_to_target(metrics: RunMetrics, target: float) -> tuple[int | None, float | None]:
    """First step whose mean loss is <= target, and the cumulative C spent by then."""
    cum = np.concatenate([[0.0], metrics.cumulative_comm()])
    for i, value in enumerate(metrics.loss_curve()):
        if value <= target:
            return metrics.steps()[i], float(cum[i])
    return None, None


# -- setup ---------------------------------------------------------------------


class Simulation:
    """Shared state for one run: data, objective, evaluation batch, trainers."""

    def __init__(self, cfg: RunConfig, k: int, workers: int, inner_kind: str):
        self.cfg = cfg
        self.data: Dataset = generate(cfg.recipe, cfg.n_samples, cfg.dim, cfg.data_seed, cfg.data_scale)
        self.objective = Objective(RECIPES[cfg.recipe], cfg.dim, cfg.hidden)
        eval_rng = stream(cfg.seed, 0xE7A1)
        eval_idx = eval_rng.choice(len(self.data), size=min(cfg.eval_size, len(self.data)), replace=False)
        self.eval_batch = self.data.take(np.sort(eval_idx))
        shards = shard(self.data, k, cfg.shard_fraction_for(k), cfg.seed)
        trainers = []
        for tid in range(k):
            x0 = self.objective.init_params(stream(cfg.seed, 0x1417, tid), cfg.init_scale)
            trainers.append(
                TrainerState(
                    id=tid,
                    params=x0,
                    requested_batch=cfg.initial_batch_size,
                    shard=shards[tid],
                    inner_opt=InnerOptimizerState(
                        inner_kind, cfg.lr_inner,
                        cfg.weight_decay if inner_kind == "adamw" else 0.0,
                    ),
                    outer_opt=OuterOptimizerState(cfg.outer_opt, cfg.lr_outer, cfg.outer_momentum),
                    workers=workers,
                )
            )
        self.pool = PoolState(
            trainers, merge_w=cfg.merge_w, merge_frequency=cfg.merge_frequency,
            n_switch=cfg.n_switch, b_max=cfg.b_max,
        )

    def loss(self, x: np.ndarray) -> float:
        return self.objective.mean_loss(x, *self.eval_batch)

    def local_round(self, trainer: TrainerState, plan: AccumulationPlan, H: int) -> tuple[np.ndarray, np.ndarray]:
        """H inner steps on the trainer's workers. Returns final worker stack and final-step rows."""
        M = trainer.workers
        X = np.tile(trainer.params, (M, 1))
        per_step = M * plan.accum_steps * plan.micro_batch
        chunk = max(1, min(H, MAX_DRAW // per_step))
        done, last = 0, None
        while done < H:
            h = min(chunk, H - done)
            idx = trainer.shard.draw((h, M, plan.accum_steps, plan.micro_batch))
            X = kernels.inner_loop(self.objective, X, self.data.features, self.data.targets, idx, trainer.inner_opt)
            last = idx[-1]
            done += h
        return X, last.reshape(-1)


def _initial_rows(sim: Simulation, metrics: RunMetrics) -> None:
    alive = sim.pool.alive()
    for t in alive:
        metrics.rows.append(
            MetricsRow(0, t.id, sim.loss(t.params), t.requested_batch, False, len(alive), 0.0, 0.0)
        )


def _check_algorithm(cfg: RunConfig, *expected: str) -> None:
    if cfg.algorithm not in expected:
        raise ConfigError(f"config algorithm is {cfg.algorithm!r}, expected one of {expected}")


# -- DiLoCo core (AdLoCo and fixed-batch DiLoCo) ----------------------------------


def _run_outer(cfg: RunConfig, adaptive: bool, merging: bool, switch: bool) -> RunMetrics:
    sim = Simulation(cfg, cfg.num_init_trainers, cfg.workers_per_trainer, cfg.inner_opt)
    pool = sim.pool
    metrics = RunMetrics(cfg)
    _initial_rows(sim, metrics)
    H = cfg.num_inner_steps

    def work(trainer: TrainerState, plan: AccumulationPlan):
        X, rows = sim.local_round(trainer, plan, H)
        metrics.final_workers[trainer.id] = X
        worker_mean = X.mean(axis=0)
        delta = trainer.params - worker_mean
        trainer.params = outer_step(trainer.outer_opt, trainer.params, delta, worker_mean)
        decision = None
        if adaptive:
            per_sample = sim.objective.per_sample_grads(
                trainer.params, sim.data.features[rows], sim.data.targets[rows]
            )
            decision = decide(
                cfg.batch_test, per_sample, eta=cfg.eta, theta=cfg.theta, nu=cfg.nu, cap=cfg.batch_cap
            )
        return decision

    executor = ThreadPoolExecutor(cfg.threads) if cfg.threads > 1 else None
    try:
        for t in range(1, cfg.num_outer_steps + 1):
            started = time.perf_counter()
            if merging and len(pool.alive()) > 1 and t % cfg.merge_frequency == 0:
                chosen = check_merge(pool.requested(), cfg.merge_w)
                if len(chosen) >= 2:
                    do_merge(pool, chosen)
                    rep = next(tr for tr in pool.alive() if tr.id in chosen)
                    metrics.merges.append(MergeEvent(t, tuple(sorted(chosen)), rep.id, len(pool.alive())))
            alive = pool.alive()
            plans = {}
            for tr in alive:
                if switch:
                    plans[tr.id] = plan_batch(tr.requested_batch, cfg.b_max, cfg.n_switch)
                else:
                    plans[tr.id] = AccumulationPlan(False, 1, min(tr.requested_batch, cfg.b_max))
            comm = account_communication(metrics, t, pool)
            if executor is None:
                decisions = [work(tr, plans[tr.id]) for tr in alive]
            else:
                decisions = list(executor.map(lambda tr: work(tr, plans[tr.id]), alive))
            metrics.inner_updates += H
            for tr, decision in zip(alive, decisions):
                if decision is not None:
                    tr.requested_batch = decision.requested
                    metrics.diagnostics.append(
                        {
                            "step": t,
                            "trainer_id": tr.id,
                            "grad_norm_sq": decision.diagnostics.grad_norm_sq,
                            "variance_trace": decision.diagnostics.variance_trace,
                            "requested": decision.requested,
                        }
                    )
                metrics.rows.append(
                    MetricsRow(
                        t, tr.id, sim.loss(tr.params), tr.requested_batch,
                        plans[tr.id].use_accumulation, len(alive), comm, metrics.comm_total,
                    )
                )
            metrics.wall_clock.append(time.perf_counter() - started)
    finally:
        if executor is not None:
            executor.shutdown()
    metrics.final_params = {tr.id: tr.params.copy() for tr in pool.alive()}
    return metrics


def run_adloco(cfg: RunConfig) -> RunMetrics:
    """Adaptive batching, merging and switch mode on a DiLoCo core; each feature
    can be disabled through ``cfg.adaptive``, ``cfg.merging`` and ``cfg.switch_mode``."""
    _check_algorithm(cfg, "adloco")
    return _run_outer(cfg, cfg.adaptive, cfg.merging, cfg.switch_mode)


def run_diloco(cfg: RunConfig) -> RunMetrics:
    """Fixed-batch DiLoCo: every feature off, batch stays ``initial_batch_size``."""
    _check_algorithm(cfg, "diloco")
    return _run_outer(cfg, adaptive=False, merging=False, switch=False)


# -- LocalSGD and single-trainer SGD -------------------------------------------------


def run_localsgd(cfg: RunConfig) -> RunMetrics:
    """Workers take plain SGD steps; every H steps all worker models are replaced
    by their average. Trainers never merge and the batch is fixed."""
    _check_algorithm(cfg, "localsgd")
    sim = Simulation(cfg, cfg.num_init_trainers, cfg.workers_per_trainer, "sgd")
    pool = sim.pool
    metrics = RunMetrics(cfg)
    _initial_rows(sim, metrics)
    plan = AccumulationPlan(False, 1, min(cfg.initial_batch_size, cfg.b_max))
    for t in range(1, cfg.num_outer_steps + 1):
        started = time.perf_counter()
        alive = pool.alive()
        comm = account_communication(metrics, t, pool)
        for tr in alive:
            X, _ = sim.local_round(tr, plan, cfg.num_inner_steps)
            X[:] = X.mean(axis=0)
            tr.params = X[0].copy()
            metrics.final_workers[tr.id] = X
        metrics.inner_updates += cfg.num_inner_steps
        for tr in alive:
            metrics.rows.append(
                MetricsRow(t, tr.id, sim.loss(tr.params), tr.requested_batch, False, len(alive), comm, metrics.comm_total)
            )
        metrics.wall_clock.append(time.perf_counter() - started)
    metrics.final_params = {tr.id: tr.params.copy() for tr in pool.alive()}
    return metrics


def run_sgd(cfg: RunConfig) -> RunMetrics:
    """One trainer, one worker, ``T * H`` inner-optimizer steps at the fixed batch.

    Rows are logged every H steps so curves line up with the outer-step
    algorithms. No synchronisation happens, so no communication is charged.
    """
    _check_algorithm(cfg, "sgd")
    sim = Simulation(cfg, 1, 1, cfg.inner_opt)
    tr = sim.pool.trainers[0]
    metrics = RunMetrics(cfg)
    _initial_rows(sim, metrics)
    plan = AccumulationPlan(False, 1, min(cfg.initial_batch_size, cfg.b_max))
    for t in range(1, cfg.num_outer_steps + 1):
        started = time.perf_counter()
        X, _ = sim.local_round(tr, plan, cfg.num_inner_steps)
        tr.params = X[0].copy()
        metrics.inner_updates += cfg.num_inner_steps
        metrics.comm_steps.append(0.0)
        metrics.rows.append(MetricsRow(t, tr.id, sim.loss(tr.params), tr.requested_batch, False, 1, 0.0, 0.0))
        metrics.wall_clock.append(time.perf_counter() - started)
    metrics.final_params = {tr.id: tr.params.copy()}
    return metrics


RUNNERS = {"adloco": run_adloco, "diloco": run_diloco, "localsgd": run_localsgd, "sgd": run_sgd}


def run(cfg: RunConfig) -> RunMetrics:
    return RUNNERS[cfg.algorithm](cfg)
