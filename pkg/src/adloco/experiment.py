"""Experiment orchestration: variants x seeds, CSV export and JSON summaries."""

from __future__ import annotations

import csv
import io
import json
import logging
import os
from pathlib import Path

import numpy as np

from adloco import engine
from adloco.config import ExperimentSpec, RunConfig
from adloco.engine import RunMetrics

log = logging.getLogger(__name__)

CSV_COLUMNS = (
    "step", "trainer_id", "loss", "requested_batch", "accum_flag",
    "alive_trainers", "comm_step", "comm_cum",
)
OUT_ENV = "ADLOCO_OUT_DIR"


class ExperimentError(RuntimeError):
    pass


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def metrics_csv(metrics: RunMetrics) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in metrics.rows:
        writer.writerow(
            [
                r.step, r.trainer_id, repr(r.loss), r.requested_batch, int(r.accum_flag),
                r.alive_trainers, repr(r.comm_step), repr(r.comm_cum),
            ]
        )
    return buf.getvalue()


def write_csv(metrics: RunMetrics, path: str | Path) -> None:
    _atomic_write(Path(path), metrics_csv(metrics))


def read_csv(path: str | Path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def summarize(metrics: RunMetrics, target: float | None) -> dict:
    steps, c_target = (None, None) if target is None else engine.steps_to_target(metrics, target)
    cum = metrics.cumulative_comm()
    r2_log = r2_lin = None
    if len(cum) >= 10 and metrics.comm_total > 0:
        _, _, r2_log, r2_lin = engine.fit_log_growth(cum)
    return {
        "algorithm": metrics.config.algorithm,
        "final_loss": metrics.final_loss,
        "total_comm": metrics.comm_total,
        "target_loss": target,
        "steps_to_target": steps,
        "comm_to_target": c_target,
        "r2_log": r2_log,
        "r2_linear": r2_lin,
        "final_mean_batch": float(metrics.batch_curve()[-1]),
        "inner_updates_per_worker": metrics.inner_updates,
        "merges": [
            {"step": m.step, "merged": list(m.merged), "representative": m.representative, "pool_size": m.pool_size}
            for m in metrics.merges
        ],
    }


def baseline_target(cfg: RunConfig) -> float:
    """Final held-out loss of the single-trainer SGD baseline with the same seed."""
    return engine.run_sgd(cfg.replace(algorithm="sgd")).final_loss


def _baseline_key(cfg: RunConfig) -> RunConfig:
    # fields the SGD baseline ignores are normalised so variants share one baseline
    return cfg.replace(
        algorithm="sgd", adaptive=True, merging=True, switch_mode=True, merge_w=0,
        num_init_trainers=1, workers_per_trainer=1, threads=1,
    )


def resolve_out_dir(spec: ExperimentSpec, out: str | None = None) -> Path:
    return Path(out or os.environ.get(OUT_ENV) or spec.out_dir)


def run_experiment(
    spec: ExperimentSpec,
    out: str | None = None,
    variants: list[str] | None = None,
) -> int:
    """Run every variant for every seed, writing one CSV per run plus ``summary.json``.

    Returns 0 on success. Engine failures are re-raised as ``ExperimentError``
    naming the variant and seed.
    """
    out_dir = resolve_out_dir(spec, out) / spec.name
    names = variants or spec.variant_names()
    for name in names:
        if spec.variants and name not in spec.variants:
            raise ExperimentError(f"unknown variant {name!r}; known: {sorted(spec.variants)}")
    summary = {"name": spec.name, "seeds": list(spec.seeds), "runs": {}}
    targets: dict[RunConfig, float] = {}
    for seed in spec.seeds:
        for name in names:
            cfg = spec.config_for(name, seed) if spec.variants else spec.base.replace(seed=seed)
            key = _baseline_key(cfg)
            try:
                if key not in targets:
                    targets[key] = baseline_target(cfg)
                target = targets[key]
                metrics = engine.run(cfg)
            except Exception as exc:
                raise ExperimentError(f"run {name!r} seed {seed} failed: {exc}") from exc
            run_id = f"{name}_seed{seed}"
            write_csv(metrics, out_dir / f"{run_id}.csv")
            summary["runs"][run_id] = {"variant": name, "seed": seed, **summarize(metrics, target)}
            log.info("%s: final loss %.6f, C %.3f", run_id, metrics.final_loss, metrics.comm_total)
    summary["variants"] = _aggregate(summary["runs"], names)
    _atomic_write(out_dir / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return 0


def _aggregate(runs: dict, names: list[str]) -> dict:
    agg = {}
    for name in names:
        rows = [r for r in runs.values() if r["variant"] == name]
        reached = [r for r in rows if r["steps_to_target"] is not None]
        agg[name] = {
            "mean_final_loss": float(np.mean([r["final_loss"] for r in rows])),
            "mean_total_comm": float(np.mean([r["total_comm"] for r in rows])),
            "runs_reaching_target": len(reached),
            # per seed, in seed order; null where the target was never reached
            "steps_to_target": [r["steps_to_target"] for r in rows],
            "comm_to_target": [r["comm_to_target"] for r in rows],
        }
    return agg


COMPARE_VARIANTS = {
    "adloco": {"algorithm": "adloco"},
    "diloco": {"algorithm": "diloco"},
    "localsgd": {"algorithm": "localsgd"},
}

ABLATION_VARIANTS = {
    "full": {"algorithm": "adloco"},
    "no_adaptive": {"algorithm": "adloco", "adaptive": False},
    "no_merging": {"algorithm": "adloco", "merging": False},
    "no_switch": {"algorithm": "adloco", "switch_mode": False},
}


def with_variants(spec: ExperimentSpec, variants: dict, suffix: str) -> ExperimentSpec:
    return ExperimentSpec(
        name=f"{spec.name}-{suffix}", base=spec.base, variants=variants,
        seeds=spec.seeds, out_dir=spec.out_dir,
    )


def batch_growth(curves: list[np.ndarray]) -> dict:
    """Seed-averaged requested-batch curve and its non-decreasing fraction."""
    avg = np.mean(np.stack(curves), axis=0)
    steps = np.diff(avg)
    return {
        "mean_batch": avg.tolist(),
        "nondecreasing_fraction": float(np.mean(steps >= 0)),
        "growth_ratio": float(avg[-1] / avg[0]),
    }


def run_theory(spec: ExperimentSpec, out: str | None = None) -> dict:
    """Batch-growth and communication log-fit checks on norm-test AdLoCo runs."""
    out_dir = resolve_out_dir(spec, out) / f"{spec.name}-theory"
    curves, fits = [], {}
    for seed in spec.seeds:
        cfg = spec.base.replace(algorithm="adloco", batch_test="norm", seed=seed)
        metrics = engine.run(cfg)
        write_csv(metrics, out_dir / f"theory_seed{seed}.csv")
        curves.append(metrics.batch_curve())
        a, b, r2_log, r2_lin = engine.fit_log_growth(metrics.cumulative_comm())
        fits[str(seed)] = {"a": a, "b": b, "r2_log": r2_log, "r2_linear": r2_lin, "log_wins": r2_log >= r2_lin}
    report = {"batch_growth": batch_growth(curves), "log_fit": fits}
    _atomic_write(out_dir / "summary.json", json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report
