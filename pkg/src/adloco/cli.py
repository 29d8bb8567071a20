"""Command-line entry point: ``adloco {run,compare,ablate,theory,selftest}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from adloco.config import ExperimentSpec, load_config, parse_seeds
from adloco.errors import ConfigError
from adloco.experiment import (
    ABLATION_VARIANTS,
    COMPARE_VARIANTS,
    ExperimentError,
    resolve_out_dir,
    run_experiment,
    run_theory,
    with_variants,
)


def _load(args) -> ExperimentSpec:
    path = args.config_opt or args.config
    spec = load_config(path) if path else ExperimentSpec()
    if args.seeds:
        spec = ExperimentSpec(spec.name, spec.base, spec.variants, parse_seeds(args.seeds), spec.out_dir)
    return spec


def _variants(args) -> list[str] | None:
    return args.variant or None


def cmd_run(args) -> int:
    spec = _load(args)
    status = run_experiment(spec, args.out, _variants(args))
    print(f"wrote {resolve_out_dir(spec, args.out) / spec.name}")
    return status


def cmd_compare(args) -> int:
    spec = with_variants(_load(args), COMPARE_VARIANTS, "compare")
    status = run_experiment(spec, args.out, _variants(args))
    _print_summary(spec, args.out)
    return status


def cmd_ablate(args) -> int:
    spec = with_variants(_load(args), ABLATION_VARIANTS, "ablate")
    status = run_experiment(spec, args.out, _variants(args))
    _print_summary(spec, args.out)
    return status


def cmd_theory(args) -> int:
    spec = _load(args)
    report = run_theory(spec, args.out)
    growth = report["batch_growth"]
    print(f"batch growth: x{growth['growth_ratio']:.1f}, non-decreasing pairs {growth['nondecreasing_fraction']:.1%}")
    for seed, fit in report["log_fit"].items():
        print(f"seed {seed}: r2_log={fit['r2_log']:.4f} r2_linear={fit['r2_linear']:.4f}")
    return 0


def cmd_selftest(args) -> int:
    from adloco.selftest import run_all

    return run_all(verbose=True)


def _print_summary(spec: ExperimentSpec, out: str | None) -> None:
    path = resolve_out_dir(spec, out) / spec.name / "summary.json"
    summary = json.loads(path.read_text())
    for name, agg in summary["variants"].items():
        print(
            f"{name:>12}: mean final loss {agg['mean_final_loss']:.6f}  "
            f"mean C {agg['mean_total_comm']:.2f}  reached target {agg['runs_reaching_target']}/{len(spec.seeds)}"
        )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adloco", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log every finished run")
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "run": (cmd_run, "run every variant of a config for every seed"),
        "compare": (cmd_compare, "AdLoCo vs DiLoCo vs LocalSGD on shared seeds"),
        "ablate": (cmd_ablate, "toggle adaptive batching, merging and switch mode"),
        "theory": (cmd_theory, "batch-growth and log-communication checks"),
    }
    for name, (func, help_text) in commands.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", nargs="?", help="configuration file")
        p.add_argument("--config", dest="config_opt", metavar="PATH", help="configuration file")
        p.add_argument("--out", help="output directory (overrides $ADLOCO_OUT_DIR and out_dir)")
        p.add_argument("--seeds", help="comma-separated seed list")
        p.add_argument("--variant", action="append", help="only run this variant (repeatable)")
        p.set_defaults(func=func)
    p = sub.add_parser("selftest", help="run the oracle and invariant checks")
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ConfigError, ExperimentError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
