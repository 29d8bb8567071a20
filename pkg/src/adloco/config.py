"""Run and experiment configuration.

Configuration files are flat ``key = value`` text. Keys are either
``RunConfig`` field names, the experiment keys ``name``, ``seeds`` and
``out_dir``, or per-variant overrides written ``variant.<name>.<field>``.
``#`` starts a comment. An empty file yields the shipped defaults.
"""

from __future__ import annotations

import configparser
import dataclasses
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

from adloco.datagen import RECIPES
from adloco.errors import ConfigError
from adloco.optim import INNER_KINDS, OUTER_KINDS
from adloco.scheduler import TESTS

ALGORITHMS = ("adloco", "diloco", "localsgd", "sgd")


@dataclass(frozen=True)
class RunConfig:
    algorithm: str = "adloco"
    num_outer_steps: int = 20
    num_inner_steps: int = 200
    workers_per_trainer: int = 4
    num_init_trainers: int = 4
    initial_batch_size: int = 1
    lr_inner: float = 2e-5
    lr_outer: float = 0.5
    inner_opt: str = "adamw"
    weight_decay: float = 0.1
    outer_opt: str = "sgd"
    outer_momentum: float = 0.9
    eta: float = 0.8
    theta: float = 0.01
    nu: float = 0.3
    batch_test: str = "norm"
    batch_cap: int = 2**16
    b_max: int = 100
    n_switch: int = 2
    merge_w: int = 2
    merge_frequency: int = 3
    adaptive: bool = True
    merging: bool = True
    switch_mode: bool = True
    recipe: str = "two-cluster"
    n_samples: int = 4096
    dim: int = 10
    hidden: int = 8
    data_scale: float = 1.0
    init_scale: float = 0.01
    shard_fraction: float = 0.0
    eval_size: int = 256
    data_seed: int = 0
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        _choice("algorithm", self.algorithm, ALGORITHMS)
        _choice("inner_opt", self.inner_opt, INNER_KINDS)
        _choice("outer_opt", self.outer_opt, OUTER_KINDS)
        _choice("batch_test", self.batch_test, TESTS)
        _choice("recipe", self.recipe, tuple(RECIPES))
        for name in (
            "num_outer_steps", "num_inner_steps", "workers_per_trainer", "num_init_trainers",
            "initial_batch_size", "batch_cap", "b_max", "n_switch", "merge_frequency",
            "n_samples", "dim", "hidden", "eval_size", "threads",
        ):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("lr_inner", "lr_outer", "eta", "theta", "nu", "data_scale"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ConfigError(f"{name} must be a finite value > 0, got {value}")
        for name in ("weight_decay", "init_scale"):
            if not getattr(self, name) >= 0:
                raise ConfigError(f"{name} must be >= 0")
        if not 0.0 <= self.outer_momentum < 1.0:
            raise ConfigError("outer_momentum must lie in [0, 1)")
        if self.merge_w < 0:
            raise ConfigError("merge_w must be >= 0")
        if not 0.0 <= self.shard_fraction <= 1.0:
            raise ConfigError("shard_fraction must lie in (0, 1], or 0 for the 1/k default")
        if self.data_seed < 0 or self.seed < 0:
            raise ConfigError("seeds must be non-negative")
        if self.initial_batch_size > self.batch_cap:
            raise ConfigError("initial_batch_size exceeds batch_cap")

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def shard_fraction_for(self, k: int) -> float:
        """Configured shard fraction, or ``ceil(n / k) / n`` when left at 0."""
        if self.shard_fraction > 0:
            return self.shard_fraction
        return math.ceil(self.n_samples / k) / self.n_samples


def _choice(name, value, allowed):
    if value not in allowed:
        raise ConfigError(f"{name} must be one of {allowed}, got {value!r}")


RUN_FIELDS = {f.name: f for f in fields(RunConfig)}


def parse_value(name: str, text: str):
    """Convert a config string to the type of RunConfig field ``name``."""
    if name not in RUN_FIELDS:
        raise ConfigError(f"unknown configuration key {name!r}")
    kind = type(getattr(RunConfig(), name))
    text = text.strip()
    try:
        if kind is bool:
            lowered = text.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
    except ValueError:
        raise ConfigError(f"invalid value for {name}: {text!r}") from None
    return text


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass(frozen=True)
class ExperimentSpec:
    name: str = "experiment"
    base: RunConfig = field(default_factory=RunConfig)
    variants: dict = field(default_factory=dict)
    seeds: tuple = (0,)
    out_dir: str = "runs"

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("an experiment needs at least one seed")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        for vname, overrides in self.variants.items():
            if not vname or "." in vname:
                raise ConfigError(f"invalid variant name {vname!r}")
            self.config_for(vname, self.seeds[0])
            for key in overrides:
                if key == "seed":
                    raise ConfigError("variants may not override the seed")

    def variant_names(self) -> list[str]:
        return list(self.variants) or [self.base.algorithm]

    def config_for(self, variant: str, seed: int) -> RunConfig:
        overrides = dict(self.variants.get(variant, {}))
        try:
            return self.base.replace(**overrides, seed=seed)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


def parse_seeds(text: str) -> tuple[int, ...]:
    try:
        seeds = tuple(int(s) for s in text.replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"seeds must be a list of integers, got {text!r}") from None
    if not seeds:
        raise ConfigError("seed list is empty")
    return seeds


def loads_config(text: str) -> ExperimentSpec:
    parser = configparser.ConfigParser(
        interpolation=None, comment_prefixes=("#",), inline_comment_prefixes=("#",),
        delimiters=("=",),
    )
    parser.optionxform = str
    try:
        parser.read_string("[config]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse configuration: {exc}") from None
    if parser.sections() != ["config"]:
        raise ConfigError("section headers are not allowed; use flat key = value lines")
    base, variants, extra = {}, {}, {}
    for key, value in parser.items("config"):
        if value is None:
            raise ConfigError(f"missing value for key {key!r}")
        if key in ("name", "out_dir"):
            extra[key] = value.strip()
        elif key == "seeds":
            extra["seeds"] = parse_seeds(value)
        elif key.startswith("variant."):
            parts = key.split(".")
            if len(parts) != 3:
                raise ConfigError(f"variant keys look like variant.<name>.<field>, got {key!r}")
            variants.setdefault(parts[1], {})[parts[2]] = parse_value(parts[2], value)
        else:
            base[key] = parse_value(key, value)
    return ExperimentSpec(base=RunConfig(**base), variants=variants, **extra)


def load_config(path: str | Path) -> ExperimentSpec:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"configuration file not found: {path}")
    return loads_config(path.read_text())


def dumps_config(spec: ExperimentSpec) -> str:
    lines = [
        f"name = {spec.name}",
        f"seeds = {', '.join(str(s) for s in spec.seeds)}",
        f"out_dir = {spec.out_dir}",
    ]
    for f in fields(RunConfig):
        lines.append(f"{f.name} = {format_value(getattr(spec.base, f.name))}")
    for vname, overrides in spec.variants.items():
        for key, value in overrides.items():
            lines.append(f"variant.{vname}.{key} = {format_value(value)}")
    return "\n".join(lines) + "\n"
