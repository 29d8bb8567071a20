"""Trainer set bookkeeping: worst-trainer selection, weighted merging, switch-mode plans."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from adloco.datagen import Shard
from adloco.errors import ConfigError, UsageError
from adloco.optim import InnerOptimizerState, OuterOptimizerState


@dataclass
class TrainerState:
    id: int
    params: np.ndarray
    requested_batch: int
    shard: Shard
    inner_opt: InnerOptimizerState
    outer_opt: OuterOptimizerState
    workers: int = 1
    alive: bool = True


@dataclass
class PoolState:
    trainers: list[TrainerState]
    merge_w: int = 2
    merge_frequency: int = 3
    n_switch: int = 2
    b_max: int = 100

    def __post_init__(self):
        if self.b_max < 1 or self.n_switch < 1:
            raise ConfigError("b_max and n_switch must be >= 1")
        if not self.alive():
            raise ConfigError("pool needs at least one trainer")

    def alive(self) -> list[TrainerState]:
        return [t for t in self.trainers if t.alive]

    def by_id(self, tid: int) -> TrainerState:
        for t in self.trainers:
            if t.id == tid:
                return t
        raise UsageError(f"unknown trainer id {tid}")

    def requested(self) -> dict[int, int]:
        return {t.id: t.requested_batch for t in self.alive()}


@dataclass(frozen=True)
class AccumulationPlan:
    use_accumulation: bool
    accum_steps: int
    micro_batch: int

    @property
    def effective_batch(self) -> int:
        return self.accum_steps * self.micro_batch


def check_merge(requested: Mapping[int, int], w: int) -> set[int]:
    """The ``w`` trainers with the smallest requested batch (ties: smaller id first).

    Empty when ``w == 0``, when at most one trainer is alive, or when ``w``
    exceeds the number of trainers.
    """
    k = len(requested)
    if w == 0 or k <= 1 or w > k:
        return set()
    order = sorted(requested, key=lambda tid: (requested[tid], tid))
    return set(order[:w])


def do_merge(pool: PoolState, merge_set: set[int]) -> PoolState:
    """Replace ``merge_set`` by one representative holding their batch-weighted mean.

    The representative is the member with the largest requested batch (ties:
    smaller id); it keeps its optimizer states, shard and requested batch.
    The pool is updated in place and returned.
    """
    if len(merge_set) < 2:
        raise UsageError("a merge needs at least two trainers")
    members = []
    for tid in sorted(merge_set):
        t = pool.by_id(tid)
        if not t.alive:
            raise UsageError(f"trainer {tid} is not alive")
        members.append(t)
    weights = np.array([t.requested_batch for t in members], dtype=np.float64)
    stacked = np.stack([t.params for t in members])
    merged = weights @ stacked / weights.sum()
    rep = min(members, key=lambda t: (-t.requested_batch, t.id))
    rep.params = merged
    for t in members:
        if t is not rep:
            t.alive = False
    return pool


def plan_batch(requested: int, b_max: int, n: int = 2) -> AccumulationPlan:
    """Accumulate only once ``requested > n * b_max``; otherwise cap the batch at ``b_max``."""
    if requested > n * b_max:
        return AccumulationPlan(True, math.ceil(requested / b_max), b_max)
    return AccumulationPlan(False, 1, min(requested, b_max))
