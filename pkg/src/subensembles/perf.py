"""Analytic inference-cost model for ensembles.

A deep ensemble with n members costs n * F FLOPs per input; a sub-ensemble
costs F_T + n * F_K because the shared trunk runs once. Speedup is the
ratio of the two at equal member count; it grows toward F / F_K as n grows.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigurationError
from .network import NetworkSpec, SplitPoint, network_flops

MODES = ("deep", "sub")


@dataclass(frozen=True)
class FlopsRow:
    n: int
    de_flops: int
    se_flops: int
    speedup: float


@dataclass(frozen=True)
class FlopsReport:
    trunk_flops: int
    task_flops: int
    rows: tuple[FlopsRow, ...]

    @property
    def single_model_flops(self) -> int:
        return self.trunk_flops + self.task_flops


def trunk_task_flops(spec: NetworkSpec, split_point: SplitPoint) -> tuple[int, int]:
    k = split_point.index
    return network_flops(spec, 0, k), network_flops(spec, k)


def ensemble_flops(spec: NetworkSpec, split_point: SplitPoint, n: int, mode: str) -> int:
    """Total forward FLOPs for one input through an n-member ensemble."""
    if n < 1:
        raise ConfigurationError(f"member count must be >= 1, got {n}")
    if mode not in MODES:
        raise ConfigurationError(f"mode must be one of {MODES}, got {mode!r}")
    trunk, task = trunk_task_flops(spec, split_point)
    if mode == "deep":
        return n * (trunk + task)
    return trunk + n * task


def speedup(spec: NetworkSpec, split_point: SplitPoint, n: int) -> float:
    """Deep-ensemble FLOPs divided by sub-ensemble FLOPs at member count n."""
    trunk, task = trunk_task_flops(spec, split_point)
    if task == 0:
        raise ConfigurationError(
            "degenerate split: task segment has zero FLOPs, speedup undefined")
    if n < 1:
        raise ConfigurationError(f"member count must be >= 1, got {n}")
    return (n * (trunk + task)) / (trunk + n * task)


def flops_report(spec: NetworkSpec, split_point: SplitPoint, ns) -> FlopsReport:
    trunk, task = trunk_task_flops(spec, split_point)
    rows = tuple(
        FlopsRow(
            n=n,
            de_flops=ensemble_flops(spec, split_point, n, "deep"),
            se_flops=ensemble_flops(spec, split_point, n, "sub"),
            speedup=speedup(spec, split_point, n),
        )
        for n in ns
    )
    return FlopsReport(trunk, task, rows)
