"""Configuration search: enumerate, score, and rank parallel layouts."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

from .config import (
    ClusterConfig,
    ModelConfig,
    ParallelConfig,
    Placement,
    build_rank_grid,
    validate,
)
from .costs import CostReport, MemoryReport, memory_estimate, objective
from . import timeline

KEY_OBJECTIVE = "objective"
KEY_SIM = "sim"

_PLACEMENT_ORDER = {Placement.HEAD_FIRST: 0, Placement.CONTEXT_FIRST: 1}


@dataclass(frozen=True)
class PlanEntry:
    par: ParallelConfig
    cost: CostReport
    mem: MemoryReport
    makespan: float | None = None
    fits_memory: bool = True


def _divisors(n: int) -> list[int]:
    return [d for d in range(1, n + 1) if n % d == 0]


def enumerate_configs(model: ModelConfig, d_sp: int,
                      cluster: ClusterConfig,
                      placements: tuple[Placement, ...] = tuple(Placement),
                      d_dp: int = 1) -> list[ParallelConfig]:
    """All valid (d_hp, d_cp, w, placement) splits of a given SP degree."""
    if d_sp < 1:
        raise ValueError("d_sp must be >= 1")
    if d_sp == 1:
        placements = placements[:1]  # placement is meaningless on one GPU
    configs = []
    for d_hp in _divisors(d_sp):
        if d_hp > model.heads or model.heads % d_hp != 0:
            continue
        d_cp = d_sp // d_hp
        for w in _divisors(d_cp):
            for placement in placements:
                par = ParallelConfig(d_hp=d_hp, d_cp=d_cp, d_dp=d_dp,
                                     inner_ring=w, placement=placement)
                if validate(model, par, cluster).ok:
                    configs.append(par)
    return configs


def score_configs(model: ModelConfig, cluster: ClusterConfig,
                  configs: list[ParallelConfig],
                  with_sim: bool = False,
                  checkpoint: str = "full",
                  memory_capacity: float | None = None) -> list[PlanEntry]:
    entries = []
    for par in configs:
        grid = build_rank_grid(par, cluster)
        cost = objective(model, par, cluster, grid)
        mem = memory_estimate(model, par, checkpoint=checkpoint,
                              zero_shard_degree=par.d_dp * par.d_sp)
        makespan = None
        if with_sim:
            makespan = timeline.simulate(model, par, cluster, grid).makespan
        fits = True
        if memory_capacity is not None:
            per_gpu = (mem.activation_per_layer + mem.scpp_extra_per_layer) \
                * model.layers + mem.kv_comm_buffers + mem.model_state_per_gpu
            fits = per_gpu <= memory_capacity
        entries.append(PlanEntry(par, cost, mem, makespan, fits))
    return entries


def rank(entries: list[PlanEntry], key: str = KEY_OBJECTIVE) -> list[PlanEntry]:
    """Ascending by cost; ties go to smaller d_hp, smaller w, head-first."""
    if not entries:
        raise ValueError("cannot rank an empty plan")

    def sort_key(e: PlanEntry):
        if key == KEY_OBJECTIVE:
            primary = e.cost.objective
        elif key == KEY_SIM:
            if e.makespan is None:
                raise ValueError("entries lack simulated makespans")
            primary = e.makespan
        else:
            raise ValueError(f"unknown ranking key {key!r}")
        return (primary, e.par.d_hp, e.par.inner_ring,
                _PLACEMENT_ORDER[e.par.placement])

    return sorted(entries, key=sort_key)


def plan(model: ModelConfig, cluster: ClusterConfig, d_sp: int,
         key: str = KEY_OBJECTIVE, with_sim: bool = False,
         memory_capacity: float | None = None) -> list[PlanEntry]:
    configs = enumerate_configs(model, d_sp, cluster)
    entries = score_configs(model, cluster, configs,
                            with_sim=with_sim or key == KEY_SIM,
                            memory_capacity=memory_capacity)
    return rank(entries, key)


def _rows(entries: list[PlanEntry]) -> list[dict]:
    rows = []
    for position, e in enumerate(entries, start=1):
        mem_total = e.mem.activation_per_layer + e.mem.scpp_extra_per_layer \
            + e.mem.kv_comm_buffers + e.mem.model_state_per_gpu
        rows.append({
            "rank": position,
            "d_hp": e.par.d_hp,
            "d_cp": e.par.d_cp,
            "w": e.par.inner_ring,
            "placement": e.par.placement.value,
            "objective_ms": round(e.cost.objective * 1e3, 6),
            "makespan_ms": round(e.makespan * 1e3, 6)
            if e.makespan is not None else None,
            "mem_GB": round(mem_total / 2**30, 6),
            "fits_memory": e.fits_memory,
        })
    return rows


def write_plan(entries: list[PlanEntry], path: str, fmt: str = "json") -> None:
    rows = _rows(entries)
    if fmt == "json":
        with open(path, "w") as f:
            json.dump(rows, f, indent=2, sort_keys=True)
            f.write("\n")
    elif fmt == "csv":
        fields = ["rank", "d_hp", "d_cp", "w", "placement", "objective_ms",
                  "makespan_ms", "mem_GB", "fits_memory"]
        with open(path, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=fields)
            writer.writeheader()
            writer.writerows(rows)
    else:
        raise ValueError(f"unknown plan format {fmt!r}")
