"""Configuration types, validation, and the rank grid.

All types are frozen dataclasses; they are safe to share across threads.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field


class ConfigError(Exception):
    """Raised when a configuration file cannot be parsed or is malformed."""


class Placement(enum.Enum):
    HEAD_FIRST = "head_first"
    CONTEXT_FIRST = "context_first"


@dataclass(frozen=True)
class ModelConfig:
    """Transformer shape relevant to one attention layer."""

    seq_len: int
    heads: int
    kv_heads: int
    hidden: int
    layers: int = 1
    global_batch: int = 0  # tokens; defaults to seq_len
    elem_bytes: int = 2    # FP16 activations
    lse_bytes: int = 4     # FP32 softmax log-sum-exp

    def __post_init__(self):
        if self.global_batch == 0:
            object.__setattr__(self, "global_batch", self.seq_len)

    @property
    def head_dim(self) -> int:
        return self.hidden // self.heads

    @property
    def gqa_groups(self) -> int:
        return self.heads // self.kv_heads


@dataclass(frozen=True)
class ParallelConfig:
    d_hp: int
    d_cp: int
    d_dp: int = 1
    inner_ring: int = 1
    placement: Placement = Placement.HEAD_FIRST

    @property
    def d_sp(self) -> int:
        return self.d_hp * self.d_cp


# Calibrated testbed defaults: 8 GPUs per node with 4 NICs, 200Gb/s each
# (25 GB/s unidirectional), NVLINK 300 GB/s unidirectional.  Latencies are
# effective per-step overheads (launch + synchronize), not wire latencies.
@dataclass(frozen=True)
class ClusterConfig:
    gpus_per_node: int = 8
    nics_per_node: int = 4
    nic_bw: float = 25e9
    nvlink_bw: float = 300e9
    p2p_latency_intra: float = 30e-6
    p2p_latency_inter: float = 150e-6
    alltoall_latency: float = 50e-6
    peak_flops: float = 312e12
    flops_efficiency: float = 0.5
    alpha_fwd: float | None = None  # overrides the peak-FLOPs derivation

    @property
    def alpha(self) -> float:
        """Seconds per S^2*D unit of forward attention work.

        Causal attention costs 2*S^2*D FLOPs (two matmuls, halved by the
        causal mask), executed at peak_flops * flops_efficiency.
        """
        if self.alpha_fwd is not None:
            return self.alpha_fwd
        return 2.0 / (self.peak_flops * self.flops_efficiency)


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations


def validate(model: ModelConfig, par: ParallelConfig,
             cluster: ClusterConfig) -> ValidationReport:
    """Check every cross-config invariant; returns violations, never raises."""
    v = []
    if model.seq_len < 1:
        v.append("S >= 1")
    if model.heads < 1 or model.kv_heads < 1:
        v.append("H >= 1 and H_kv >= 1")
    elif model.heads % model.kv_heads != 0:
        v.append("H mod H_kv = 0")
    if model.heads >= 1 and model.hidden % model.heads != 0:
        v.append("D mod H = 0")
    if model.global_batch < model.seq_len:
        v.append("B >= S")
    if par.d_hp < 1 or par.d_cp < 1 or par.d_dp < 1:
        v.append("parallel degrees >= 1")
    if par.d_hp > model.heads:
        v.append("d_hp <= H")
    elif model.heads % par.d_hp != 0:
        v.append("d_hp divides H")
    if par.inner_ring < 1 or par.inner_ring > par.d_cp:
        v.append("1 <= w <= d_cp")
    elif par.d_cp % par.inner_ring != 0:
        v.append("w divides d_cp")
    if model.seq_len % (2 * par.d_sp) != 0:
        v.append("S mod (2 * d_sp) = 0")
    if cluster.gpus_per_node < 1 or cluster.nics_per_node < 1:
        v.append("gpus_per_node >= 1 and nics_per_node >= 1")
    for name in ("nic_bw", "nvlink_bw"):
        if getattr(cluster, name) <= 0:
            v.append(f"{name} > 0")
    for name in ("p2p_latency_intra", "p2p_latency_inter", "alltoall_latency"):
        if getattr(cluster, name) < 0:
            v.append(f"{name} >= 0")
    if cluster.alpha <= 0:
        v.append("alpha > 0")
    return ValidationReport(tuple(v))


@dataclass(frozen=True)
class RankGrid:
    """Bijection between global ranks and (hp_index, cp_index) coordinates.

    Head-first lays ranks out hp-major (ranks with equal cp_index are
    consecutive, so an HP group packs onto as few nodes as possible);
    context-first lays them out cp-major.
    """

    d_hp: int
    d_cp: int
    placement: Placement
    gpus_per_node: int

    @property
    def d_sp(self) -> int:
        return self.d_hp * self.d_cp

    def rank_of(self, hp_index: int, cp_index: int) -> int:
        if self.placement is Placement.HEAD_FIRST:
            return cp_index * self.d_hp + hp_index
        return hp_index * self.d_cp + cp_index

    def coords_of(self, rank: int) -> tuple[int, int]:
        if self.placement is Placement.HEAD_FIRST:
            return rank % self.d_hp, rank // self.d_hp
        return rank // self.d_cp, rank % self.d_cp

    def node_of(self, rank: int) -> int:
        return rank // self.gpus_per_node

    def cp_group(self, hp_index: int) -> list[int]:
        return [self.rank_of(hp_index, j) for j in range(self.d_cp)]

    def hp_group(self, cp_index: int) -> list[int]:
        return [self.rank_of(i, cp_index) for i in range(self.d_hp)]


def build_rank_grid(par: ParallelConfig, cluster: ClusterConfig) -> RankGrid:
    if par.d_hp < 1 or par.d_cp < 1:
        raise ValueError("parallel degrees must be >= 1")
    if cluster.gpus_per_node < 1:
        raise ValueError("gpus_per_node must be >= 1")
    return RankGrid(par.d_hp, par.d_cp, par.placement, cluster.gpus_per_node)


_MODEL_KEYS = {"seq_len", "heads", "kv_heads", "hidden", "layers",
               "global_batch", "elem_bytes", "lse_bytes"}
_PARALLEL_KEYS = {"d_hp", "d_cp", "d_dp", "inner_ring", "placement"}
_CLUSTER_KEYS = {"gpus_per_node", "nics_per_node", "nic_bw", "nvlink_bw",
                 "p2p_latency_intra", "p2p_latency_inter", "alltoall_latency",
                 "peak_flops", "flops_efficiency", "alpha_fwd"}


def _check_keys(section: str, data: dict, allowed: set[str]) -> None:
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"unknown keys in '{section}': {', '.join(unknown)}")


def load_config(path: str) -> tuple[ModelConfig, ParallelConfig, ClusterConfig]:
    """Parse the three-section JSON configuration file.

    Unknown keys are rejected so typos never silently fall back to defaults.
    """
    try:
        with open(path) as f:
            raw = json.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(
            f"invalid JSON in {path} at line {e.lineno}, column {e.colno}: "
            f"{e.msg}") from e
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    _check_keys("(root)", raw, {"model", "parallel", "cluster"})
    if "model" not in raw:
        raise ConfigError("config is missing the 'model' section")

    model_raw = dict(raw["model"])
    _check_keys("model", model_raw, _MODEL_KEYS)
    par_raw = dict(raw.get("parallel", {}))
    _check_keys("parallel", par_raw, _PARALLEL_KEYS)
    cluster_raw = dict(raw.get("cluster", {}))
    _check_keys("cluster", cluster_raw, _CLUSTER_KEYS)

    if "placement" in par_raw:
        try:
            par_raw["placement"] = Placement(par_raw["placement"])
        except ValueError as e:
            raise ConfigError(
                f"placement must be one of "
                f"{[p.value for p in Placement]}") from e
    try:
        model = ModelConfig(**model_raw)
        par = ParallelConfig(**par_raw) if par_raw else ParallelConfig(1, 1)
        cluster = ClusterConfig(**cluster_raw)
    except TypeError as e:
        raise ConfigError(f"bad config field: {e}") from e
    return model, par, cluster
