"""Numerically exact functional model of head x context parallel attention,
with an analytic cost model, event timeline simulator, and config planner."""

from .config import (
    ClusterConfig,
    ConfigError,
    ModelConfig,
    ParallelConfig,
    Placement,
    RankGrid,
    ValidationReport,
    build_rank_grid,
    load_config,
    validate,
)
from .oracle import (
    BlockResult,
    DenseTensor,
    attention_backward,
    block_update,
    full_attention,
)
from .costs import (
    CostReport,
    MemoryReport,
    ScalabilityReport,
    alltoall_volume,
    comp_time,
    inner_ring_time,
    memory_estimate,
    objective,
    p2p_time,
    scalability,
    size_kv,
)
from .planner import PlanEntry, enumerate_configs, plan, rank, score_configs, write_plan
from .ring import RingSchedule, build_ring_schedule, run_2d_attention, run_double_ring
from .sharding import ShardedSeq, kv_replicate, seq_alltoall_gather, seq_alltoall_scatter, shard_sequence, unshard, zigzag_reorder
from .timeline import Event, Timeline, export_trace, simulate

__all__ = [
    "BlockResult",
    "CostReport",
    "Event",
    "MemoryReport",
    "PlanEntry",
    "ScalabilityReport",
    "Timeline",
    "alltoall_volume",
    "comp_time",
    "enumerate_configs",
    "export_trace",
    "inner_ring_time",
    "memory_estimate",
    "objective",
    "p2p_time",
    "plan",
    "rank",
    "scalability",
    "score_configs",
    "simulate",
    "size_kv",
    "write_plan",
    "ClusterConfig",
    "ConfigError",
    "DenseTensor",
    "ModelConfig",
    "ParallelConfig",
    "Placement",
    "RankGrid",
    "RingSchedule",
    "ShardedSeq",
    "ValidationReport",
    "attention_backward",
    "block_update",
    "build_rank_grid",
    "build_ring_schedule",
    "full_attention",
    "kv_replicate",
    "load_config",
    "run_2d_attention",
    "run_double_ring",
    "seq_alltoall_gather",
    "seq_alltoall_scatter",
    "shard_sequence",
    "unshard",
    "validate",
    "zigzag_reorder",
]
