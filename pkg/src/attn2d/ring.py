"""Double-ring schedule construction and exact simulated execution.

Execution here is purely about values: each rank folds partial attention
results in a fixed schedule order, so two runs are bit-identical.  All
timing concerns live in the timeline module.
"""

from __future__ import annotations

from dataclasses import dataclass

from .config import ClusterConfig, ModelConfig, ParallelConfig, build_rank_grid, validate
from .oracle import BlockResult, DenseTensor, attention_block, block_update, empty_block
from .sharding import (
    kv_replicate,
    seq_alltoall_gather,
    seq_alltoall_scatter,
    shard_sequence,
    unshard,
)


@dataclass(frozen=True)
class RingStep:
    outer: int
    inner: int
    source: int  # CP rank whose original KV chunk is consumed


@dataclass(frozen=True)
class RingSchedule:
    d_cp: int
    inner_ring: int
    steps: tuple[tuple[RingStep, ...], ...]  # indexed by CP rank

    @property
    def outer_rings(self) -> int:
        return self.d_cp // self.inner_ring


def build_ring_schedule(d_cp: int, w: int) -> RingSchedule:
    """Consumption order of KV chunks for every CP rank.

    Rank j sits at position p = j % w of inner ring r = j // w.  Inner
    step t rotates chunks within the ring; each outer step o shifts whole
    ring KV sets from the neighboring ring.  w = d_cp degenerates to the
    classic single ring, w = 1 to a pure outer ring.
    """
    if w < 1 or d_cp % w != 0:
        raise ValueError(f"inner ring size {w} must divide d_cp={d_cp}")
    n_rings = d_cp // w
    per_rank = []
    for j in range(d_cp):
        ring, pos = divmod(j, w)
        steps = []
        for o in range(n_rings):
            for t in range(w):
                src = ((ring - o) % n_rings) * w + (pos - t) % w
                steps.append(RingStep(o, t, src))
        per_rank.append(tuple(steps))
    return RingSchedule(d_cp, w, tuple(per_rank))


def run_double_ring(q_chunks: list[DenseTensor], k_chunks: list[DenseTensor],
                    v_chunks: list[DenseTensor], schedule: RingSchedule,
                    causal: bool = False) -> list[BlockResult]:
    """Fold every KV chunk into each rank's accumulator in schedule order."""
    if not (len(q_chunks) == len(k_chunks) == len(v_chunks) == schedule.d_cp):
        raise ValueError("chunk count does not match schedule")
    results = []
    for j, q in enumerate(q_chunks):
        acc = empty_block(q.heads, q.tokens, q.values.shape[-1],
                          dtype=q.values.dtype)
        for step in schedule.steps[j]:
            blk = attention_block(q, k_chunks[step.source],
                                  v_chunks[step.source], causal)
            acc = block_update(acc, blk)
        results.append(acc)
    return results


def run_2d_attention(q: DenseTensor, k: DenseTensor, v: DenseTensor,
                     model: ModelConfig, par: ParallelConfig,
                     cluster: ClusterConfig,
                     causal: bool = False) -> DenseTensor:
    """Full 2D pipeline: replicate, scatter, double-ring per CP group, gather.

    The result equals single-device attention on the global tensors; the
    inverse zigzag is applied so the output comes back in original order.
    """
    report = validate(model, par, cluster)
    if not report.ok:
        raise ValueError("invalid configuration: " + "; ".join(report.violations))
    grid = build_rank_grid(par, cluster)

    q_sharded = shard_sequence(q, grid)
    k_sharded = kv_replicate(shard_sequence(k, grid), model.kv_heads,
                             par.d_hp, model.heads)
    v_sharded = kv_replicate(shard_sequence(v, grid), model.kv_heads,
                             par.d_hp, model.heads)

    q_local = seq_alltoall_scatter(q_sharded, grid)
    k_local = seq_alltoall_scatter(k_sharded, grid)
    v_local = seq_alltoall_scatter(v_sharded, grid)

    schedule = build_ring_schedule(par.d_cp, par.inner_ring)
    out_chunks: list[DenseTensor | None] = [None] * grid.d_sp
    for i in range(par.d_hp):
        results = run_double_ring(
            [q_local.chunk(i, j) for j in range(par.d_cp)],
            [k_local.chunk(i, j) for j in range(par.d_cp)],
            [v_local.chunk(i, j) for j in range(par.d_cp)],
            schedule, causal)
        for j, res in enumerate(results):
            out_chunks[grid.rank_of(i, j)] = DenseTensor(
                res.out, q_local.chunk(i, j).positions)
    sharded_out = type(q_local)(tuple(out_chunks), q_local.layout, grid)
    gathered = seq_alltoall_gather(sharded_out, grid)
    return unshard(gathered)
