"""Data movement: zigzag sequence sharding, SeqAlltoAll, KV replication.

Every operation here is pure index shuffling on immutable chunks, so
round-trip identities hold bit-exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import RankGrid
from .oracle import DenseTensor

SEQ_SHARDED = "seq"    # (H, S/d_sp, d) per rank
HEAD_SHARDED = "head"  # (H/d_hp, S/d_cp, d) per rank


@dataclass(frozen=True)
class ShardedSeq:
    """Per-rank tensor chunks, indexed by global rank."""

    chunks: tuple[DenseTensor, ...]
    layout: str
    grid: RankGrid

    def chunk(self, hp_index: int, cp_index: int) -> DenseTensor:
        return self.chunks[self.grid.rank_of(hp_index, cp_index)]


def zigzag_reorder(seq_len: int, d_cp: int) -> tuple[np.ndarray, np.ndarray]:
    """Load-balanced token permutation for causal ring attention.

    The sequence is cut into 2*d_cp equal stripes; CP rank j owns stripes
    j and 2*d_cp-1-j, so early and late stripes pair up and every rank
    admits the same number of causal (query, key) pairs.

    Returns (perm, inv): perm[i] is the original position of the token at
    reordered slot i, and inv is the inverse permutation.
    """
    if seq_len % (2 * d_cp) != 0:
        raise ValueError(f"S={seq_len} not divisible by 2*d_cp={2 * d_cp}")
    stripe = seq_len // (2 * d_cp)
    parts = []
    for j in range(d_cp):
        for s in (j, 2 * d_cp - 1 - j):
            parts.append(np.arange(s * stripe, (s + 1) * stripe))
    perm = np.concatenate(parts)
    inv = np.empty_like(perm)
    inv[perm] = np.arange(seq_len)
    return perm, inv


def shard_sequence(x: DenseTensor, grid: RankGrid) -> ShardedSeq:
    """Split a global tensor into SeqSharded per-rank chunks.

    CP rank j gets its zigzag stripe pair; within a CP group the stripe
    pair is cut contiguously across the d_hp head-parallel ranks.
    """
    seq_len = x.tokens
    d_hp, d_cp = grid.d_hp, grid.d_cp
    d_sp = grid.d_sp
    if seq_len % (2 * d_sp) != 0:
        raise ValueError(f"S={seq_len} not divisible by 2*d_sp={2 * d_sp}")
    perm, _ = zigzag_reorder(seq_len, d_cp)
    per_rank = seq_len // d_sp
    per_group = seq_len // d_cp
    chunks: list[DenseTensor | None] = [None] * d_sp
    for j in range(d_cp):
        group_tokens = perm[j * per_group:(j + 1) * per_group]
        for i in range(d_hp):
            tokens = group_tokens[i * per_rank:(i + 1) * per_rank]
            idx = np.searchsorted(x.positions, tokens) \
                if _positions_sorted(x) else _lookup(x.positions, tokens)
            chunks[grid.rank_of(i, j)] = DenseTensor(
                x.values[:, idx, :].copy(), x.positions[idx].copy())
    return ShardedSeq(tuple(chunks), SEQ_SHARDED, grid)


def _positions_sorted(x: DenseTensor) -> bool:
    return bool(np.all(np.diff(x.positions) > 0))


def _lookup(positions: np.ndarray, wanted: np.ndarray) -> np.ndarray:
    where = {int(p): i for i, p in enumerate(positions)}
    return np.array([where[int(t)] for t in wanted], dtype=np.int64)


def unshard(sharded: ShardedSeq) -> DenseTensor:
    """Reassemble the global tensor in ascending token-position order."""
    grid = sharded.grid
    if sharded.layout == SEQ_SHARDED:
        values = np.concatenate([c.values for c in sharded.chunks], axis=1)
        positions = np.concatenate([c.positions for c in sharded.chunks])
    else:
        groups = []
        for j in range(grid.d_cp):
            per_head = np.concatenate(
                [sharded.chunk(i, j).values for i in range(grid.d_hp)], axis=0)
            groups.append((per_head, sharded.chunk(0, j).positions))
        values = np.concatenate([g[0] for g in groups], axis=1)
        positions = np.concatenate([g[1] for g in groups])
    order = np.argsort(positions, kind="stable")
    return DenseTensor(values[:, order, :], positions[order])


def kv_replicate(kv: ShardedSeq, kv_heads: int, d_hp: int,
                 n_heads: int) -> ShardedSeq:
    """Duplicate KV heads contiguously until d_hp divides the head count.

    No-op when d_hp <= H_kv already divides; otherwise the head count
    becomes lcm(H_kv, d_hp) (= max of the two for the usual power-of-two
    shapes) and head index arithmetic stays floor-division.
    """
    if d_hp > n_heads:
        raise ValueError(f"d_hp={d_hp} exceeds H={n_heads}")
    if kv.layout != SEQ_SHARDED:
        raise ValueError("kv_replicate expects SeqSharded layout")
    target = kv_heads if d_hp <= kv_heads else math.lcm(kv_heads, d_hp)
    repeat = target // kv_heads
    if repeat == 1:
        return kv
    chunks = tuple(
        DenseTensor(np.repeat(c.values, repeat, axis=0), c.positions)
        for c in kv.chunks)
    return ShardedSeq(chunks, SEQ_SHARDED, kv.grid)


def seq_alltoall_scatter(x: ShardedSeq, grid: RankGrid) -> ShardedSeq:
    """SeqSharded -> HeadSharded: each rank trades tokens for whole heads.

    After the exchange, rank (i, j) holds head slice i of its CP group's
    entire stripe set; token order concatenates the group's per-rank
    chunks in hp_index order.
    """
    if x.layout != SEQ_SHARDED:
        raise ValueError("scatter expects SeqSharded layout")
    n_heads = x.chunks[0].heads
    if n_heads % grid.d_hp != 0:
        raise ValueError(f"{n_heads} heads not divisible by d_hp={grid.d_hp}")
    per = n_heads // grid.d_hp
    chunks: list[DenseTensor | None] = [None] * grid.d_sp
    for j in range(grid.d_cp):
        group = [x.chunk(i, j) for i in range(grid.d_hp)]
        values = np.concatenate([c.values for c in group], axis=1)
        positions = np.concatenate([c.positions for c in group])
        for i in range(grid.d_hp):
            chunks[grid.rank_of(i, j)] = DenseTensor(
                values[i * per:(i + 1) * per].copy(), positions.copy())
    return ShardedSeq(tuple(chunks), HEAD_SHARDED, grid)


def seq_alltoall_gather(o: ShardedSeq, grid: RankGrid) -> ShardedSeq:
    """HeadSharded -> SeqSharded; exact inverse of seq_alltoall_scatter."""
    if o.layout != HEAD_SHARDED:
        raise ValueError("gather expects HeadSharded layout")
    tokens_per_rank = o.chunks[0].tokens // grid.d_hp
    chunks: list[DenseTensor | None] = [None] * grid.d_sp
    for j in range(grid.d_cp):
        values = np.concatenate(
            [o.chunk(i, j).values for i in range(grid.d_hp)], axis=0)
        positions = o.chunk(0, j).positions
        for i in range(grid.d_hp):
            sl = slice(i * tokens_per_rank, (i + 1) * tokens_per_rank)
            chunks[grid.rank_of(i, j)] = DenseTensor(
                values[:, sl, :].copy(), positions[sl].copy())
    return ShardedSeq(tuple(chunks), SEQ_SHARDED, grid)
