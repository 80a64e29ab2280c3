"""Closed-form time, volume, and memory models for one attention layer.

Bandwidth sharing is modeled as even splitting per NIC; latencies are
effective per-operation overheads.  The backward pass moves KV chunks and
their gradients, so its P2P volume is twice the forward volume.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

from .config import ClusterConfig, ModelConfig, ParallelConfig, RankGrid

INTRA_NVLINK = "intra_nvlink"
INTER_NIC = "inter_nic"

BWD_COMP_FACTOR = 3   # backward kernel does ~3x the forward matmul work
BWD_P2P_FACTOR = 2    # KV chunks plus their gradients circulate


def comp_time(model: ModelConfig, par: ParallelConfig, cluster: ClusterConfig,
              phase: str = "fwd") -> float:
    """Per-micro-step attention compute time within the inner ring."""
    base = cluster.alpha * model.seq_len ** 2 * model.hidden / (par.d_cp * par.d_sp)
    return base * (BWD_COMP_FACTOR if phase == "bwd" else 1)


def size_kv(model: ModelConfig, par: ParallelConfig) -> int:
    """Bytes of one KV chunk pair (K and V, post-replication)."""
    rep_heads = max(model.kv_heads, par.d_hp)
    elems = 2 * model.seq_len * model.hidden // par.d_sp
    return rep_heads * elems * model.elem_bytes // model.heads


def size_q(model: ModelConfig, par: ParallelConfig) -> int:
    return model.elem_bytes * model.seq_len * model.hidden // par.d_sp


def size_out(model: ModelConfig, par: ParallelConfig) -> int:
    return size_q(model, par)


def p2p_time(nbytes: float, link: str, contention: float,
             cluster: ClusterConfig) -> float:
    """Point-to-point transfer time: latency plus shared-bandwidth term."""
    if nbytes < 0:
        raise ValueError("negative transfer size")
    if link == INTRA_NVLINK:
        return cluster.p2p_latency_intra + nbytes * contention / cluster.nvlink_bw
    if link == INTER_NIC:
        return cluster.p2p_latency_inter + nbytes * contention / cluster.nic_bw
    raise ValueError(f"unknown link class {link!r}")


def _hop_class(grid: RankGrid, cp_a: int, cp_b: int) -> str:
    """Worst link class of the (cp_a -> cp_b) hop across all CP groups."""
    for i in range(grid.d_hp):
        a, b = grid.rank_of(i, cp_a), grid.rank_of(i, cp_b)
        if grid.node_of(a) != grid.node_of(b):
            return INTER_NIC
    return INTRA_NVLINK


def ring_hop_classes(par: ParallelConfig, grid: RankGrid) -> tuple[str, str]:
    """(inner, outer) link classes of the slowest ring hops.

    Inner hops are the ring edges inside each inner ring (including the
    wrap edge); outer hops connect position-aligned ranks of neighboring
    rings.  With w = d_cp the outer hop degenerates to the wrap edge of
    the single ring.
    """
    w = par.inner_ring
    n_rings = par.d_cp // w
    inner = INTRA_NVLINK
    if w > 1:
        for ring in range(n_rings):
            for p in range(w):
                a = ring * w + p
                b = ring * w + (p + 1) % w
                if _hop_class(grid, a, b) == INTER_NIC:
                    inner = INTER_NIC
    if n_rings == 1:
        outer = _hop_class(grid, w - 1, 0) if w > 1 else INTRA_NVLINK
    else:
        outer = INTRA_NVLINK
        for ring in range(n_rings):
            for p in range(w):
                a = ring * w + p
                b = ((ring + 1) % n_rings) * w + p
                if _hop_class(grid, a, b) == INTER_NIC:
                    outer = INTER_NIC
    return inner, outer


def outer_ring_contention(par: ParallelConfig, cluster: ClusterConfig,
                          link: str) -> float:
    """NIC sharing among the w concurrent outer-ring flows per node."""
    if link != INTER_NIC:
        return 1.0
    flows = min(par.inner_ring, cluster.gpus_per_node)
    return max(1.0, flows / cluster.nics_per_node)


def inner_ring_time(model: ModelConfig, par: ParallelConfig,
                    cluster: ClusterConfig, grid: RankGrid,
                    phase: str = "fwd") -> float:
    """Execution time of one inner ring: A*(w-1) + B.

    A overlaps compute with the inner-ring transfer, B with the outer-ring
    transfer; each is the max of the two overlapped durations.
    """
    t_comp = comp_time(model, par, cluster, phase)
    nbytes = size_kv(model, par) * (BWD_P2P_FACTOR if phase == "bwd" else 1)
    inner_link, outer_link = ring_hop_classes(par, grid)
    t_inner = p2p_time(nbytes, inner_link, 1.0, cluster)
    t_outer = p2p_time(nbytes, outer_link,
                       outer_ring_contention(par, cluster, outer_link), cluster)
    a = max(t_comp, t_inner)
    b = max(t_comp, t_outer)
    return a * (par.inner_ring - 1) + b


def alltoall_volume(model: ModelConfig, par: ParallelConfig) -> int:
    """Bytes each GPU sends per SeqAlltoAll phase (Q, K, V, and output)."""
    total = 2 * size_q(model, par) + size_kv(model, par)
    return total * (par.d_hp - 1) // par.d_hp


def hp_group_link(grid: RankGrid) -> str:
    """Link class of SeqAlltoAll: intra iff every HP group fits one node."""
    for j in range(grid.d_cp):
        nodes = {grid.node_of(r) for r in grid.hp_group(j)}
        if len(nodes) > 1:
            return INTER_NIC
    return INTRA_NVLINK


def alltoall_time(volume: float, grid: RankGrid,
                  cluster: ClusterConfig) -> float:
    """One SeqAlltoAll collective; inter-node senders share the node NICs."""
    link = hp_group_link(grid)
    if link == INTRA_NVLINK:
        return cluster.alltoall_latency + volume / cluster.nvlink_bw
    senders = min(grid.d_sp, cluster.gpus_per_node)
    contention = max(1.0, senders / cluster.nics_per_node)
    return cluster.alltoall_latency + volume * contention / cluster.nic_bw


@dataclass(frozen=True)
class CostReport:
    """Analytic time/volume breakdown of one attention layer fwd+bwd."""

    t_comp_fwd: float
    t_comp_bwd: float
    size_kv: int
    size_q: int
    size_out: int
    t_p2p_inner: float
    t_p2p_outer: float
    t_inner_ring_fwd: float
    t_inner_ring_bwd: float
    t_seqalltoall: float
    objective: float
    link_volumes: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def objective(model: ModelConfig, par: ParallelConfig, cluster: ClusterConfig,
              grid: RankGrid) -> CostReport:
    """Exposed time to minimize: SeqAlltoAll plus all inner-ring spans."""
    t_cf = comp_time(model, par, cluster, "fwd")
    t_cb = comp_time(model, par, cluster, "bwd")
    skv = size_kv(model, par)
    inner_link, outer_link = ring_hop_classes(par, grid)
    t_p2p_inner = p2p_time(skv, inner_link, 1.0, cluster)
    t_p2p_outer = p2p_time(
        skv, outer_link, outer_ring_contention(par, cluster, outer_link),
        cluster)
    ring_fwd = inner_ring_time(model, par, cluster, grid, "fwd")
    ring_bwd = inner_ring_time(model, par, cluster, grid, "bwd")
    volume = alltoall_volume(model, par)
    t_a2a = 2 * alltoall_time(volume, grid, cluster) if par.d_hp > 1 else 0.0
    n_rings = par.d_cp // par.inner_ring
    total = t_a2a + (ring_fwd + ring_bwd) * n_rings
    ring_bytes = skv * (par.d_cp - 1) if par.d_cp > 1 else 0
    return CostReport(
        t_comp_fwd=t_cf,
        t_comp_bwd=t_cb,
        size_kv=skv,
        size_q=size_q(model, par),
        size_out=size_out(model, par),
        t_p2p_inner=t_p2p_inner,
        t_p2p_outer=t_p2p_outer,
        t_inner_ring_fwd=ring_fwd,
        t_inner_ring_bwd=ring_bwd,
        t_seqalltoall=t_a2a,
        objective=total,
        link_volumes={
            "ring_p2p_fwd_bytes": ring_bytes,
            "ring_p2p_bwd_bytes": ring_bytes * BWD_P2P_FACTOR,
            "alltoall_bytes_per_phase": volume,
        },
    )


@dataclass(frozen=True)
class MemoryReport:
    """Per-GPU memory model; all fields in bytes."""

    activation_per_layer: int
    scpp_extra_per_layer: int
    kv_comm_buffers: int
    model_state_per_gpu: int

    def to_dict(self) -> dict:
        return asdict(self)


# Adam mixed precision: FP16 weight+grad, FP32 master weight and moments.
MODEL_STATE_BYTES_PER_PARAM = 18


def transformer_params(model: ModelConfig) -> int:
    # 4*D^2 attention projections + 8*D^2 gated FFN per layer
    return 12 * model.layers * model.hidden ** 2


def memory_estimate(model: ModelConfig, par: ParallelConfig,
                    checkpoint: str = "full",
                    zero_shard_degree: int = 1) -> MemoryReport:
    """Activation, checkpoint, comm-buffer, and model-state memory.

    checkpoint: "full" stores only the layer input; "scpp" additionally
    keeps attention output + lse; "none" keeps QKV + lse per layer.
    """
    max_shard = par.d_dp * par.d_sp
    if zero_shard_degree < 1 or zero_shard_degree > max_shard:
        raise ValueError(
            f"zero_shard_degree must be in [1, d_dp*d_sp={max_shard}]")
    s, d, h = model.seq_len, model.hidden, model.heads
    d_sp = par.d_sp
    act_input = model.elem_bytes * s * d // d_sp
    lse = model.lse_bytes * s * h // d_sp
    if checkpoint == "full":
        activation, extra = act_input, 0
    elif checkpoint == "scpp":
        activation = act_input
        extra = act_input + lse
    elif checkpoint == "none":
        activation = 3 * act_input + lse
        extra = 0
    else:
        raise ValueError(f"unknown checkpoint mode {checkpoint!r}")
    n_buffers = 1 if par.inner_ring == par.d_cp else 2
    model_state = transformer_params(model) * MODEL_STATE_BYTES_PER_PARAM
    return MemoryReport(
        activation_per_layer=activation,
        scpp_extra_per_layer=extra,
        kv_comm_buffers=n_buffers * size_kv(model, par),
        model_state_per_gpu=math.ceil(model_state / zero_shard_degree),
    )


@dataclass(frozen=True)
class ScalabilityReport:
    mode: str
    max_d_sp: int | None  # None = unbounded
    max_d_dp: int
    max_gpus: int | None

    def to_dict(self) -> dict:
        return asdict(self)


def scalability(model: ModelConfig, mode: str = "2d") -> ScalabilityReport:
    """GPU ceiling under the global-batch constraint.

    Head-parallel-only ("ulysses") caps d_sp at H even with KV
    replication; the 2D grid has no sequence-parallel ceiling.
    """
    if model.global_batch < model.seq_len:
        raise ValueError("global batch must be at least one sequence")
    max_d_dp = model.global_batch // model.seq_len
    if mode == "ulysses":
        return ScalabilityReport("ulysses", model.heads, max_d_dp,
                                 model.heads * max_d_dp)
    if mode == "2d":
        return ScalabilityReport("2d", None, max_d_dp, None)
    raise ValueError(f"unknown scalability mode {mode!r}")


def bubble_rate(pipeline_stages: int, model: ModelConfig,
                d_dp: int) -> float:
    """1F1B pipeline idle fraction (p-1)/m with m micro-batches."""
    micro_batches = model.global_batch // (model.seq_len * d_dp)
    if micro_batches < 1:
        raise ValueError("global batch too small for one micro-batch")
    return (pipeline_stages - 1) / micro_batches
