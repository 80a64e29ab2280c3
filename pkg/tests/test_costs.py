"""Analytic cost, volume, memory, and scalability formulas."""

import math

import pytest

from attn2d import (
    ClusterConfig,
    ModelConfig,
    ParallelConfig,
    Placement,
    alltoall_volume,
    build_rank_grid,
    comp_time,
    memory_estimate,
    objective,
    p2p_time,
    scalability,
    size_kv,
)
from attn2d.costs import (
    BWD_COMP_FACTOR,
    INTER_NIC,
    INTRA_NVLINK,
    bubble_rate,
    outer_ring_contention,
    ring_hop_classes,
    size_q,
    transformer_params,
)


def model128k(**kw):
    base = dict(seq_len=131072, heads=32, kv_heads=32, hidden=4096,
                global_batch=131072 * 64)
    base.update(kw)
    return ModelConfig(**base)


def grid_for(par, cluster=None):
    return build_rank_grid(par, cluster or ClusterConfig())


class TestCompTime:
    def test_backward_is_three_times_forward(self):
        model = model128k()
        par = ParallelConfig(d_hp=4, d_cp=4)
        fwd = comp_time(model, par, ClusterConfig(), "fwd")
        bwd = comp_time(model, par, ClusterConfig(), "bwd")
        assert bwd == BWD_COMP_FACTOR * fwd

    def test_quadratic_in_sequence_length(self):
        par = ParallelConfig(d_hp=1, d_cp=4)
        cluster = ClusterConfig()
        short = comp_time(model128k(seq_len=65536), par, cluster)
        long = comp_time(model128k(), par, cluster)
        assert long == pytest.approx(4 * short)

    def test_splits_over_both_dimensions(self):
        cluster = ClusterConfig()
        whole = comp_time(model128k(), ParallelConfig(1, 1), cluster)
        split = comp_time(model128k(), ParallelConfig(d_hp=2, d_cp=4), cluster)
        # d_cp * d_sp = 4 * 8 = 32x less work per micro-step
        assert split == pytest.approx(whole / 32)


class TestSizes:
    def test_mha_kv_chunk_is_256mib(self):
        par = ParallelConfig(d_hp=1, d_cp=8)
        assert size_kv(model128k(), par) == 256 * 2**20

    def test_gqa_kv_chunk_is_64mb(self):
        par = ParallelConfig(d_hp=1, d_cp=8)
        assert size_kv(model128k(kv_heads=8), par) == 67_108_864

    def test_full_head_split_restores_mha_volume(self):
        mha = size_kv(model128k(), ParallelConfig(d_hp=32, d_cp=2))
        gqa = size_kv(model128k(kv_heads=8), ParallelConfig(d_hp=32, d_cp=2))
        assert gqa == mha

    def test_independent_of_cp_split_shape(self):
        a = size_kv(model128k(), ParallelConfig(d_hp=1, d_cp=8))
        b = size_kv(model128k(), ParallelConfig(d_hp=8, d_cp=1))
        assert a == b

    def test_fp32_elements_double_the_chunk(self):
        par = ParallelConfig(d_hp=1, d_cp=8)
        assert size_kv(model128k(elem_bytes=4), par) == 512 * 2**20


class TestP2pTime:
    def test_zero_bytes_is_pure_latency(self):
        cluster = ClusterConfig()
        assert p2p_time(0, INTRA_NVLINK, 1.0, cluster) == cluster.p2p_latency_intra
        assert p2p_time(0, INTER_NIC, 1.0, cluster) == cluster.p2p_latency_inter

    def test_64mib_inter_node(self):
        cluster = ClusterConfig(nic_bw=25e9)
        t = p2p_time(64 * 2**20, INTER_NIC, 1.0, cluster)
        assert t - cluster.p2p_latency_inter == pytest.approx(64 * 2**20 / 25e9)
        assert t - cluster.p2p_latency_inter == pytest.approx(2.684e-3, rel=1e-3)

    def test_contention_scales_bandwidth_term(self):
        cluster = ClusterConfig()
        base = p2p_time(1e8, INTER_NIC, 1.0, cluster) - cluster.p2p_latency_inter
        shared = p2p_time(1e8, INTER_NIC, 2.0, cluster) - cluster.p2p_latency_inter
        assert shared == pytest.approx(2 * base)

    def test_rejects_negative_bytes(self):
        with pytest.raises(ValueError):
            p2p_time(-1, INTER_NIC, 1.0, ClusterConfig())


class TestLinkClasses:
    def test_single_node_ring_is_all_nvlink(self):
        par = ParallelConfig(d_hp=1, d_cp=8, inner_ring=4)
        inner, outer = ring_hop_classes(par, grid_for(par))
        assert inner == INTRA_NVLINK and outer == INTRA_NVLINK

    def test_cross_node_outer_ring(self):
        par = ParallelConfig(d_hp=1, d_cp=16, inner_ring=8)
        inner, outer = ring_hop_classes(par, grid_for(par))
        assert inner == INTRA_NVLINK and outer == INTER_NIC

    def test_classic_ring_wrap_edge_defines_outer(self):
        # w = d_cp spanning two nodes: the wrap hop crosses nodes
        par = ParallelConfig(d_hp=1, d_cp=16, inner_ring=16)
        inner, outer = ring_hop_classes(par, grid_for(par))
        assert inner == INTER_NIC and outer == INTER_NIC

    def test_contention_only_applies_inter_node(self):
        cluster = ClusterConfig(gpus_per_node=8, nics_per_node=4)
        par = ParallelConfig(d_hp=1, d_cp=16, inner_ring=8)
        assert outer_ring_contention(par, cluster, INTRA_NVLINK) == 1.0
        assert outer_ring_contention(par, cluster, INTER_NIC) == 2.0


class TestRingAndObjective:
    def test_inner_ring_formula(self):
        model = model128k()
        par = ParallelConfig(d_hp=1, d_cp=16, inner_ring=8)
        cluster = ClusterConfig()
        grid = grid_for(par, cluster)
        report = objective(model, par, cluster, grid)
        a = max(report.t_comp_fwd, report.t_p2p_inner)
        b = max(report.t_comp_fwd, report.t_p2p_outer)
        assert report.t_inner_ring_fwd == pytest.approx(a * 7 + b)

    def test_alltoall_volume_zero_without_head_split(self):
        assert alltoall_volume(model128k(), ParallelConfig(d_hp=1, d_cp=8)) == 0

    def test_alltoall_volume_mha_two_way(self):
        model = model128k()
        par = ParallelConfig(d_hp=2, d_cp=4)
        # q + out + kv pair, half retained locally
        expected = (2 * size_q(model, par) + size_kv(model, par)) // 2
        assert alltoall_volume(model, par) == expected

    def test_objective_sums_phases(self):
        model = model128k()
        par = ParallelConfig(d_hp=4, d_cp=16, inner_ring=4)
        cluster = ClusterConfig()
        report = objective(model, par, cluster, grid_for(par, cluster))
        n_rings = 4
        assert report.objective == pytest.approx(
            report.t_seqalltoall
            + (report.t_inner_ring_fwd + report.t_inner_ring_bwd) * n_rings)

    def test_no_alltoall_term_without_head_split(self):
        model = model128k()
        par = ParallelConfig(d_hp=1, d_cp=8)
        report = objective(model, par, ClusterConfig(), grid_for(par))
        assert report.t_seqalltoall == 0.0

    def test_head_split_beats_pure_ring_for_mha_128k(self):
        model = model128k()
        cluster = ClusterConfig()

        def best_over_w(d_hp):
            d_cp = 64 // d_hp
            vals = []
            for w in range(1, d_cp + 1):
                if d_cp % w:
                    continue
                par = ParallelConfig(d_hp=d_hp, d_cp=d_cp, inner_ring=w)
                vals.append(objective(model, par, cluster,
                                      grid_for(par, cluster)).objective)
            return min(vals)

        assert best_over_w(8) < best_over_w(1)

    def test_wider_inner_ring_helps_at_cp16(self):
        model = model128k()
        cluster = ClusterConfig()
        times = {}
        for w in (1, 4):
            par = ParallelConfig(d_hp=4, d_cp=16, inner_ring=w,
                                 placement=Placement.CONTEXT_FIRST)
            times[w] = objective(model, par, cluster,
                                 grid_for(par, cluster)).objective
        assert times[4] <= times[1]


class TestMemory:
    def test_checkpoint_modes_ordering(self):
        model = model128k(layers=4)
        par = ParallelConfig(d_hp=2, d_cp=4)
        full = memory_estimate(model, par, "full")
        scpp = memory_estimate(model, par, "scpp")
        none = memory_estimate(model, par, "none")
        assert full.scpp_extra_per_layer == 0
        act = model.elem_bytes * model.seq_len * model.hidden // par.d_sp
        lse = model.lse_bytes * model.seq_len * model.heads // par.d_sp
        assert scpp.scpp_extra_per_layer == act + lse
        assert none.activation_per_layer == 3 * act + lse

    def test_classic_ring_needs_single_buffer(self):
        model = model128k()
        one = memory_estimate(model, ParallelConfig(d_hp=1, d_cp=8, inner_ring=8))
        two = memory_estimate(model, ParallelConfig(d_hp=1, d_cp=8, inner_ring=4))
        assert one.kv_comm_buffers == size_kv(model, ParallelConfig(1, 8))
        assert two.kv_comm_buffers == 2 * one.kv_comm_buffers

    def test_zero_sharding_divides_model_state(self):
        model = model128k(layers=8)
        par = ParallelConfig(d_hp=2, d_cp=4, d_dp=4)
        whole = memory_estimate(model, par, zero_shard_degree=1)
        sharded = memory_estimate(model, par, zero_shard_degree=32)
        assert whole.model_state_per_gpu == 18 * transformer_params(model)
        assert sharded.model_state_per_gpu == \
            math.ceil(whole.model_state_per_gpu / 32)

    def test_shard_degree_bounded_by_grid(self):
        par = ParallelConfig(d_hp=2, d_cp=4, d_dp=2)
        with pytest.raises(ValueError):
            memory_estimate(model128k(), par, zero_shard_degree=17)


class TestScalability:
    def test_head_parallel_ceiling(self):
        model = ModelConfig(seq_len=2**20, heads=32, kv_heads=32, hidden=4096,
                            global_batch=4 * 2**20)
        report = scalability(model, "ulysses")
        assert report.max_d_sp == 32
        assert report.max_d_dp == 4
        assert report.max_gpus == 128

    def test_2d_is_unbounded_in_sequence_dim(self):
        model = ModelConfig(seq_len=2**20, heads=32, kv_heads=32, hidden=4096,
                            global_batch=4 * 2**20)
        report = scalability(model, "2d")
        assert report.max_d_sp is None and report.max_gpus is None
        assert report.max_d_dp == 4

    def test_bubble_rate(self):
        model = model128k(global_batch=131072 * 64)
        assert bubble_rate(4, model, d_dp=8) == pytest.approx(3 / 8)
