"""Discrete-event timeline of one attention layer forward + backward.

Each GPU owns one compute slot; transfers occupy directed link resources
and overlap freely with compute.  The inner-ring transfer for micro-step
t+1 starts when the sender holds the chunk; the outer-ring transfer is
launched at the sender's last inner micro-step, so with a uniform link
class the per-inner-ring span reproduces the closed form A*(w-1) + B.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .config import ClusterConfig, ModelConfig, ParallelConfig, build_rank_grid, validate
from .costs import (
    BWD_P2P_FACTOR,
    INTER_NIC,
    INTRA_NVLINK,
    alltoall_time,
    comp_time,
    outer_ring_contention,
    p2p_time,
    size_kv,
    size_out,
    size_q,
)

COMPUTE = "Compute"
P2P_SEND = "P2PSend"
P2P_RECV = "P2PRecv"
ALLTOALL = "AlltoAll"
SYNC = "Sync"


@dataclass(frozen=True)
class Event:
    rank: int
    kind: str
    start: float
    end: float
    resource: str
    tag: tuple  # (phase, outer_step, inner_step)

    def __post_init__(self):
        if self.end < self.start:
            raise ValueError("event ends before it starts")


@dataclass(frozen=True)
class Timeline:
    events: tuple[Event, ...]
    makespan: float
    exposed_comm: float
    per_link_busy: dict[str, float]

    def summary(self) -> dict:
        return {
            "makespan": self.makespan,
            "exposed_comm": self.exposed_comm,
            "per_link_busy": dict(sorted(self.per_link_busy.items())),
        }


class _Sim:
    def __init__(self):
        self.events: list[Event] = []
        self.link_free: dict[str, float] = {}

    def add(self, rank, kind, start, duration, resource, tag):
        ev = Event(rank, kind, start, start + duration, resource, tag)
        self.events.append(ev)
        return ev.end

    def transfer(self, src, dst, ready, duration, tag):
        link = f"link:{src}->{dst}"
        start = max(ready, self.link_free.get(link, 0.0))
        end = self.add(src, P2P_SEND, start, duration, link, tag)
        self.add(dst, P2P_RECV, start, duration, link + ":rx", tag)
        self.link_free[link] = end
        return end


def simulate(model: ModelConfig, par: ParallelConfig, cluster: ClusterConfig,
             grid=None) -> Timeline:
    """Deterministic event timeline for one layer's fwd and bwd phases."""
    report = validate(model, par, cluster)
    if not report.ok:
        raise ValueError("invalid configuration: " + "; ".join(report.violations))
    if grid is None:
        grid = build_rank_grid(par, cluster)
    w = par.inner_ring
    d_cp = par.d_cp
    n_rings = d_cp // w
    sim = _Sim()

    skv = size_kv(model, par)
    # Scatter moves Q and KV out, gather returns the output (or, in the
    # backward phase, the output gradient out and the QKV gradients back).
    frac = (par.d_hp - 1) / par.d_hp
    vol_scatter = {"fwd": (2 * size_q(model, par) + skv) * frac,
                   "bwd": size_out(model, par) * frac}
    vol_gather = {"fwd": size_out(model, par) * frac,
                  "bwd": (2 * size_q(model, par) + skv) * frac}

    def hop_duration(cp_a: int, cp_b: int, nbytes: float,
                     is_outer: bool) -> float:
        link = _pair_class(grid, cp_a, cp_b)
        contention = outer_ring_contention(par, cluster, link) if is_outer else 1.0
        return p2p_time(nbytes, link, contention, cluster)

    now = 0.0
    for phase in ("fwd", "bwd"):
        c = comp_time(model, par, cluster, phase)
        nbytes = skv * (BWD_P2P_FACTOR if phase == "bwd" else 1)

        if par.d_hp > 1:
            t_a2a = alltoall_time(vol_scatter[phase], grid, cluster)
            for rank in range(grid.d_sp):
                sim.add(rank, ALLTOALL, now, t_a2a, f"a2a:{rank}",
                        (phase, "scatter"))
            ring_start = now + t_a2a
        else:
            ring_start = now

        phase_end = ring_start
        for i in range(par.d_hp):
            end = _simulate_cp_group(sim, grid, i, par, c, nbytes,
                                     hop_duration, ring_start, phase,
                                     w, n_rings)
            phase_end = max(phase_end, end)

        if par.d_hp > 1:
            t_a2a = alltoall_time(vol_gather[phase], grid, cluster)
            for rank in range(grid.d_sp):
                sim.add(rank, ALLTOALL, phase_end, t_a2a, f"a2a:{rank}",
                        (phase, "gather"))
            phase_end += t_a2a
        now = phase_end

    events = tuple(sorted(sim.events,
                          key=lambda e: (e.start, e.rank, e.kind, e.resource)))
    makespan = max((e.end for e in events), default=0.0)
    compute_by_rank: dict[int, float] = {}
    busy: dict[str, float] = {}
    for e in events:
        if e.kind == COMPUTE:
            compute_by_rank[e.rank] = compute_by_rank.get(e.rank, 0.0) \
                + (e.end - e.start)
        elif e.kind in (P2P_SEND, ALLTOALL):
            busy[e.resource] = busy.get(e.resource, 0.0) + (e.end - e.start)
    exposed = makespan - max(compute_by_rank.values(), default=0.0)
    return Timeline(events, makespan, exposed, busy)


def _pair_class(grid, cp_a: int, cp_b: int) -> str:
    # classify per CP group pair; groups are symmetric so use the worst
    for i in range(grid.d_hp):
        a, b = grid.rank_of(i, cp_a), grid.rank_of(i, cp_b)
        if grid.node_of(a) != grid.node_of(b):
            return INTER_NIC
    return INTRA_NVLINK


def _simulate_cp_group(sim, grid, hp_index, par, c, nbytes, hop_duration,
                       t0, phase, w, n_rings):
    d_cp = par.d_cp
    ranks = [grid.rank_of(hp_index, j) for j in range(d_cp)]
    avail = {j: t0 for j in range(d_cp)}      # chunk for the current step
    comp_end = {j: t0 for j in range(d_cp)}
    comp_start = {j: t0 for j in range(d_cp)}
    next_avail: dict[int, float] = {}
    for s in range(d_cp):
        o, t = divmod(s, w)
        for j in range(d_cp):
            start = max(comp_end[j], avail[j])
            comp_start[j] = start
            comp_end[j] = sim.add(ranks[j], COMPUTE, start, c,
                                  f"compute:{ranks[j]}", (phase, o, t))
        if s + 1 >= d_cp:
            break
        if t < w - 1:
            # rotate chunks within each inner ring: j receives from j-1
            for j in range(d_cp):
                ring, pos = divmod(j, w)
                jp = ring * w + (pos - 1) % w
                dur = hop_duration(jp, j, nbytes, is_outer=False)
                next_avail[j] = sim.transfer(ranks[jp], ranks[j],
                                             avail[jp], dur, (phase, o, t))
        else:
            # outer rotation, launched at the sender's last inner micro-step
            for j in range(d_cp):
                ring, pos = divmod(j, w)
                jp = ((ring - 1) % n_rings) * w + pos
                dur = hop_duration(jp, j, nbytes, is_outer=True)
                next_avail[j] = sim.transfer(ranks[jp], ranks[j],
                                             comp_start[jp], dur,
                                             (phase, o, t))
        avail = dict(next_avail)
    return max(comp_end.values())


def export_trace(timeline: Timeline, path: str,
                 grid_nodes: dict[int, int] | None = None) -> None:
    """Write Chrome Trace Event Format JSON ("X" complete events, µs)."""
    records = []
    for e in timeline.events:
        records.append({
            "ph": "X",
            "name": f"{e.kind} {':'.join(str(x) for x in e.tag)}",
            "ts": e.start * 1e6,
            "dur": (e.end - e.start) * 1e6,
            "pid": grid_nodes.get(e.rank, 0) if grid_nodes else 0,
            "tid": e.rank,
            "args": {"resource": e.resource},
        })
    with open(path, "w") as f:
        json.dump(records, f, indent=1, sort_keys=True)
        f.write("\n")
