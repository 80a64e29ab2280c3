"""Command-line entry point: verify, simulate, plan, scale."""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .config import (
    ClusterConfig,
    ConfigError,
    ModelConfig,
    ParallelConfig,
    Placement,
    load_config,
    validate,
)
from .costs import scalability
from .oracle import DenseTensor, full_attention
from .planner import plan as build_plan
from .planner import write_plan
from .ring import run_2d_attention
from .timeline import export_trace, simulate

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2

TOLERANCE = {"f64": 1e-10, "f32": 1e-5}


def _rng(seed: int) -> np.random.Generator:
    # Philox is counter-based, so streams are identical across platforms.
    return np.random.Generator(np.random.Philox(seed))


def _random_qkv(rng, heads, kv_heads, seq_len, head_dim, dtype):
    def tensor(h):
        vals = rng.standard_normal((h, seq_len, head_dim)).astype(dtype)
        return DenseTensor(vals, np.arange(seq_len))
    return tensor(heads), tensor(kv_heads), tensor(kv_heads)


def _verify_lattice(args) -> int:
    dtype = np.float64 if args.precision == "f64" else np.float32
    tol = TOLERANCE[args.precision]
    if args.smax > 256:
        print("error: verify is desk-scale only (S <= 256)", file=sys.stderr)
        return EXIT_CONFIG
    if args.dsp is not None and args.seq is not None \
            and args.seq % (2 * args.dsp) != 0:
        print(f"error: S={args.seq} not divisible by 2*d_sp={2 * args.dsp}",
              file=sys.stderr)
        return EXIT_CONFIG

    heads, hidden = 4, 32
    kv_choices = (2, 4)
    seqs = (args.seq,) if args.seq else (32, 64)
    sps = (args.dsp,) if args.dsp else (1, 2, 4, 8)
    cluster = ClusterConfig()
    rng = _rng(args.seed)
    worst = 0.0
    failures = []
    first = True
    for kv_heads in kv_choices:
        for seq_len in seqs:
            if seq_len > args.smax:
                continue
            model = ModelConfig(seq_len=seq_len, heads=heads,
                                kv_heads=kv_heads, hidden=hidden)
            for causal in (False, True):
                q, k, v = _random_qkv(rng, heads, kv_heads, seq_len,
                                      model.head_dim, dtype)
                oracle, _ = full_attention(q, k, v, causal)
                for d_sp in sps:
                    if seq_len % (2 * d_sp) != 0:
                        continue
                    for d_hp in (1, 2, 4):
                        if d_sp % d_hp or d_hp > heads:
                            continue
                        d_cp = d_sp // d_hp
                        for w in (x for x in (1, 2, 4, 8) if d_cp % x == 0
                                  and x <= d_cp):
                            for placement in Placement:
                                par = ParallelConfig(
                                    d_hp=d_hp, d_cp=d_cp, inner_ring=w,
                                    placement=placement)
                                out = run_2d_attention(q, k, v, model, par,
                                                       cluster, causal)
                                values = out.values
                                if args.inject_fault and first:
                                    values = -values
                                    first = False
                                delta = float(np.max(np.abs(
                                    values - oracle.values)))
                                worst = max(worst, delta)
                                name = (f"H={heads} H_kv={kv_heads} "
                                        f"S={seq_len} causal={causal} "
                                        f"d_hp={d_hp} d_cp={d_cp} w={w} "
                                        f"{placement.value}")
                                print(f"{name}: max|delta|={delta:.3e}")
                                if delta > tol:
                                    failures.append(name)
    if failures:
        print(f"FAIL: {len(failures)} configuration(s) exceed {tol:g}:")
        for name in failures:
            print(f"  {name}")
        return EXIT_FAIL
    print(f"OK: all configurations within {tol:g} (worst {worst:.3e})")
    return EXIT_OK


def _cmd_verify(args) -> int:
    if args.config:
        try:
            load_config(args.config)
        except ConfigError as e:
            print(f"error: {e}", file=sys.stderr)
            return EXIT_CONFIG
    return _verify_lattice(args)


def _load(args):
    model, par, cluster = load_config(args.config)
    report = validate(model, par, cluster)
    if not report.ok:
        raise ConfigError("invalid configuration: "
                          + "; ".join(report.violations))
    return model, par, cluster


def _cmd_simulate(args) -> int:
    model, par, cluster = _load(args)
    timeline = simulate(model, par, cluster)
    if args.trace:
        from .config import build_rank_grid
        grid = build_rank_grid(par, cluster)
        nodes = {r: grid.node_of(r) for r in range(grid.d_sp)}
        export_trace(timeline, args.trace, nodes)
    summary = timeline.summary()
    text = json.dumps(summary, indent=2, sort_keys=True) + "\n"
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
    print(f"makespan: {summary['makespan'] * 1e3:.3f} ms, "
          f"exposed comm: {summary['exposed_comm'] * 1e3:.3f} ms")
    return EXIT_OK


def _cmd_plan(args) -> int:
    model, par, cluster = _load(args)
    d_sp = args.gpus if args.gpus else par.d_sp
    entries = build_plan(model, cluster, d_sp, key=args.key,
                         with_sim=args.key == "sim")
    if args.out:
        write_plan(entries, args.out, args.format)
    best = entries[0]
    print(f"best: d_hp={best.par.d_hp} d_cp={best.par.d_cp} "
          f"w={best.par.inner_ring} {best.par.placement.value} "
          f"objective={best.cost.objective * 1e3:.3f} ms")
    return EXIT_OK


def _cmd_scale(args) -> int:
    model, _, _ = _load(args)
    report = {mode: scalability(model, mode).to_dict()
              for mode in ("ulysses", "2d")}
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
    print(text, end="")
    return EXIT_OK


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="attn2d",
        description="Functional model of head x context parallel attention")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required,
                        help="JSON config with model/parallel/cluster")
        sp.add_argument("--out", help="output file path")
        sp.add_argument("--format", choices=("json", "csv"), default="json")
        sp.add_argument("--seed", type=int, default=42)
        sp.add_argument("--precision", choices=("f32", "f64"), default="f64")

    sp = sub.add_parser("verify",
                        help="check distributed outputs against the oracle")
    common(sp, config_required=False)
    sp.add_argument("--smax", type=int, default=64,
                    help="largest sequence length to test (<= 256)")
    sp.add_argument("--seq", type=int, help="test only this sequence length")
    sp.add_argument("--dsp", type=int, help="test only this SP degree")
    sp.add_argument("--inject-fault", action="store_true",
                    help="flip one output's sign to prove detection works")
    sp.set_defaults(func=_cmd_verify)

    sp = sub.add_parser("simulate", help="discrete-event timeline of a layer")
    common(sp)
    sp.add_argument("--trace", help="write Chrome trace JSON here")
    sp.set_defaults(func=_cmd_simulate)

    sp = sub.add_parser("plan", help="rank parallel configurations")
    common(sp)
    sp.add_argument("--gpus", type=int, help="SP degree to plan for")
    sp.add_argument("--key", choices=("objective", "sim"),
                    default="objective")
    sp.set_defaults(func=_cmd_plan)

    sp = sub.add_parser("scale", help="GPU scalability ceilings")
    common(sp)
    sp.set_defaults(func=_cmd_scale)
    return p


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
