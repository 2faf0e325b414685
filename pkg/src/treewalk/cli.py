"""Command-line interface.

Subcommands map one-to-one onto the package surface::

    treewalk env sample|validate|export ...
    treewalk line ...
    treewalk measure ...
    treewalk chain ...
    treewalk walk ...
    treewalk limits ks|eta|tilted|swalk ...
    treewalk experiment list
    treewalk experiment run NAME ...

Exit status: 0 on success, 1 when an experiment misses an acceptance
threshold (or a runtime failure), 2 on usage or configuration errors.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .chain import build_chain, export_chain_csv, export_distribution_csv, stationary_distribution, distribution_at
from .config import dump_config, law_from_config, load_config
from .errors import ConfigError, TreewalkError
from .experiments import EXPERIMENT_NAMES, default_spec, run_experiment
from .frontier import grow_to_frontier, partition_functions
from .limits import ks_cdf, sample_eta_batch, s_walk_stopping_batch, scaling_density, tilted_walk_law
from .measures import export_measure_csv, invariant_measure
from .tree import export_edge_list, sample_tree
from .walk import WalkConfig, simulate_path


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="flat key-value config file (INI sections)")
    parser.add_argument("--seed", type=int, default=None, help="master seed (overrides config)")
    parser.add_argument("--out-dir", type=Path, default=None, help="output directory")
    parser.add_argument("--threads", type=int, default=None, help="worker processes for experiments")
    parser.add_argument(
        "--format", choices=("csv", "jsonl"), default="csv", help="primary output format"
    )


def _load(args) -> dict:
    if args.config is not None:
        return load_config(args.config)
    return {}


def _law(args):
    return law_from_config(_load(args))


def _seed(args, cfg) -> int:
    if args.seed is not None:
        return args.seed
    return int(cfg.get("run", {}).get("seed", "0"))


def _add_env(sub) -> None:
    p = sub.add_parser("env", help="sample, validate or export environments")
    p.add_argument("action", choices=("sample", "validate", "export"))
    _common(p)
    p.add_argument("--depth", type=int, default=8, help="generations to fill before export")
    p.add_argument("--proxy-depth", type=int, default=25, help="survival conditioning depth")
    p.add_argument("--out", type=Path, default=None, help="edge-list CSV path")


def _add_line(sub) -> None:
    p = sub.add_parser("line", help="grow a stopping frontier and report its partition sums")
    _common(p)
    p.add_argument("--r", type=float, default=20.0, help="stopping level (> 1)")
    p.add_argument("--depth-cap", type=int, default=40)
    p.add_argument("--node-budget", type=int, default=500_000)
    p.add_argument("--out", type=Path, default=None, help="frontier node CSV path")


def _add_measure(sub) -> None:
    p = sub.add_parser("measure", help="export the stationary law of the reflected walk")
    _common(p)
    p.add_argument("--r", type=float, default=20.0)
    p.add_argument("--depth-cap", type=int, default=40)
    p.add_argument("--out", type=Path, default=Path("measure.csv"))


def _add_chain(sub) -> None:
    p = sub.add_parser("chain", help="export the reflected chain and check stationarity")
    _common(p)
    p.add_argument("--r", type=float, default=20.0)
    p.add_argument("--depth-cap", type=int, default=40)
    p.add_argument("--out", type=Path, default=Path("chain.csv"))
    p.add_argument("--distribution-at", type=int, default=None, help="also export the n-step law")


def _add_walk(sub) -> None:
    p = sub.add_parser("walk", help="Monte Carlo replicas of the biased walk")
    _common(p)
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--replicas", type=int, default=100)
    p.add_argument("--r", type=float, default=None, help="reflecting level (free walk if absent)")
    p.add_argument("--depth-cap", type=int, default=40)
    p.add_argument("--record-at", type=str, default="", help="comma-separated times")
    p.add_argument("--out", type=Path, default=None, help="occupancy-law CSV path")


def _add_limits(sub) -> None:
    p = sub.add_parser("limits", help="limit-law evaluations and samplers")
    p.add_argument("action", choices=("ks", "density", "eta", "tilted", "swalk"))
    _common(p)
    p.add_argument("--x", type=float, default=1.0, help="evaluation point (ks, density)")
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--grid-steps", type=int, default=2000)
    p.add_argument("--r", type=float, default=100.0, help="stopping level for swalk")


def _add_experiment(sub) -> None:
    p = sub.add_parser("experiment", help="named desk-scale experiments")
    p.add_argument("action", choices=("list", "run"))
    p.add_argument("name", nargs="?", help="experiment name (for run)")
    _common(p)
    p.add_argument("--environments", type=int, default=None)
    p.add_argument("--grid", type=str, default=None, help="comma-separated grid override")
    p.add_argument("--quiet", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="treewalk",
        description=(
            "Simulation and verification lab for randomly biased random walks on "
            "Galton-Watson trees in the critical regime: environments, stopping "
            "frontiers, invariant measures, exact chain oracles, Monte Carlo walkers, "
            "limit laws, and a reproducible experiment catalogue."
        ),
    )
    parser.add_argument("--version", action="version", version=f"treewalk {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_env(sub)
    _add_line(sub)
    _add_measure(sub)
    _add_chain(sub)
    _add_walk(sub)
    _add_limits(sub)
    _add_experiment(sub)
    return parser


def _cmd_env(args) -> int:
    cfg = _load(args)
    law = law_from_config(cfg)
    if args.action == "validate":
        r1, r2 = law.boundary_residuals()
        print(f"family            {law.family}")
        print(f"a, b, p, q0       {law.a} {law.b} {law.p} {law.q0}")
        print(f"mean residual     {r1:.3e}")
        print(f"log-mean residual {r2:.3e}")
        print(f"sigma2            {law.sigma2!r}")
        print(f"survival prob     {law.survival_probability!r}")
        ok = abs(r1) < 1e-12 and abs(r2) < 1e-12
        print(f"criticality       {'ok' if ok else 'FAILED'}")
        return 0 if ok else 1
    seed = _seed(args, cfg)
    tree = sample_tree(law, seed, args.proxy_depth)
    tree.ensure_depth(args.depth)
    if args.action == "sample":
        print(f"seed {seed}: {tree.n_nodes} nodes after filling depth {args.depth}, "
              f"{tree.rejections} rejected attempts")
        return 0
    out = args.out or Path(f"tree_{seed}.csv")
    with out.open("w") as fh:
        n = export_edge_list(tree, fh)
    print(f"wrote {n} nodes to {out}")
    return 0


def _cmd_line(args) -> int:
    cfg = _load(args)
    law = law_from_config(cfg)
    seed = _seed(args, cfg)
    tree = sample_tree(law, seed)
    fr = grow_to_frontier(tree, args.r, args.depth_cap, args.node_budget)
    y, z = partition_functions(tree, fr)
    print(f"r {args.r}  depth_cap {args.depth_cap}")
    print(f"interior {len(fr.interior)}  frontier {len(fr.frontier)} "
          f"(line members {sum(fr.on_line)})")
    print(f"Y {y!r}")
    print(f"Z {z!r}")
    print(f"|Z - 2Y|/Z {abs(z - 2 * y) / z:.3e}")
    print(f"leaked_mass {fr.leaked_mass!r}  line_separated {fr.line_separated}")
    if args.out:
        with args.out.open("w") as fh:
            fh.write("node_id,depth,V,H,on_line\n")
            for x, on in zip(fr.frontier, fr.on_line):
                fh.write(f"{x},{tree.depth(x)},{tree.V(x)!r},{tree.H(x)!r},{str(on).lower()}\n")
        print(f"wrote frontier to {args.out}")
    return 0


def _cmd_measure(args) -> int:
    cfg = _load(args)
    law = law_from_config(cfg)
    seed = _seed(args, cfg)
    tree = sample_tree(law, seed)
    fr = grow_to_frontier(tree, args.r, args.depth_cap)
    mes = invariant_measure(tree, fr)
    with args.out.open("w") as fh:
        n = export_measure_csv(mes, fh)
    even, odd = mes.parity_masses()
    print(f"wrote {n} states to {args.out}; Z {mes.Z!r}; parity masses {even!r}/{odd!r}")
    return 0


def _cmd_chain(args) -> int:
    cfg = _load(args)
    law = law_from_config(cfg)
    seed = _seed(args, cfg)
    tree = sample_tree(law, seed)
    fr = grow_to_frontier(tree, args.r, args.depth_cap)
    ch = build_chain(tree, fr)
    with args.out.open("w") as fh:
        n = export_chain_csv(ch, fh)
    pi = stationary_distribution(ch, "direct")
    gap = float(np.abs(pi - ch.pi).max())
    print(f"wrote {n} transitions ({ch.n_states} states) to {args.out}")
    print(f"stationary solve vs closed form Linf {gap:.3e}")
    if args.distribution_at is not None:
        dist = distribution_at(ch, args.distribution_at)
        out = args.out.with_name(args.out.stem + f"_dist{args.distribution_at}.csv")
        with out.open("w") as fh:
            export_distribution_csv(ch, dist, fh)
        print(f"wrote {args.distribution_at}-step law to {out}")
    return 0


def _cmd_walk(args) -> int:
    cfg = _load(args)
    law = law_from_config(cfg)
    seed = _seed(args, cfg)
    tree = sample_tree(law, seed)
    reflect = None
    if args.r is not None:
        reflect = grow_to_frontier(tree, args.r, args.depth_cap)
    times = tuple(int(t) for t in args.record_at.split(",") if t.strip()) or (args.steps,)
    wc = WalkConfig(
        n_steps=args.steps,
        replicas=args.replicas,
        seed=seed,
        reflect=reflect,
        position_at=times,
        record_root_local_time=True,
        record_max_depth=True,
    )
    res = simulate_path(tree, wc)
    print(f"{args.replicas} replicas x {args.steps} steps "
          f"({'reflected at ' + str(args.r) if reflect else 'free walk'})")
    print(f"mean root local time {float(res.root_local_time.mean())!r}")
    print(f"max depth reached    {int(res.max_depth.max())}")
    if args.out:
        with args.out.open("w") as fh:
            fh.write("time,node_id,count\n")
            for t in sorted(res.laws):
                for node, cnt in sorted(res.laws[t].counts.items()):
                    fh.write(f"{t},{node},{cnt}\n")
        print(f"wrote occupancy laws to {args.out}")
    return 0


def _cmd_limits(args) -> int:
    cfg = _load(args)
    seed = _seed(args, cfg)
    if args.action == "ks":
        print(repr(ks_cdf(args.x)))
        return 0
    if args.action == "density":
        print(repr(scaling_density(args.x)))
        return 0
    if args.action == "eta":
        etas = sample_eta_batch(seed, args.samples, args.grid_steps)
        print(f"n {args.samples}  grid {args.grid_steps}")
        print(f"mean eta    {float(etas.mean())!r}")
        print(f"mean 1/eta  {float(np.mean(1.0 / etas))!r}  (target {math.sqrt(math.pi / 2)!r})")
        return 0
    law = law_from_config(cfg)
    tlaw = tilted_walk_law(law)
    if args.action == "tilted":
        print("increment,lambda,prob")
        for s, l, p in zip(tlaw.increments, tlaw.lambdas, tlaw.probs):
            print(f"{s!r},{l!r},{p!r}")
        print(f"# total mass {tlaw.total_mass()!r}  mean increment {tlaw.mean_increment()!r}")
        return 0
    ts = s_walk_stopping_batch(tlaw, args.r, args.samples, seed)
    print(f"r {args.r}  samples {args.samples}")
    print(f"mean stopping index {float(ts.mean())!r}  (1 + mean = {float(1 + ts.mean())!r})")
    return 0


def _cmd_experiment(args) -> int:
    if args.action == "list":
        for name in EXPERIMENT_NAMES:
            print(name)
        return 0
    if not args.name:
        print("experiment run requires a name", file=sys.stderr)
        return 2
    cfg = _load(args)
    grid = None
    if args.grid:
        grid = tuple(float(t) for t in args.grid.split(",") if t.strip())
    spec = default_spec(
        args.name,
        cfg,
        seed=args.seed,
        out_dir=args.out_dir,
        workers=args.threads,
        environments=args.environments,
        grid=grid,
    )
    result = run_experiment(spec)
    if not args.quiet:
        print(f"experiment {spec.name}: {len(result.rows)} rows in {result.wall_time:.1f}s")
        for k, v in result.verdicts.items():
            print(f"  {'PASS' if v else 'FAIL'}  {k}")
        for kind, path in result.files.items():
            print(f"  {kind}: {path}")
    return 0 if result.ok else 1


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "env": _cmd_env,
        "line": _cmd_line,
        "measure": _cmd_measure,
        "chain": _cmd_chain,
        "walk": _cmd_walk,
        "limits": _cmd_limits,
        "experiment": _cmd_experiment,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except TreewalkError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
