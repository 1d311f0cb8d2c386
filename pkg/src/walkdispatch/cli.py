"""Command-line front end: graph generation/validation, simulation
batches, mean-field integration, trajectory comparison, and walk-mixing
diagnostics.

All outputs are deterministic given the config seed: CSV numbers are
written with 17 significant digits and JSON is emitted with sorted keys,
so reruns of the same command produce byte-identical files (the run
manifest's wall-clock field is the one intentional exception).

Environment overrides: WALKDISPATCH_OUT_DIR (default output directory for
`simulate`) and WALKDISPATCH_JOBS (default worker count for multi-seed
batches).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from . import engine
from . import fluid as fluid_mod
from . import graph as graph_mod
from . import policy as policy_mod
from . import walker as walker_mod
from .errors import (BipartiteGraphError, ConfigError, GenerationError,
                     NumericalError, ParseError)

__all__ = ["main", "build_parser"]


# ---------------------------------------------------------------------------
# Shared I/O helpers


def _write_text(path, text):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _write_json(path, obj):
    _write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def format_trajectory_csv(times, xs):
    """CSV with header t,x1,...,xB; level 0 (identically 1) is omitted;
    every number keeps 17 significant digits."""
    B = xs.shape[1] - 1
    lines = ["t," + ",".join(f"x{i}" for i in range(1, B + 1))]
    for t, row in zip(times, xs):
        vals = ["%.17g" % t]
        vals.extend("%.17g" % v for v in row[1:])
        lines.append(",".join(vals))
    return "\n".join(lines) + "\n"


def read_trajectory_csv(path):
    """Inverse of format_trajectory_csv: returns (times, levels) with the
    implicit level-0 column of ones restored."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        cols = header.split(",")
        if cols[0] != "t" or any(c != f"x{i}" for i, c in
                                 enumerate(cols[1:], start=1)):
            raise ParseError(
                f"{path}: expected trajectory header 't,x1,...,xB', got "
                f"{header!r}")
        try:
            with warnings.catch_warnings():
                # An empty body is reported as ParseError below; silence
                # numpy's advisory warning about it.
                warnings.simplefilter("ignore")
                data = np.loadtxt(fh, delimiter=",", ndmin=2)
        except ValueError as exc:
            raise ParseError(f"{path}: malformed trajectory row: {exc}") \
                from exc
    if data.shape[0] == 0 or data.shape[1] != len(cols):
        raise ParseError(f"{path}: empty or ragged trajectory")
    times = data[:, 0]
    levels = np.hstack([np.ones((data.shape[0], 1)), data[:, 1:]])
    return times, levels


def _fluid_degree(policy):
    """Candidate-count d of the policy's mean-field law (None for global
    shortest-queue, which has no x^d law)."""
    if isinstance(policy, (policy_mod.NbrwPod, policy_mod.NbrwrPod,
                           policy_mod.IidPod)):
        return policy.d
    if isinstance(policy, policy_mod.RandomAssign):
        return 1
    return None


def _fluid_start(cfg, n):
    """Mean-field initial state matching the simulation's initial queues."""
    x0 = engine.tails(engine.initial_queues(cfg.init, n), n, cfg.B)
    return np.asarray(x0.x, dtype=float)


def _parse_fluid_init(spec, B):
    """Initial tail levels for the fluid command: empty, constant:<c>, or
    explicit:<x1,...,xB> given directly as levels in [0, 1]."""
    if spec == "empty":
        x = np.zeros(B + 1)
        x[0] = 1.0
        return x
    if spec.startswith("constant:"):
        try:
            c = int(spec[len("constant:"):])
        except ValueError:
            raise ConfigError(
                f"init 'constant:' needs an integer, got {spec!r}") from None
        if c < 0:
            raise ConfigError(f"init constant must be >= 0, got {c}")
        x = np.zeros(B + 1)
        x[:min(c, B) + 1] = 1.0
        return x
    if spec.startswith("explicit:"):
        body = spec[len("explicit:"):]
        try:
            levels = [float(part) for part in body.split(",")]
        except ValueError:
            raise ConfigError(
                f"init 'explicit:' needs comma-separated numbers, got "
                f"{body!r}") from None
        if len(levels) != B:
            raise ConfigError(
                f"init 'explicit:' lists {len(levels)} levels but B={B}")
        return np.concatenate([[1.0], levels])
    raise ConfigError(
        f"init must be 'empty', 'constant:<c>' or 'explicit:<x1,...,xB>', "
        f"got {spec!r}")


# ---------------------------------------------------------------------------
# graph


def _cmd_graph_generate(args):
    if args.cycle is not None:
        g = graph_mod.build_cycle(args.cycle)
        kind = "cycle"
    elif args.torus is not None:
        g = graph_mod.build_torus(args.torus)
        kind = "torus"
    elif args.lps is not None:
        g = graph_mod.build_lps(args.lps[0], args.lps[1])
        kind = "lps"
    else:
        n, k = args.random_regular
        g = graph_mod.build_random_regular(n, k, seed=args.seed)
        kind = "random-regular"
    graph_mod.write_edge_list(g, args.out)
    print(f"wrote {kind} graph: n={g.n} degree={g.k} -> {args.out}")
    return 0


def _cmd_graph_validate(args):
    g = graph_mod.read_edge_list(args.path)
    report = graph_mod.validate(g, tol=args.tol)
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    if report.bipartite:
        print("warning: graph is bipartite; non-backtracking walks do not "
              "mix on it", file=sys.stderr)
    return 0


# ---------------------------------------------------------------------------
# simulate


def _simulate_seed(cfg, g, seed):
    """One seed's full workload: sampled trajectory plus an exact
    time-averaged tail over the second half of the horizon (the same seed
    reproduces the same event path in both passes)."""
    cfg_s = dataclasses.replace(cfg, seed=seed)
    traj = engine.simulate_trajectory(cfg_s, g)
    stat = engine.run_stationary(cfg_s, g, burn_in=0.5 * cfg.T,
                                 horizon=cfg.T)
    return seed, traj, stat


def _run_seeds(cfg, g, seeds, jobs):
    if jobs > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(seeds))) as pool:
            return list(pool.map(_simulate_seed, [cfg] * len(seeds),
                                 [g] * len(seeds), seeds))
    return [_simulate_seed(cfg, g, seed) for seed in seeds]


def _cmd_simulate(args):
    t_start = time.perf_counter()
    cfg = engine.read_config(args.config)
    if args.seeds:
        seeds = list(args.seeds)
    else:
        seeds = [cfg.seed + i for i in range(args.num_seeds)]
    if len(set(seeds)) != len(seeds):
        raise ConfigError(f"seeds must be distinct, got {seeds}")
    out_dir = Path(args.out_dir if args.out_dir is not None
                   else os.environ.get("WALKDISPATCH_OUT_DIR", "runs"))
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = args.jobs if args.jobs is not None \
        else int(os.environ.get("WALKDISPATCH_JOBS", "1"))

    g = engine.build_graph(cfg)
    d_fluid = _fluid_degree(cfg.policy)
    fluid_traj = None
    if d_fluid is not None:
        start = fluid_mod.FluidState(x=_fluid_start(cfg, g.n), lam=cfg.lam,
                                     d=d_fluid, B=cfg.B)
        fluid_traj = fluid_mod.integrate(start, cfg.T, h=0.01)

    outputs = {}
    sup_devs = {}
    stat_tails = {}
    mean_queues = {}
    for seed, traj, stat in _run_seeds(cfg, g, seeds, jobs):
        fname = f"trajectory_seed{seed}.csv"
        _write_text(out_dir / fname,
                    format_trajectory_csv(traj.times, traj.xs))
        outputs[str(seed)] = fname
        if fluid_traj is not None:
            sup_devs[str(seed)] = fluid_mod.sup_deviation(traj, fluid_traj)
        stat_tails[str(seed)] = [float(v) for v in stat.tail.x]
        mean_queues[str(seed)] = stat.mean_queue

    tails_matrix = np.array([stat_tails[str(s)] for s in seeds])
    estimate = tails_matrix.mean(axis=0)
    if len(seeds) > 1:
        stderr = tails_matrix.std(axis=0, ddof=1) / math.sqrt(len(seeds))
    else:
        stderr = np.zeros_like(estimate)
    window = [0.5 * cfg.T, cfg.T]
    stationary_obj = {
        "lambda": cfg.lam,
        "d": d_fluid,
        "policy": policy_mod.policy_name(cfg.policy),
        "graph": {"kind": cfg.graph_kind, "params": list(cfg.graph_params),
                  "n": g.n, "degree": g.k},
        "estimate": [float(v) for v in estimate],
        "stderr": [float(v) for v in stderr],
        "seeds": seeds,
        "window": window,
    }
    _write_json(out_dir / "stationary.json", stationary_obj)

    manifest = {
        "command": "simulate",
        "version": __version__,
        "rng": engine.RNG_NAME,
        "config": engine.config_to_dict(cfg),
        "seeds": seeds,
        "outputs": outputs,
        "stationary_file": "stationary.json",
        "summary": {
            "sup_deviation_vs_fluid": sup_devs,
            "stationary_estimate": stat_tails,
            "mean_queue": mean_queues,
            "stationary_window": window,
            "wall_clock_s": time.perf_counter() - t_start,
        },
    }
    _write_json(out_dir / "manifest.json", manifest)
    print(f"simulate: {len(seeds)} seed(s), n={g.n}, "
          f"policy={policy_mod.policy_name(cfg.policy)} -> {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# fluid


def _fixed_point_path(out):
    out = Path(out)
    return out.with_name(out.stem + ".fixed-point.json")


def _cmd_fluid(args):
    if not 0.0 < args.lam < 1.0:
        raise ConfigError(
            f"--lam must satisfy 0 < lambda < 1, got {args.lam}")
    if args.d < 1:
        raise ConfigError(f"--d must be >= 1, got {args.d}")
    if args.B < 1 or args.T <= 0 or args.h <= 0:
        raise ConfigError("need --B >= 1, --T > 0, --h > 0")
    x0 = _parse_fluid_init(args.init, args.B)
    start = fluid_mod.FluidState(x=x0, lam=args.lam, d=args.d, B=args.B)
    traj = fluid_mod.integrate(start, args.T, h=args.h)
    _write_text(args.out, format_trajectory_csv(traj.times, traj.xs))

    fp = fluid_mod.fixed_point(args.lam, args.d, B=args.B)
    fp_path = args.fixed_point_out if args.fixed_point_out is not None \
        else _fixed_point_path(args.out)
    _write_json(fp_path, {
        "lambda": args.lam,
        "d": args.d,
        "B": args.B,
        "x": [float(v) for v in fp.x],
        "residual": fluid_mod.fixed_point_residual(fp.x, args.lam, args.d),
    })
    print(f"fluid: lambda={args.lam} d={args.d} -> {args.out}, {fp_path}")
    return 0


# ---------------------------------------------------------------------------
# compare


def _cmd_compare(args):
    sim_t, sim_x = read_trajectory_csv(args.sim)
    flu_t, flu_x = read_trajectory_csv(args.fluid)
    if sim_x.shape[1] != flu_x.shape[1]:
        raise ParseError(
            f"level mismatch: {args.sim} has B={sim_x.shape[1] - 1}, "
            f"{args.fluid} has B={flu_x.shape[1] - 1}")
    if sim_t[-1] > flu_t[-1] + 1e-9:
        raise ParseError(
            f"horizon mismatch: simulation runs to t={sim_t[-1]:g} but the "
            f"reference stops at t={flu_t[-1]:g}")
    interp = np.column_stack([np.interp(sim_t, flu_t, flu_x[:, lvl])
                              for lvl in range(flu_x.shape[1])])
    per_time = np.abs(sim_x[:, 1:] - interp[:, 1:]).sum(axis=1)
    report = {
        "sup_l1": float(per_time.max()),
        "final_l1": float(per_time[-1]),
        "per_time": [[float(t), float(v)] for t, v in zip(sim_t, per_time)],
    }
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if args.out is not None:
        _write_text(args.out, text)
        print(f"compare: sup_l1={report['sup_l1']:.6g} "
              f"final_l1={report['final_l1']:.6g} -> {args.out}")
    else:
        print(text, end="")
    return 0


# ---------------------------------------------------------------------------
# mixing


def _cmd_mixing(args):
    g = graph_mod.read_edge_list(args.path)
    if g.k == 2:
        print("warning: degree-2 graph: the non-backtracking walk is "
              "deterministic and does not mix (deviation stays near 1)",
              file=sys.stderr)
    ts = sorted(set(args.t))
    if any(t < 0 for t in ts):
        raise ConfigError(f"--t values must be >= 0, got {args.t}")
    devs = walker_mod.mixing_profile(g, ts, exact_limit=args.exact_limit,
                                     sample_size=args.sample_size,
                                     seed=args.seed)
    lines = ["t,deviation"]
    lines.extend("%d,%.17g" % (t, dev) for t, dev in zip(ts, devs))
    text = "\n".join(lines) + "\n"
    if args.out is not None:
        _write_text(args.out, text)
        print(f"mixing: {len(ts)} step count(s) -> {args.out}")
    else:
        print(text, end="")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser():
    p = argparse.ArgumentParser(
        prog="walkdispatch",
        description="Simulate shortest-of-d-candidates load balancing where "
                    "candidates come from non-backtracking walks on a "
                    "regular graph, and compare against the mean-field "
                    "tail dynamics.")
    p.add_argument("--version", action="version",
                   version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    pg = sub.add_parser("graph", help="generate or validate regular graphs")
    gsub = pg.add_subparsers(dest="graph_command", required=True)

    pgen = gsub.add_parser("generate", help="write a graph edge list")
    kind = pgen.add_mutually_exclusive_group(required=True)
    kind.add_argument("--cycle", type=int, metavar="N",
                      help="cycle on N vertices (degree 2)")
    kind.add_argument("--torus", type=int, nargs="+", metavar="DIM",
                      help="product of cycles with the given side lengths")
    kind.add_argument("--lps", type=int, nargs=2, metavar=("P", "Q"),
                      help="degree-(P+1) algebraic expander on the "
                           "projective matrix group mod Q")
    kind.add_argument("--random-regular", type=int, nargs=2,
                      metavar=("N", "K"),
                      help="uniform simple K-regular graph on N vertices")
    pgen.add_argument("--seed", type=int, default=0,
                      help="generation seed (random-regular only)")
    pgen.add_argument("-o", "--out", required=True, help="output path")
    pgen.set_defaults(func=_cmd_graph_generate)

    pval = gsub.add_parser("validate",
                           help="check regularity and print a JSON report")
    pval.add_argument("path", help="edge-list file")
    pval.add_argument("--tol", type=float, default=1e-8,
                      help="spectral tolerance (default 1e-8)")
    pval.set_defaults(func=_cmd_graph_validate)

    psim = sub.add_parser("simulate",
                          help="run seeded simulations from a config file")
    psim.add_argument("--config", required=True, help="config path")
    psim.add_argument("--seeds", type=int, nargs="+",
                      help="explicit seed list (default: config seed, "
                           "consecutive)")
    psim.add_argument("--num-seeds", type=int, default=5,
                      help="number of consecutive seeds when --seeds is "
                           "absent (default 5)")
    psim.add_argument("--out-dir",
                      help="output directory (default $WALKDISPATCH_OUT_DIR "
                           "or ./runs)")
    psim.add_argument("--jobs", type=int,
                      help="parallel workers for multi-seed batches "
                           "(default $WALKDISPATCH_JOBS or 1)")
    psim.set_defaults(func=_cmd_simulate)

    pfl = sub.add_parser("fluid",
                         help="integrate the mean-field tail dynamics")
    pfl.add_argument("--lam", type=float, required=True,
                     help="arrival rate per server, in (0, 1)")
    pfl.add_argument("--d", type=int, required=True,
                     help="candidates compared per arrival")
    pfl.add_argument("--B", type=int, default=16,
                     help="tail truncation level (default 16)")
    pfl.add_argument("--T", type=float, default=20.0,
                     help="integration horizon (default 20)")
    pfl.add_argument("--h", type=float, default=0.01,
                     help="integration step (default 0.01)")
    pfl.add_argument("--init", default="empty",
                     help="empty | constant:<c> | explicit:<x1,...,xB> "
                          "(default empty)")
    pfl.add_argument("--out", required=True, help="trajectory CSV path")
    pfl.add_argument("--fixed-point-out",
                     help="fixed-point JSON path (default: next to --out)")
    pfl.set_defaults(func=_cmd_fluid)

    pcmp = sub.add_parser("compare",
                          help="deviation between two trajectory CSVs")
    pcmp.add_argument("--sim", required=True, help="sampled trajectory CSV")
    pcmp.add_argument("--fluid", required=True, help="reference CSV")
    pcmp.add_argument("--out", help="write the JSON report here instead of "
                                    "stdout")
    pcmp.set_defaults(func=_cmd_compare)

    pmix = sub.add_parser("mixing",
                          help="non-backtracking-walk spread diagnostics")
    pmix.add_argument("path", help="edge-list file")
    pmix.add_argument("--t", type=int, nargs="+", default=[5, 10, 20, 40],
                      help="step counts (default 5 10 20 40)")
    pmix.add_argument("--exact-limit", type=int, default=10_000,
                      help="largest n computed exactly over all start "
                           "edges (default 10000)")
    pmix.add_argument("--sample-size", type=int, default=64,
                      help="start edges sampled above the exact limit "
                           "(default 64)")
    pmix.add_argument("--seed", type=int, default=0,
                      help="seed for sampled start edges (default 0)")
    pmix.add_argument("-o", "--out", help="output CSV path (default stdout)")
    pmix.set_defaults(func=_cmd_mixing)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ParseError, GenerationError, NumericalError,
            BipartiteGraphError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
