"""Command-line entry point ``lsoc``.

Subcommands::

    lsoc run --scenario tri-open --algo pathintegral --trials 50 --seed 7
    lsoc validate my_scenario.json
    lsoc dump-preset tri-open
    lsoc compose --scenario grid-default --agent 0 --components a.csv b.csv --weights 0.5 0.5
    lsoc compose --lq lq.json

Exit codes: 0 success, 2 configuration error, 3 numeric failure,
4 non-convergence.  Every CSV starts with one ``#`` line carrying the seed.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import (
    GRID_SOLVER,
    apply_override,
    config_to_scenario,
    dump_config,
    load_config,
    preset_config,
    resolve_scenario_config,
    validate_config,
)
from .errors import ConfigError, NonConvergence, NumericError, SupportViolation

ALGOS = ("lsmdp", "lsmdp-consensus", "pathintegral", "reps", "compose", "complexity")
OUT_ENV = "LSOC_OUT"


def trial_seed(seed: int, trial: int) -> int:
    """Independent per-trial seed derived from the run seed."""
    return int(np.random.SeedSequence([int(seed), int(trial)]).generate_state(1)[0])


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_csv(path: Path, header: str, columns: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# {header}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def write_json(path: Path, obj) -> None:
    def conv(o):
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, (np.floating, np.integer, np.bool_)):
            return o.item()
        raise TypeError(type(o))

    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, default=conv)
        fh.write("\n")


# -------------------------------------------------------------------- trials

def _unicycle_trial(cfg: dict, algo: str, seed: int):
    from .pathintegral import receding_horizon_run
    from .reps import reps_run
    from .scenarios import build_team_problem

    sc = config_to_scenario(cfg)
    fam = "reps" if algo == "reps" else "pathintegral"
    problem = build_team_problem(sc, fam)
    log = receding_horizon_run(problem, seed) if algo == "pathintegral" else reps_run(problem, seed=seed)
    return log.times, log.states, log.controls, log.q, log.c, log.rollouts


def _learning_curve_trial(cfg: dict, agent: int, seed: int):
    from .reps import first_cycle_learning_curve
    from .scenarios import build_team_problem

    problem = build_team_problem(config_to_scenario(cfg), "reps")
    return first_cycle_learning_curve(problem, agent, seed=seed)


def _grid_rollout_trial(cfg: dict, mode: str, horizon: int, seed: int, zs_full):
    from .lsmdp import Desirability, greedy_rollout
    from .scenarios import build_grid_scenario

    _, _, joints = build_grid_scenario(config_to_scenario(cfg))
    zs = [Desirability(z[m.interior_idx], z[m.boundary_idx]) for z, m in zip(zs_full, joints)]
    sc = config_to_scenario(cfg)
    x0 = [sc.cell_index(c) for c in sc.starts]
    return greedy_rollout(joints, zs, x0, horizon, mode=mode, seed=seed)


def _map_trials(fn, jobs, workers: int):
    if workers <= 1:
        return [fn(*j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        futs = [ex.submit(fn, *j) for j in jobs]
        return [f.result() for f in futs]


# ---------------------------------------------------------------- algorithms

def _run_unicycle(cfg, args, out: Path, header: str) -> dict:
    jobs = [(cfg, args.algo, trial_seed(args.seed, n)) for n in range(args.trials)]
    results = _map_trials(_unicycle_trial, jobs, args.workers)
    n_agents = len(cfg["agents"])
    edges = [tuple(e) for e in cfg["graph"]["edges"]]
    dists = {f"{i}-{j}": [] for i, j in edges}
    finals, costs = [], []
    for n, (times, states, controls, q, c, rollouts) in enumerate(results):
        rows = []
        for step, t in enumerate(times):
            for i in range(n_agents):
                if step < len(controls):
                    extra = [controls[step, i, 0], controls[step, i, 1], q[step, i], c[step, i], rollouts[step, i]]
                else:
                    extra = [np.nan] * 4 + [0]
                rows.append([t, i, *states[step, i], *extra])
        write_csv(out / f"trajectory_trial{n:03d}.csv", f"{header} trial={n} trial_seed={jobs[n][2]}",
                  ["time", "agent", "x", "y", "v", "phi", "u_v", "u_phi", "q", "c", "rollouts"], rows)
        for i, j in edges:
            dists[f"{i}-{j}"].append(np.linalg.norm(states[:, i, :2] - states[:, j, :2], axis=1))
        exits = np.asarray([a["exit"] for a in cfg["agents"]], dtype=float)[:, :2]
        finals.append(np.linalg.norm(states[-1, :, :2] - exits, axis=1))
        costs.append(c.mean(axis=0))
    times = results[0][0]
    summary = {
        "times": times,
        "pair_distance": {k: {"mean": np.mean(v, axis=0), "std": np.std(v, axis=0),
                              "time_average_per_trial": np.mean(v, axis=1)} for k, v in dists.items()},
        "final_distance_to_exit": {"mean": np.mean(finals, axis=0), "max": np.max(finals, axis=0)},
        "mean_immediate_cost": {"mean": np.mean(costs, axis=0), "std": np.std(costs, axis=0)},
    }
    rows = []
    for k, v in dists.items():
        m, s = np.mean(v, axis=0), np.std(v, axis=0)
        rows += [[k, t, mi, si] for t, mi, si in zip(times, m, s)]
    write_csv(out / "distance_summary.csv", header, ["pair", "time", "mean", "std"], rows)

    if args.algo == "reps":
        agent = min(args.agent, n_agents - 1)
        jobs = [(cfg, agent, trial_seed(args.seed, n)) for n in range(args.trials)]
        curves = _map_trials(_learning_curve_trial, jobs, args.workers)
        rows = []
        for n, cur in enumerate(curves):
            for b, cr, cs in zip(cur["rollouts"], cur["reps"], cur["sampling"]):
                rows.append([n, agent, b, cr, cs])
        write_csv(out / "cost_vs_rollouts.csv", header,
                  ["trial", "agent", "rollouts", "reps_cost", "sampling_cost"], rows)
        summary["cost_vs_rollouts_agent"] = agent
    return summary


def _grid_solve(cfg, consensus: bool):
    from .lsmdp import plan
    from .scenarios import build_grid_scenario

    sc = config_to_scenario(cfg)
    _, agents, joints = build_grid_scenario(sc)
    solver = {**GRID_SOLVER, **cfg.get("solver", {})}
    zs, logs = plan(joints, solver="consensus" if consensus else "centralized",
                    tol=float(solver["tol"]), max_iter=int(solver["max_iters"]))
    return sc, joints, zs, logs, solver


def _write_desirability(path, header, m, z):
    full = z.full(m)
    rows = []
    for s in range(m.n_joint):
        rows.append([s, *m.member_states(s), int(m.boundary[s]), m.exit_cost[s], full[s]])
    cols = ["joint_index"] + [f"member{k}_state" for k in range(len(m.shape))] + ["boundary", "exit_cost", "z"]
    write_csv(path, header, cols, rows)


def _run_grid(cfg, args, out: Path, header: str) -> dict:
    consensus = args.algo == "lsmdp-consensus"
    sc, joints, zs, logs, solver = _grid_solve(cfg, consensus)
    for i, (m, z) in enumerate(zip(joints, zs)):
        _write_desirability(out / f"desirability_agent{i}.csv", header, m, z)
    if consensus:
        for i, log in enumerate(logs):
            write_csv(out / f"convergence_agent{i}.csv", header,
                      ["iteration", "disagreement", "spread", "residual", "feasibility", "scale"],
                      [[h["iteration"], h["disagreement"], h["spread"], h["residual"], h["feasibility"], h["scale"]]
                       for h in log.history])
    mode = solver["rollout"]
    zs_full = [z.full(m) for z, m in zip(zs, joints)]
    jobs = [(cfg, mode, int(solver["horizon"]), trial_seed(args.seed, n), zs_full) for n in range(args.trials)]
    paths = _map_trials(_grid_rollout_trial, jobs, args.workers)
    rows = []
    obst = {sc.cell_index(c) for c in sc.obstacles}
    reached, visits = [], []
    for n, path in enumerate(paths):
        for step, states in enumerate(path):
            for i, s in enumerate(states):
                rows.append([n, step, i, *sc.cell_of(s)])
        reached.append([int(path[-1][i]) == sc.cell_index(sc.exits[i]) for i in range(sc.n_agents)])
        visits.append(int(sum(int(s) in obst for s in np.asarray(path).ravel())))
    write_csv(out / "trajectory.csv", header, ["trial", "step", "agent", "row", "col"], rows)
    return {"rollout": mode, "reached_exit": reached, "obstacle_visits": visits,
            "paths_trial0": [[list(sc.cell_of(s)) for s in np.asarray(paths[0])[:, i]] for i in range(sc.n_agents)]}


def _run_complexity(args, out: Path, header: str) -> dict:
    from .consensus import complexity_report
    from .network import TOPOLOGIES

    tops = sorted(TOPOLOGIES) if args.topology == "all" else [args.topology]
    rows = []
    for top in tops:
        if top not in TOPOLOGIES:
            raise ConfigError(f"unknown topology {top!r}; choose from {sorted(TOPOLOGIES)}")
        for n in range(1, args.max_agents + 1):
            cen = complexity_report(top, n, args.n_interior, "centralized")
            par = complexity_report(top, n, args.n_interior, "parallel")
            g = TOPOLOGIES[top](n)
            for i in range(n):
                rows.append([top, n, i, g.degree(i) + 1, cen[i], par[i]])
    write_csv(out / "complexity.csv", header,
              ["topology", "n_agents", "agent", "subsystem_size", "centralized", "parallel"], rows)
    return {"topologies": tops, "max_agents": args.max_agents, "n_interior": args.n_interior}


def _run_compose(cfg, args, out: Path, header: str) -> dict:
    """Grid demo: neighbour exit-cost variants of one subsystem, composed and checked."""
    from dataclasses import replace

    from .composition import DiscreteComponents, compose_discrete_controller, composite_model
    from .lsmdp import (build_linear_system, marginal_local_control, optimal_joint_control,
                        solve_desirability_centralized)
    from .scenarios import build_grid_scenario

    sc = config_to_scenario(cfg)
    _, agents, joints = build_grid_scenario(sc)
    comp = cfg.get("compose", {})
    agent = int(comp.get("agent", args.agent if args.agent < sc.n_agents else 0))
    scales = [float(v) for v in comp.get("scales", [0.0, 1.0])]
    weights = [float(v) for v in comp.get("weights", [0.5, 0.5])]
    base = joints[agent]
    grids = np.indices(base.shape).reshape(len(base.shape), -1)
    man = np.zeros(base.n_joint)
    for k, member in enumerate(base.subsystem.members[1:], start=1):
        r, c = grids[k] // sc.size, grids[k] % sc.size
        er, ec = (v - 1 for v in sc.exits[member])
        man += base.weights[k] * (np.abs(r - er) + np.abs(c - ec))
    models, zs = [], []
    for s in scales:
        m = replace(base, exit_cost=np.where(base.boundary, base.exit_cost + s * man, 0.0))
        theta, omega, z_b = build_linear_system(m)
        models.append(m)
        zs.append(solve_desirability_centralized(theta, omega, z_b))
    comps = DiscreteComponents(models, zs, weights)
    direct = composite_model(comps)
    theta, omega, z_b = build_linear_system(direct)
    z_direct = solve_desirability_centralized(theta, omega, z_b)
    rows, worst = [], 0.0
    for s in direct.interior_idx:
        u = compose_discrete_controller(comps, int(s), direct.exit_cost)
        worst = max(worst, float(np.max(np.abs(u - optimal_joint_control(direct, z_direct, int(s))))))
        loc = marginal_local_control(direct, u)
        for nxt in np.flatnonzero(loc > 0):
            rows.append([int(s), int(nxt), loc[nxt]])
    write_csv(out / "composed_controller.csv", header, ["joint_index", "center_next_state", "probability"], rows)
    return {"agent": agent, "scales": scales, "weights": weights, "max_abs_diff_vs_direct": worst}


# -------------------------------------------------------------- subcommands

def cmd_run(args) -> int:
    if args.algo == "complexity":
        cfg = {"name": "complexity"}
    else:
        if args.scenario is None:
            args.scenario = "grid-default" if args.algo in ("lsmdp", "lsmdp-consensus", "compose") else "tri-open"
        cfg = resolve_scenario_config(args.scenario)
        for item in args.override or []:
            cfg = apply_override(cfg, item)
        problems = validate_config(cfg)
        if problems:
            raise ConfigError("; ".join(problems))
    if args.trials < 1:
        raise ConfigError("--trials must be at least 1")
    out = Path(args.out or os.environ.get(OUT_ENV, "lsoc-out"))
    out.mkdir(parents=True, exist_ok=True)
    name = cfg.get("name", args.scenario)
    header = f"seed={args.seed} scenario={name} algo={args.algo} trials={args.trials}"
    kind = cfg.get("kind")
    if args.algo == "complexity":
        summary = _run_complexity(args, out, header)
    elif args.algo in ("lsmdp", "lsmdp-consensus", "compose"):
        if kind != "grid":
            raise ConfigError(f"--algo {args.algo} needs a grid scenario, got {kind!r}")
        summary = (_run_compose if args.algo == "compose" else _run_grid)(cfg, args, out, header)
    else:
        if kind != "unicycle":
            raise ConfigError(f"--algo {args.algo} needs a unicycle scenario, got {kind!r}")
        summary = _run_unicycle(cfg, args, out, header)
    meta = {"seed": args.seed, "scenario": name, "algo": args.algo, "trials": args.trials,
            "overrides": list(args.override or [])}
    write_json(out / "summary.json", {**meta, **summary})
    print(f"wrote results to {out}")
    return 0


def cmd_validate(args) -> int:
    cfg = load_config(args.path)
    problems = validate_config(cfg)
    for p in problems:
        print(p)
    if not problems:
        print("ok")
    return 0 if not problems else 2


def cmd_dump(args) -> int:
    text = dump_config(preset_config(args.name))
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def _read_desirability_csv(path):
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.DictReader(lines))
    if not rows or "z" not in rows[0] or "exit_cost" not in rows[0]:
        raise ConfigError(f"{path}: not a desirability table")
    idx = np.array([int(r["joint_index"]) for r in rows])
    z = np.empty(idx.size)
    phi = np.empty(idx.size)
    z[idx] = [float(r["z"]) for r in rows]
    phi[idx] = [float(r["exit_cost"]) for r in rows]
    return z, phi


def cmd_compose(args) -> int:
    out = Path(args.out or os.environ.get(OUT_ENV, "lsoc-out"))
    out.mkdir(parents=True, exist_ok=True)
    header = f"seed={args.seed} compose"
    if args.lq:
        from .composition import LQComponent, compose_continuous_controller, compose_continuous_desirability

        spec = load_config(args.lq)
        try:
            comps = [LQComponent(c["a"], c["c"], spec.get("sigma", 1.0), spec.get("tf", 1.0), spec.get("lam", 1.0))
                     for c in spec["components"]]
            weights = spec["weights"]
            lo, hi, n = spec.get("grid", [-3.0, 3.0, 61])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"{args.lq}: bad LQ composition spec ({exc})") from exc
        t = float(spec.get("t", 0.0))
        xs = np.linspace(float(lo), float(hi), int(n))[:, None]
        z, bw = compose_continuous_desirability(comps, weights, xs, t)
        u = compose_continuous_controller(comps, weights, xs, t)
        rows = [[xs[k, 0], t, z[k], u[k, 0], *bw[:, k]] for k in range(xs.shape[0])]
        write_csv(out / "composed_lq.csv", header, ["x", "t", "z", "u"] + [f"w{f}" for f in range(len(comps))], rows)
        print(f"wrote {out / 'composed_lq.csv'}")
        return 0

    from dataclasses import replace

    from .composition import DiscreteComponents, compose_discrete_controller, compose_discrete_desirability
    from .lsmdp import marginal_local_control
    from .scenarios import build_grid_scenario

    if not args.components or not args.weights:
        raise ConfigError("compose needs --components and --weights (or --lq)")
    if len(args.components) != len(args.weights):
        raise ConfigError("one weight per component file is required")
    cfg = resolve_scenario_config(args.scenario or "grid-default")
    sc = config_to_scenario(cfg)
    _, _, joints = build_grid_scenario(sc)
    base = joints[args.agent]
    models, zs = [], []
    for path in args.components:
        z, phi = _read_desirability_csv(path)
        if z.size != base.n_joint:
            from .errors import MisalignedStateSpaces

            raise MisalignedStateSpaces(f"{path}: {z.size} states, subsystem has {base.n_joint}")
        models.append(replace(base, exit_cost=phi))
        zs.append(z)
    comps = DiscreteComponents(models, zs, args.weights)
    phi_new = _read_desirability_csv(args.phi_new)[1] if args.phi_new else None
    z_new = compose_discrete_desirability(comps)
    write_csv(out / "composed_desirability.csv", header, ["joint_index", "z"],
              [[s, z_new[s]] for s in range(base.n_joint)])
    rows = []
    for s in base.interior_idx:
        u = compose_discrete_controller(comps, int(s), phi_new)
        loc = marginal_local_control(base, u)
        for nxt in np.flatnonzero(loc > 0):
            rows.append([int(s), int(nxt), loc[nxt]])
    write_csv(out / "composed_controller.csv", header, ["joint_index", "center_next_state", "probability"], rows)
    print(f"wrote composed tables to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lsoc", description="Distributed linearly-solvable optimal control.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an algorithm on a scenario")
    r.add_argument("--scenario", help="preset name or JSON file")
    r.add_argument("--algo", required=True, choices=ALGOS)
    r.add_argument("--trials", type=int, default=1)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./lsoc-out)")
    r.add_argument("--override", action="append", metavar="KEY=VALUE",
                   help="dotted-path config override, value parsed as JSON when possible")
    r.add_argument("--workers", type=int, default=1)
    r.add_argument("--agent", type=int, default=1, help="agent for cost-vs-rollouts and compose (0-based)")
    r.add_argument("--topology", default="all")
    r.add_argument("--max-agents", type=int, default=8)
    r.add_argument("--n-interior", type=int, default=24)
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("validate", help="check a scenario file")
    v.add_argument("path")
    v.set_defaults(func=cmd_validate)

    d = sub.add_parser("dump-preset", help="print a built-in scenario as JSON")
    d.add_argument("name")
    d.add_argument("--out")
    d.set_defaults(func=cmd_dump)

    c = sub.add_parser("compose", help="compose learned controllers")
    c.add_argument("--scenario")
    c.add_argument("--agent", type=int, default=0)
    c.add_argument("--components", nargs="+")
    c.add_argument("--weights", nargs="+", type=float)
    c.add_argument("--phi-new", help="desirability-format CSV whose exit_cost column is the new task")
    c.add_argument("--lq", help="JSON spec of scalar LQ components")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out")
    c.set_defaults(func=cmd_compose)
    return p


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return 2
    if isinstance(exc, (NumericError, SupportViolation)):
        return 3
    if isinstance(exc, NonConvergence):
        return 4
    return 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, NumericError, SupportViolation, NonConvergence) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
