"""JSON scenario files: loading, validation, overrides and preset dumps.

A file holds one scenario::

    {"kind": "grid" | "unicycle", "name": ..., "graph": {"n_agents", "edges"},
     "agents": [{"initial": ..., "exit": ...}], "costs": {...},
     "dynamics": {...}, "solver": {...}}

Agent indices are 0-based.  Grid cells are 1-based ``[row, col]``.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path

import numpy as np

from .errors import ConfigError, ParseError
from .scenarios import GridScenario, UnicycleScenario, get_scenario, list_builtin_scenarios

GRID_SOLVER = {"method": "centralized", "tol": 1e-10, "max_iters": 1_000_000,
               "rollout": "max-likelihood", "horizon": 60}


def _pairs_out(d: dict) -> list:
    return [[int(i), int(j), float(w)] for (i, j), w in sorted(d.items())]


def _pairs_in(rows, where: str) -> dict:
    out = {}
    for k, row in enumerate(rows or []):
        if not (isinstance(row, (list, tuple)) and len(row) == 3):
            raise ConfigError(f"{where}[{k}]: expected [i, j, weight]")
        out[(int(row[0]), int(row[1]))] = float(row[2])
    return out


def scenario_to_config(sc) -> dict:
    """Plain JSON-ready dict describing ``sc``."""
    if isinstance(sc, GridScenario):
        passive = sc.passive if isinstance(sc.passive, str) else np.asarray(sc.passive).tolist()
        pairs = []
        for i, js in sorted(sc.couplings.items()):
            for j in js:
                pairs.append([int(i), int(j), float(sc.distance_weights.get((i, j), 0.0))])
        return {
            "kind": "grid",
            "name": "grid-altered-wind" if sc.passive == "altered" else "grid-default",
            "graph": {"n_agents": sc.n_agents, "edges": [list(e) for e in sc.edges]},
            "agents": [{"initial": list(s), "exit": list(e)} for s, e in zip(sc.starts, sc.exits)],
            "grid": {"size": sc.size, "obstacles": [list(o) for o in sc.obstacles], "passive": passive},
            "costs": {"obstacle_cost": sc.obstacle_cost, "regular_cost": sc.regular_cost,
                      "pairs": pairs, "exit_weights": list(sc.exit_weights)},
            "solver": dict(GRID_SOLVER),
        }
    costs = {fam: {"w_self": [float(v) for v in ws["w_self"]], "pairs": _pairs_out(ws.get("w_pair", {}))}
             for fam, ws in sc.costs.items()}
    costs.update({
        "obstacles": [list(map(float, r)) for r in sc.obstacles],
        "obstacle_cost": sc.obstacle_cost,
        "terminal_weight": sc.terminal_weight,
        "exit_weights": list(sc.exit_weights),
        "d_max": None if sc.d_max is None else np.asarray(sc.d_max, dtype=float).tolist(),
        "d_pair": None if sc.d_pair is None else _pairs_out(sc.d_pair),
    })
    return {
        "kind": "unicycle",
        "name": sc.name,
        "graph": {"n_agents": sc.n_agents, "edges": [list(e) for e in sc.edges]},
        "agents": [{"initial": x.tolist(), "exit": e.tolist()} for x, e in zip(sc.x0, sc.exits)],
        "dynamics": {"sigma": list(sc.sigma), "sample_sigma": list(sc.sample_sigma),
                     "lam": sc.lam, "r_scale": sc.r_scale},
        "costs": costs,
        "solver": {"tf": sc.tf, "dt": sc.dt, "K": sc.k, "Y": sc.y,
                   "path_value_noise": sc.path_value_noise, "reps": dict(sc.reps),
                   "curve_iters": sc.curve_iters},
        "region": list(sc.region),
    }


def preset_config(name: str) -> dict:
    cfg = scenario_to_config(get_scenario(name))
    cfg["name"] = name
    return cfg


def _need(d: dict, key: str, where: str):
    if not isinstance(d, dict) or key not in d:
        raise ConfigError(f"{where}.{key}: missing" if where else f"{key}: missing")
    return d[key]


def config_to_scenario(cfg: dict):
    """Build the scenario object; raises ``ConfigError`` on structural problems."""
    kind = _need(cfg, "kind", "")
    graph = _need(cfg, "graph", "")
    agents = _need(cfg, "agents", "")
    if not isinstance(agents, list) or not agents:
        raise ConfigError("agents: expected a non-empty list")
    if int(_need(graph, "n_agents", "graph")) != len(agents):
        raise ConfigError("graph.n_agents: does not match the number of agents")
    edges = tuple(tuple(int(v) for v in e) for e in _need(graph, "edges", "graph"))
    inits = [_need(a, "initial", f"agents[{k}]") for k, a in enumerate(agents)]
    exits = [_need(a, "exit", f"agents[{k}]") for k, a in enumerate(agents)]
    costs = cfg.get("costs", {})
    try:
        if kind == "grid":
            grid = cfg.get("grid", {})
            pairs = _pairs_in(costs.get("pairs", []), "costs.pairs")
            couplings = {}
            for (i, j) in pairs:
                couplings.setdefault(i, []).append(j)
            return GridScenario(
                size=int(grid.get("size", 5)),
                obstacles=tuple(tuple(int(v) for v in o) for o in grid.get("obstacles", [])),
                starts=tuple(tuple(int(v) for v in c) for c in inits),
                exits=tuple(tuple(int(v) for v in c) for c in exits),
                edges=edges,
                couplings={i: tuple(js) for i, js in couplings.items()},
                distance_weights=pairs,
                obstacle_cost=float(costs.get("obstacle_cost", 30.0)),
                regular_cost=float(costs.get("regular_cost", 2.2)),
                passive=grid.get("passive", "default"),
                exit_weights=tuple(costs.get("exit_weights", (1.0, 0.5))),
            )
        if kind == "unicycle":
            solver = _need(cfg, "solver", "")
            dyn = cfg.get("dynamics", {})
            fams = {}
            for fam in ("pathintegral", "reps"):
                if fam in costs:
                    ws = costs[fam]
                    fams[fam] = {"w_self": [float(v) for v in _need(ws, "w_self", f"costs.{fam}")],
                                 "w_pair": _pairs_in(ws.get("pairs", []), f"costs.{fam}.pairs")}
            d_pair = costs.get("d_pair")
            return UnicycleScenario(
                name=str(cfg.get("name", "custom")),
                x0=np.asarray(inits, dtype=float),
                exits=np.asarray(exits, dtype=float),
                edges=edges,
                tf=float(_need(solver, "tf", "solver")),
                dt=float(solver.get("dt", 0.2)),
                k=int(solver.get("K", 7)),
                y=int(solver.get("Y", 400)),
                sigma=tuple(float(v) for v in dyn.get("sigma", (0.1, 0.05))),
                sample_sigma=tuple(float(v) for v in dyn.get("sample_sigma", (0.75, 0.65))),
                costs=fams,
                d_max=None if costs.get("d_max") is None else np.asarray(costs["d_max"], dtype=float),
                d_pair=None if d_pair is None else _pairs_in(d_pair, "costs.d_pair"),
                obstacles=tuple(tuple(float(v) for v in r) for r in costs.get("obstacles", [])),
                obstacle_cost=float(costs.get("obstacle_cost", 50.0)),
                terminal_weight=float(costs.get("terminal_weight", 1.0)),
                exit_weights=tuple(float(v) for v in costs.get("exit_weights", (1.0, 0.5))),
                lam=float(dyn.get("lam", 1.0)),
                r_scale=float(dyn.get("r_scale", 1.0)),
                path_value_noise=str(solver.get("path_value_noise", "sampling")),
                reps=dict(solver.get("reps", {})),
                curve_iters=int(solver.get("curve_iters", 20)),
                region=tuple(float(v) for v in cfg.get("region", (0.0, 50.0, 0.0, 50.0))),
            )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"malformed value: {exc}") from exc
    raise ConfigError(f"kind: expected 'grid' or 'unicycle', got {kind!r}")


def validate_config(cfg: dict) -> list[str]:
    """All problems found in ``cfg``; an empty list means it is usable."""
    try:
        sc = config_to_scenario(cfg)
    except ConfigError as exc:
        return [str(exc)]
    out = sc.validate()
    n = sc.n_agents
    for e in sc.edges:
        if len(e) != 2 or not all(0 <= v < n for v in e) or e[0] == e[1]:
            out.append(f"graph.edges: invalid edge {list(e)}")
    if cfg.get("kind") == "grid":
        solver = {**GRID_SOLVER, **cfg.get("solver", {})}
        if solver["method"] not in ("centralized", "consensus"):
            out.append("solver.method: must be 'centralized' or 'consensus'")
        if solver["rollout"] not in ("max-likelihood", "sampled"):
            out.append("solver.rollout: must be 'max-likelihood' or 'sampled'")
        if float(solver["tol"]) <= 0:
            out.append("solver.tol: must be positive")
    else:
        reps = cfg.get("solver", {}).get("reps", {})
        from dataclasses import fields

        from .reps import RepsConfig

        known = {f.name for f in fields(RepsConfig)}
        for key in sorted(set(reps) - known):
            out.append(f"solver.reps.{key}: unknown setting")
        if "delta" in reps and float(reps["delta"]) <= 0:
            out.append("solver.reps.delta: must be positive")
        for key in ("y_init", "y_iter", "max_iters"):
            if key in reps and int(reps[key]) < 1:
                out.append(f"solver.reps.{key}: must be at least 1")
    return out


def parse_config_text(text: str, source: str = "<config>") -> dict:
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{source}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if not isinstance(cfg, dict):
        raise ParseError(f"{source}: top level must be an object")
    return cfg


def load_config(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return parse_config_text(text, str(path))


def resolve_scenario_config(name_or_path: str) -> dict:
    """Preset name or path to a JSON file."""
    if name_or_path in list_builtin_scenarios():
        return preset_config(name_or_path)
    p = Path(name_or_path)
    if p.exists():
        return load_config(p)
    raise ConfigError(
        f"unknown scenario {name_or_path!r}; valid names: {', '.join(list_builtin_scenarios())}"
    )


def apply_override(cfg: dict, item: str) -> dict:
    """Apply one ``dotted.path=value`` override; the value is read as JSON when possible."""
    if "=" not in item:
        raise ConfigError(f"override {item!r}: expected key=value")
    key, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    out = copy.deepcopy(cfg)
    parts = key.split(".")
    node = out
    for depth, part in enumerate(parts):
        last = depth == len(parts) - 1
        if isinstance(node, list):
            try:
                idx = int(part)
                node[idx]
            except (ValueError, IndexError):
                raise ConfigError(f"override {key!r}: bad list index {part!r}") from None
            if last:
                node[idx] = value
            else:
                node = node[idx]
        elif isinstance(node, dict):
            if last:
                node[part] = value
            else:
                node = node.setdefault(part, {})
        else:
            raise ConfigError(f"override {key!r}: {'.'.join(parts[:depth])} is not a container")
    return out


def dump_config(cfg: dict) -> str:
    return json.dumps(cfg, indent=2, sort_keys=False) + "\n"
