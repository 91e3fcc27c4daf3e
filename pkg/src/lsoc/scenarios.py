"""Benchmark builders for the cooperative UAV team.

Two families are provided: a 5 x 5 grid world solved as a discrete LSMDP and
a team of unicycles solved with path-integral or REPS controllers.  Values
marked "plausible" below are not published and only reproduce trends.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigError
from .lsmdp import DiscreteModel, JointModel, build_joint_model
from .network import Graph, build_graph

TRIANGLE = [(0, 1), (0, 2), (1, 2)]


# ---------------------------------------------------------------- grid world

@dataclass
class GridScenario:
    """Grid-world team.  Cells are 1-based ``(row, col)`` pairs."""

    size: int = 5
    obstacles: tuple = ((2, 2), (2, 3), (2, 5), (3, 2), (4, 4))  # plausible
    starts: tuple = ((1, 5), (1, 1), (1, 5))
    exits: tuple = ((5, 5), (5, 5), (5, 1))
    edges: tuple = tuple(TRIANGLE)
    # couplings[i] lists the agents whose distance and obstacle term enter q_i
    couplings: dict = field(default_factory=lambda: {0: (1,), 1: (0,)})
    distance_weights: dict = field(default_factory=lambda: {(0, 1): 3.5, (1, 0): 3.5})
    obstacle_cost: float = 30.0
    regular_cost: float = 2.2
    passive: object = "default"
    exit_weights: tuple = (1.0, 0.5)

    @property
    def n_agents(self) -> int:
        return len(self.starts)

    def cell_index(self, cell) -> int:
        r, c = cell
        return (int(r) - 1) * self.size + (int(c) - 1)

    def cell_of(self, index: int) -> tuple[int, int]:
        return (int(index) // self.size + 1, int(index) % self.size + 1)

    def validate(self) -> list[str]:
        out = []
        n = self.size
        obst = {tuple(o) for o in self.obstacles}
        if len(self.exits) != len(self.starts):
            out.append("agents: every agent needs an initial and an exit cell")
        cells = [(f"agents[{k}].initial", c) for k, c in enumerate(self.starts)]
        cells += [(f"agents[{k}].exit", c) for k, c in enumerate(self.exits)]
        for name, (r, c) in cells + [(f"grid.obstacles[{k}]", c) for k, c in enumerate(self.obstacles)]:
            if not (1 <= r <= n and 1 <= c <= n):
                out.append(f"{name}: cell ({r}, {c}) outside the {n}x{n} grid")
        for name, cell in cells:
            if tuple(cell) in obst:
                out.append(f"{name}: cell {tuple(cell)} is an obstacle")
        if self.obstacle_cost < 0:
            out.append("costs.obstacle_cost: must be non-negative")
        if self.regular_cost < 0:
            out.append("costs.regular_cost: must be non-negative")
        for (i, j), w in self.distance_weights.items():
            if w < 0:
                out.append(f"costs.pairs: weight for ({i}, {j}) must be non-negative")
        if not isinstance(self.passive, str):
            p = np.asarray(self.passive, dtype=float)
            if p.shape != (n * n, n * n):
                out.append(f"grid.passive: custom table must be {n * n}x{n * n}")
            else:
                if np.any(p < 0):
                    out.append("grid.passive: negative entries")
                for r in np.flatnonzero(np.abs(p.sum(axis=1) - 1) > 1e-12):
                    out.append(f"grid.passive: row {int(r)} sums to {p[r].sum():.6g}, not 1")
        elif self.passive not in ("default", "altered"):
            out.append(f"grid.passive: unknown profile {self.passive!r}")
        return out


def grid_passive_table(size: int = 5, profile="default") -> np.ndarray:
    """Passive 4-neighbour transition table of the grid.

    ``default``: every available neighbour gets 0.2 and the rest stays put
    (0.2 interior, 0.4 edge, 0.6 corner).  ``altered``: stay with 0.1 and
    share 0.9 equally over the neighbours.
    """
    if not isinstance(profile, str):
        return np.asarray(profile, dtype=float)
    n = size * size
    p = np.zeros((n, n))
    for s in range(n):
        r, c = divmod(s, size)
        nbrs = [(r + dr) * size + (c + dc) for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1))
                if 0 <= r + dr < size and 0 <= c + dc < size]
        if profile == "default":
            p[s, nbrs] = 0.2
            p[s, s] = 1.0 - 0.2 * len(nbrs)
        elif profile == "altered":
            p[s, nbrs] = 0.9 / len(nbrs)
            p[s, s] = 0.1
        else:
            raise ConfigError(f"unknown passive profile {profile!r}")
    return p


def grid_agent_model(sc: GridScenario, agent: int) -> DiscreteModel:
    p = grid_passive_table(sc.size, sc.passive).copy()
    e = sc.cell_index(sc.exits[agent])
    p[e] = 0.0
    p[e, e] = 1.0
    boundary = np.zeros(p.shape[0], dtype=bool)
    boundary[e] = True
    labels = tuple(sc.cell_of(s) for s in range(p.shape[0]))
    return DiscreteModel(p, boundary, np.zeros(p.shape[0]), labels)


def grid_obstacle_term(sc: GridScenario) -> np.ndarray:
    o = np.full(sc.size * sc.size, sc.regular_cost)
    for cell in sc.obstacles:
        o[sc.cell_index(cell)] = sc.obstacle_cost
    return o


def grid_state_cost(sc: GridScenario, members) -> Callable:
    """``q_i = sum_j w_ij |x_i - x_j|_1 + prod_k o_k`` over ``i`` and its couplings."""
    o = grid_obstacle_term(sc)
    center = members[0]
    coupled = [j for j in sc.couplings.get(center, ()) if j in members]

    def q(*grids):
        gi = grids[0]
        cost = o[gi].astype(float)
        ri, ci = gi // sc.size, gi % sc.size
        for j in coupled:
            gj = grids[members.index(j)]
            w = sc.distance_weights.get((center, j), 0.0)
            cost = cost * o[gj] + w * (np.abs(ri - gj // sc.size) + np.abs(ci - gj % sc.size))
        return cost

    return q


def build_grid_scenario(sc: GridScenario | None = None):
    """Return ``(graph, agent_models, joint_models)`` for the grid team."""
    sc = sc or GridScenario()
    problems = sc.validate()
    if problems:
        raise ConfigError("; ".join(problems))
    g = build_graph(sc.n_agents, sc.edges)
    agents = [grid_agent_model(sc, i) for i in range(sc.n_agents)]
    joints = []
    for i in range(sc.n_agents):
        sub = g.subsystem(i)
        w = [sc.exit_weights[0]] + [sc.exit_weights[1]] * (sub.size - 1)
        joints.append(build_joint_model(sub, [agents[j] for j in sub.members],
                                        grid_state_cost(sc, sub.members), w))
    return g, agents, joints


# ----------------------------------------------------------------- unicycles

ACTUATED = np.array([2, 3])


def unicycle_drift(x, t=0.0) -> np.ndarray:
    """``(v cos phi, v sin phi, 0, 0)`` for states ``(..., 4) = (x, y, v, phi)``."""
    x = np.asarray(x, dtype=float)
    f = np.zeros_like(x)
    f[..., 0] = x[..., 2] * np.cos(x[..., 3])
    f[..., 1] = x[..., 2] * np.sin(x[..., 3])
    return f


def unicycle_control_matrix() -> np.ndarray:
    """Full ``4 x 2`` control matrix; controls act on ``v`` and ``phi`` only."""
    b = np.zeros((4, 2))
    b[2, 0] = 1.0
    b[3, 1] = 1.0
    return b


@dataclass
class UnicycleScenario:
    """Unicycle team.  ``costs`` holds one weight set per algorithm family."""

    name: str
    x0: np.ndarray
    exits: np.ndarray
    edges: tuple
    tf: float
    dt: float = 0.2
    k: int = 7
    y: int = 400
    sigma: tuple = (0.1, 0.05)
    sample_sigma: tuple = (0.75, 0.65)
    costs: dict = field(default_factory=dict)
    d_max: np.ndarray | None = None
    d_pair: dict | None = None
    obstacles: tuple = ()
    obstacle_cost: float = 50.0
    terminal_weight: float = 1.0
    exit_weights: tuple = (1.0, 0.5)
    lam: float = 1.0
    r_scale: float = 1.0
    path_value_noise: str = "sampling"
    reps: dict = field(default_factory=lambda: {"delta": 25.0, "y_init": 400, "y_iter": 150,
                                                "max_iters": 3, "tol": 1e-3})
    region: tuple = (0.0, 50.0, 0.0, 50.0)
    # policy iterations for the single-cycle cost-vs-rollouts curve
    curve_iters: int = 20

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float)
        self.exits = np.asarray(self.exits, dtype=float)

    @property
    def n_agents(self) -> int:
        return self.x0.shape[0]

    def validate(self) -> list[str]:
        out = []
        if self.tf <= 0:
            out.append(f"solver.tf: must be positive, got {self.tf}")
        if self.dt <= 0:
            out.append(f"solver.dt: must be positive, got {self.dt}")
        if self.k < 1:
            out.append("solver.K: must be at least 1")
        if self.y < 1:
            out.append("solver.Y: must be at least 1")
        if self.x0.ndim != 2 or self.x0.shape[1] != 4:
            out.append("agents: each initial state must be (x, y, v, phi)")
        elif self.exits.shape != self.x0.shape:
            out.append("agents: each exit state must be (x, y, v, phi)")
        if self.lam <= 0:
            out.append("dynamics.lam: must be positive")
        if np.any(np.asarray(self.sigma) <= 0) or np.any(np.asarray(self.sample_sigma) <= 0):
            out.append("dynamics: noise levels must be positive")
        if self.path_value_noise not in ("sampling", "nominal"):
            out.append("solver.path_value_noise: must be 'sampling' or 'nominal'")
        if self.d_max is not None and np.any(np.asarray(self.d_max) <= 0):
            out.append("costs.d_max: values must be positive")
        if self.d_pair is not None and any(v <= 0 for v in self.d_pair.values()):
            out.append("costs.d_pair: values must be positive")
        if self.d_max is None and self.exits.shape == self.x0.shape and np.any(self.initial_d_max() <= 0):
            out.append("costs.d_max: an agent starts at its exit; give d_max explicitly")
        for fam, ws in self.costs.items():
            if len(ws.get("w_self", [])) != self.n_agents:
                out.append(f"costs.{fam}.w_self: one weight per agent is required")
            for (i, j) in ws.get("w_pair", {}):
                if self.d_pair is None or (i, j) not in self.d_pair:
                    if self.x0.ndim == 2 and 0 <= i < self.n_agents and 0 <= j < self.n_agents \
                            and self.initial_d_pair(i, j) <= 0:
                        out.append(f"costs.d_pair: agents {i} and {j} start together; give d_pair explicitly")
        return out

    def initial_d_max(self) -> np.ndarray:
        if self.d_max is not None:
            return np.asarray(self.d_max, dtype=float)
        return np.linalg.norm(self.x0[:, :2] - self.exits[:, :2], axis=1)

    def initial_d_pair(self, i: int, j: int) -> float:
        if self.d_pair is not None and (i, j) in self.d_pair:
            return float(self.d_pair[(i, j)])
        return float(np.linalg.norm(self.x0[i, :2] - self.x0[j, :2]))


def _inside(pos, rect):
    x0, x1, y0, y1 = rect
    return (pos[..., 0] >= x0) & (pos[..., 0] <= x1) & (pos[..., 1] >= y0) & (pos[..., 1] <= y1)


def build_unicycle_cost(sc: UnicycleScenario, members, family: str = "pathintegral"):
    """Cost of the subsystem centred at ``members[0]``.

    ``q = w_ii (|p_i - p_i^exit| - d_i) + sum_j w_ij (|p_i - p_j| - d_ij)
    + c_obs 1[p_i in an obstacle]`` and terminal cost
    ``phi = c_T sum_j omega_j |p_j - p_j^exit|``.
    """
    from .pathintegral import CostSpec

    if family not in sc.costs:
        raise ConfigError(f"scenario {sc.name!r} has no cost weights for {family!r}")
    ws = sc.costs[family]
    members = list(members)
    i = members[0]
    w_self = float(ws["w_self"][i])
    pair = {tuple(int(v) for v in k): float(w) for k, w in ws.get("w_pair", {}).items()}
    terms = [(members.index(j), pair.get((i, j), 0.0), sc.initial_d_pair(i, j)) for j in members[1:]]
    terms = [t for t in terms if t[1] != 0.0]
    d_i = float(sc.initial_d_max()[i])
    goal = sc.exits[i, :2]
    rects = [tuple(r) for r in sc.obstacles]
    c_obs = sc.obstacle_cost
    exits = sc.exits[members, :2]
    omega = np.array([sc.exit_weights[0]] + [sc.exit_weights[1]] * (len(members) - 1))
    c_t = sc.terminal_weight

    def q(x, t=0.0):
        pos = x[..., 0, :2]
        out = w_self * (np.linalg.norm(pos - goal, axis=-1) - d_i)
        for col, w, d in terms:
            out = out + w * (np.linalg.norm(pos - x[..., col, :2], axis=-1) - d)
        for rect in rects:
            out = out + c_obs * _inside(pos, rect)
        return out

    def phi(x):
        return c_t * np.sum(omega * np.linalg.norm(x[..., :2] - exits, axis=-1), axis=-1)

    n_ctrl = 2 * len(members)
    return CostSpec(q, phi, sc.r_scale * np.eye(n_ctrl), sc.lam, gradient_free=True)


def unicycle_dynamics(sc: UnicycleScenario, members, sigma=None):
    from .pathintegral import make_joint_dynamics

    s = np.asarray(sc.sigma if sigma is None else sigma, dtype=float)
    return make_joint_dynamics(unicycle_drift, np.eye(2), s, ACTUATED, 4, len(members))


def build_team_problem(sc: UnicycleScenario, family: str = "pathintegral"):
    """Assemble the receding-horizon problem for ``family`` ("pathintegral" or "reps")."""
    from .pathintegral import TeamProblem

    problems = sc.validate()
    if problems:
        raise ConfigError("; ".join(problems))
    g = build_graph(sc.n_agents, sc.edges)
    dyns, costs = [], []
    for i in range(sc.n_agents):
        members = g.subsystem(i).members
        dyns.append(unicycle_dynamics(sc, members))
        costs.append(build_unicycle_cost(sc, members, family))
    return TeamProblem(g, sc.x0.copy(), dyns, costs, sc.tf, sc.dt, sc.k, sc.y,
                       sample_sigma=np.asarray(sc.sample_sigma, dtype=float),
                       path_value_noise=sc.path_value_noise, name=sc.name,
                       extra={"reps": dict(sc.reps), "region": tuple(sc.region),
                              "curve_iters": sc.curve_iters})


def tri_open() -> UnicycleScenario:
    return UnicycleScenario(
        name="tri-open",
        x0=[[5, 5, 0.5, 0], [5, 45, 0.5, 0], [5, 25, 0.5, 0]],
        exits=[[45, 25, 0, 0]] * 3,
        edges=tuple(TRIANGLE), tf=25.0, dt=0.2, k=7, y=400,
        costs={"pathintegral": {"w_self": [0.75, 0.75, 1.0], "w_pair": {(0, 1): 1.5, (1, 0): 1.5}},
               "reps": {"w_self": [0.1, 0.1, 0.1], "w_pair": {(0, 1): 0.2, (1, 0): 0.2}}},
        reps={"delta": 25.0, "y_init": 400, "y_iter": 150, "max_iters": 3, "tol": 1e-3},
    )


def tri_cluttered() -> UnicycleScenario:
    return UnicycleScenario(
        name="tri-cluttered",
        x0=[[45, 5, 0.35, np.pi], [5, 5, 0.65, 0], [45, 5, 0.5, np.pi]],
        exits=[[45, 45, 0, np.pi / 2], [45, 45, 0, np.pi / 2], [5, 45, 0, np.pi]],
        edges=tuple(TRIANGLE), tf=30.0, dt=0.2, k=18, y=400,
        costs={"pathintegral": {"w_self": [1.0, 1.0, 1.0], "w_pair": {(0, 1): 1.5, (1, 0): 0.5}},
               "reps": {"w_self": [0.18, 0.18, 0.18], "w_pair": {(0, 1): 0.27, (1, 0): 0.1}}},
        # plausible geometry; the published figures give no coordinates
        obstacles=((15.0, 25.0, 15.0, 30.0), (30.0, 40.0, 30.0, 38.0)),
        reps={"delta": 50.0, "y_init": 400, "y_iter": 150, "max_iters": 3, "tol": 1e-3},
    )


def line_nine() -> UnicycleScenario:
    x0 = [[10, 100 - 10 * i, 0.5, 0] for i in range(1, 10)]
    exits = [[90, 65, 0, 0]] * 6 + [[90, 25, 0, 0]] * 2 + [[90, 10, 0, 0]]
    groups = [0] * 6 + [1] * 2 + [2]
    pair = {}
    for i in range(8):
        if groups[i] == groups[i + 1]:
            pair[(i, i + 1)] = 0.5
            pair[(i + 1, i)] = 0.5
    w = {"w_self": [0.5] * 9, "w_pair": pair}
    return UnicycleScenario(
        name="line-9", x0=x0, exits=exits, edges=tuple((i, i + 1) for i in range(8)),
        tf=40.0, dt=0.2, k=7, y=400, costs={"pathintegral": w, "reps": copy.deepcopy(w)},
        region=(0.0, 100.0, 0.0, 100.0),
    )


def grid_default() -> GridScenario:
    return GridScenario()


def grid_altered_wind() -> GridScenario:
    return GridScenario(passive="altered")


_BUILTINS = {
    "grid-default": grid_default,
    "grid-altered-wind": grid_altered_wind,
    "tri-open": tri_open,
    "tri-cluttered": tri_cluttered,
    "line-9": line_nine,
}


def list_builtin_scenarios() -> list[str]:
    return sorted(_BUILTINS)


def get_scenario(name: str):
    try:
        return _BUILTINS[name]()
    except KeyError:
        raise ConfigError(f"unknown scenario {name!r}; valid names: {', '.join(list_builtin_scenarios())}") from None
