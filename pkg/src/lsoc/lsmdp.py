"""Discrete-time linearly-solvable MDPs over factorial subsystems.

A subsystem's joint state is the tuple of its members' states, flattened
row-major with the center as the slowest-varying axis.  The joint passive
table is the Kronecker product of the members' tables, and the Bellman
equation becomes the linear fixed point ``Z_I = Theta Z_I + Omega Z_B`` in
the desirability ``Z = exp(-V)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.special import logsumexp

from .errors import (
    ConfigError,
    DegenerateDenominator,
    MaxIterationsExceeded,
    NoBoundaryReachable,
    SupportViolation,
)
from .network import Subsystem

Z_FLOOR = 1e-300
ROW_TOL = 1e-12


@dataclass(frozen=True)
class DiscreteModel:
    """Single-agent finite model.

    Parameters
    ----------
    passive : (n, n) array
        Row-stochastic passive transition table ``p(x'|x)``.
    boundary : (n,) bool array
        Exit states; their rows must be absorbing.
    exit_cost : (n,) array
        Terminal cost, read only at boundary states.  Must be >= 0.
    """

    passive: np.ndarray
    boundary: np.ndarray
    exit_cost: np.ndarray
    labels: tuple = ()

    def __post_init__(self):
        p = np.asarray(self.passive, dtype=float)
        b = np.asarray(self.boundary, dtype=bool)
        phi = np.asarray(self.exit_cost, dtype=float)
        n = p.shape[0]
        if p.shape != (n, n) or b.shape != (n,) or phi.shape != (n,):
            raise ConfigError("passive must be (n, n); boundary and exit_cost (n,)")
        if np.any(p < 0):
            raise ConfigError("passive table has negative entries")
        bad = np.flatnonzero(np.abs(p.sum(axis=1) - 1.0) > ROW_TOL)
        if bad.size:
            raise ConfigError(f"passive row {bad[0]} does not sum to 1")
        if not b.any():
            raise ConfigError("model has no boundary state")
        for s in np.flatnonzero(b):
            if p[s, s] != 1.0:
                raise ConfigError(f"boundary state {s} is not absorbing")
        if np.any(phi[b] < 0):
            raise ConfigError("exit costs must be non-negative")
        object.__setattr__(self, "passive", p)
        object.__setattr__(self, "boundary", b)
        object.__setattr__(self, "exit_cost", phi)

    @property
    def n_states(self) -> int:
        return self.passive.shape[0]


@dataclass
class JointModel:
    """Joint passive dynamics and costs of one factorial subsystem.

    A joint state is a boundary state when the center agent is at one of its
    boundary states; neighbours that exit earlier simply stay put.
    """

    subsystem: Subsystem
    agents: tuple[DiscreteModel, ...]
    state_cost: np.ndarray
    exit_cost: np.ndarray
    weights: np.ndarray
    passive: sp.csr_matrix = field(repr=False)
    boundary: np.ndarray = field(repr=False)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(a.n_states for a in self.agents)

    @property
    def n_joint(self) -> int:
        return int(np.prod(self.shape))

    @property
    def interior_idx(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary)

    @property
    def boundary_idx(self) -> np.ndarray:
        return np.flatnonzero(self.boundary)

    def joint_index(self, states) -> int:
        if np.isscalar(states):
            return int(states)
        return int(np.ravel_multi_index(tuple(int(s) for s in states), self.shape))

    def member_states(self, index: int) -> tuple[int, ...]:
        return tuple(int(s) for s in np.unravel_index(int(index), self.shape))


def joint_passive(agents: Sequence[DiscreteModel]) -> sp.csr_matrix:
    """Kronecker product of member passive tables, center slowest."""
    out = sp.csr_matrix(agents[0].passive)
    for a in agents[1:]:
        out = sp.kron(out, sp.csr_matrix(a.passive), format="csr")
    out.eliminate_zeros()
    return out


def build_joint_model(
    subsystem: Subsystem,
    agents: Sequence[DiscreteModel],
    state_cost: Callable[..., np.ndarray] | np.ndarray,
    weights: Sequence[float] | None = None,
    exit_cost: np.ndarray | None = None,
) -> JointModel:
    """Assemble the joint model of ``subsystem``.

    ``agents`` are the members' models in member order.  ``state_cost`` is
    either a flat array over joint states or a callable receiving one index
    grid per member (each shaped like the joint state space) and returning
    the cost on that grid.  The joint exit cost defaults to
    ``sum_j w_j * phi_j(x_j)`` with weights 1 for the center and 0.5 for
    neighbours.
    """
    agents = tuple(agents)
    if len(agents) != subsystem.size:
        raise ConfigError("one DiscreteModel per subsystem member is required")
    shape = tuple(a.n_states for a in agents)
    grids = np.indices(shape)

    if callable(state_cost):
        q = np.asarray(state_cost(*grids), dtype=float)
        q = np.broadcast_to(q, shape).ravel().copy()
    else:
        q = np.asarray(state_cost, dtype=float).ravel()
        if q.size != int(np.prod(shape)):
            raise ConfigError("state_cost size does not match the joint state space")

    if weights is None:
        weights = [1.0] + [0.5] * (len(agents) - 1)
    w = np.asarray(weights, dtype=float)
    if w.shape != (len(agents),) or np.any(w <= 0):
        raise ConfigError("exit-cost weights must be positive, one per member")
    if np.any(w[1:] > w[0]):
        raise ConfigError("the center's exit-cost weight must be the largest")

    if exit_cost is None:
        phi = sum(w[k] * agents[k].exit_cost[grids[k]] for k in range(len(agents)))
        phi = np.asarray(phi, dtype=float).ravel()
    else:
        phi = np.asarray(exit_cost, dtype=float).ravel()
        if phi.size != q.size:
            raise ConfigError("exit_cost size does not match the joint state space")

    boundary = agents[0].boundary[grids[0]].ravel()
    return JointModel(subsystem, agents, q, phi, w, joint_passive(agents), boundary)


@dataclass
class Desirability:
    z_interior: np.ndarray
    z_boundary: np.ndarray

    def full(self, m: JointModel) -> np.ndarray:
        z = np.empty(m.n_joint)
        z[m.interior_idx] = self.z_interior
        z[m.boundary_idx] = self.z_boundary
        return z

    def value(self, m: JointModel) -> np.ndarray:
        return -np.log(self.full(m))


def kl_divergence(p, q) -> float:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError("distributions must share a support")
    on = p > 0
    if np.any(q[on] <= 0):
        raise SupportViolation("p puts mass where q has none")
    return float(np.sum(p[on] * (np.log(p[on]) - np.log(q[on]))))


def joint_immediate_cost(m: JointModel, xbar, u) -> float:
    """``q(x) + KL(u || p(.|x))``.

    ``u`` is either a distribution over joint successor states or a sequence
    of per-member distributions (a factored control), in which case the KL
    term is the sum of the members' local KL terms.
    """
    idx = m.joint_index(xbar)
    if m.boundary[idx]:
        raise ValueError("immediate cost is defined on interior states only")
    cost = m.state_cost[idx]
    if isinstance(u, (list, tuple)):
        states = m.member_states(idx)
        for k, (a, uk) in enumerate(zip(m.agents, u)):
            cost += kl_divergence(uk, a.passive[states[k]])
        return float(cost)
    p = m.passive.getrow(idx).toarray().ravel()
    return float(cost + kl_divergence(u, p))


def build_linear_system(m: JointModel):
    """Return ``(Theta, Omega, z_B)`` for the interior fixed point."""
    interior = m.interior_idx
    bnd = m.boundary_idx
    _check_exit_reachable(m)
    with np.errstate(under="ignore"):
        scale = sp.diags(np.exp(-m.state_cost[interior]))
    rows = m.passive[interior]
    theta = (scale @ rows[:, interior]).tocsr()
    omega = (scale @ rows[:, bnd]).tocsr()
    with np.errstate(under="ignore"):
        z_b = np.exp(-m.exit_cost[bnd])
    return theta, omega, z_b


def _check_exit_reachable(m: JointModel) -> None:
    reach = m.boundary.copy()
    support = (m.passive != 0).astype(np.float64).tocsr()
    while True:
        new = reach | (support @ reach.astype(np.float64) > 0)
        if np.array_equal(new, reach):
            break
        reach = new
    if not reach.all():
        bad = int(np.flatnonzero(~reach)[0])
        raise NoBoundaryReachable(
            f"joint state {m.member_states(bad)} cannot reach an exit state"
        )


def solve_desirability_centralized(
    theta, omega, z_b, tol: float = 1e-10, max_iter: int = 10**6
) -> Desirability:
    """Fixed-point iteration ``Z_I <- Theta Z_I + Omega Z_B``.

    Stops when every entry's update is below ``tol`` both absolutely and
    relative to the entry itself, so tiny desirabilities are still resolved.
    Entries pinned at the underflow floor are excluded.
    """
    z_b = np.asarray(z_b, dtype=float)
    b = np.asarray(omega @ z_b).ravel()
    z = np.maximum(b, Z_FLOOR)
    for _ in range(max_iter):
        z_new = np.maximum(theta @ z + b, Z_FLOOR)
        live = z_new > 1e3 * Z_FLOOR
        resid = np.abs(z_new - z)
        z = z_new
        if not live.any() or np.all(resid[live] <= tol * np.minimum(1.0, z[live])):
            return Desirability(z, z_b.copy())
    raise MaxIterationsExceeded(f"no convergence after {max_iter} iterations")


def solve_desirability_direct(theta, omega, z_b) -> np.ndarray:
    """Dense LU solve of ``(I - Theta) Z_I = Omega Z_B``; used as an oracle."""
    t = theta.toarray() if sp.issparse(theta) else np.asarray(theta)
    b = np.asarray(omega @ np.asarray(z_b)).ravel()
    return np.linalg.solve(np.eye(t.shape[0]) - t, b)


def optimal_joint_control(m: JointModel, z: Desirability | np.ndarray, xbar) -> np.ndarray:
    """Optimal controlled transition ``u*(x'|x) ~ p(x'|x) Z(x')`` over joint states."""
    idx = m.joint_index(xbar)
    zf = z.full(m) if isinstance(z, Desirability) else np.asarray(z, dtype=float)
    row = m.passive.getrow(idx)
    cols, p = row.indices, row.data
    with np.errstate(divide="ignore"):
        logw = np.log(p) + np.log(zf[cols])
    if not np.isfinite(logw).any():
        raise DegenerateDenominator(f"all successors of state {idx} have zero weight")
    w = np.exp(logw - logsumexp(logw))
    u = np.zeros(m.n_joint)
    u[cols] = w
    return u


def bellman_residual(m: JointModel, z: Desirability | np.ndarray, xbar) -> float:
    """``|V(x) - q(x) + log sum_x' p(x'|x) Z(x')|`` at an interior state."""
    idx = m.joint_index(xbar)
    zf = z.full(m) if isinstance(z, Desirability) else np.asarray(z, dtype=float)
    row = m.passive.getrow(idx)
    log_w = logsumexp(np.log(row.data) + np.log(zf[row.indices]))
    return float(abs(-np.log(zf[idx]) - m.state_cost[idx] + log_w))


def marginal_local_control(m: JointModel, u: np.ndarray) -> np.ndarray:
    """Sum the joint control over neighbours' successor states."""
    joint = np.asarray(u, dtype=float).reshape(m.shape)
    return joint.reshape(m.shape[0], -1).sum(axis=1)


def plan(models: Sequence[JointModel], solver: str = "centralized", tol: float = 1e-10,
         max_iter: int = 10**6):
    """Planning phase of the distributed LSMDP algorithm.

    Returns one ``Desirability`` per subsystem and, for
    ``solver="consensus"``, the per-subsystem ``ConsensusResult`` logs.
    """
    out, logs = [], []
    for m in models:
        theta, omega, z_b = build_linear_system(m)
        if solver == "centralized":
            out.append(solve_desirability_centralized(theta, omega, z_b, tol, max_iter))
        elif solver == "consensus":
            from .consensus import consensus_solve, partition_rows

            part = partition_rows((theta, omega, z_b), m.subsystem)
            res = consensus_solve(part, tol=tol, max_iters=min(max_iter, 100_000))
            out.append(Desirability(np.maximum(res.z, Z_FLOOR), z_b.copy()))
            logs.append(res)
        else:
            raise ConfigError(f"unknown solver {solver!r}")
    return out, logs


def greedy_rollout(
    models: Sequence[JointModel],
    zs: Sequence[Desirability],
    x0: Sequence[int],
    horizon: int,
    mode: str = "max-likelihood",
    seed: int | None = None,
) -> np.ndarray:
    """Execute every agent's marginal optimal control on the global state.

    ``models[i]`` must be the joint model of agent ``i``'s subsystem.  Each
    step all agents move simultaneously from their own marginal; an agent at
    one of its exit states stays there.  Returns a ``(T + 1, N)`` array of
    agent states with ``T <= horizon``.
    """
    if mode not in ("max-likelihood", "sampled"):
        raise ConfigError(f"unknown rollout mode {mode!r}")
    rng = np.random.default_rng(seed)
    zfull = [z.full(m) for m, z in zip(models, zs)]
    state = np.array(x0, dtype=int)
    path = [state.copy()]

    def done(s):
        return all(models[i].agents[0].boundary[s[i]] for i in range(len(models)))

    for _ in range(horizon):
        if done(state):
            break
        nxt = state.copy()
        for i, m in enumerate(models):
            if m.agents[0].boundary[state[i]]:
                continue
            xbar = [state[j] for j in m.subsystem.members]
            local = marginal_local_control(m, optimal_joint_control(m, zfull[i], xbar))
            if mode == "max-likelihood":
                nxt[i] = int(np.argmax(local))
            else:
                nxt[i] = int(rng.choice(local.size, p=local / local.sum()))
        state = nxt
        path.append(state.copy())
    return np.array(path)
