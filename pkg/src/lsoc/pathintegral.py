"""Continuous-time path-integral control for factorial subsystems.

Joint states are arrays shaped ``(..., N, M)``: ``N`` subsystem members (in
member order, center first) with ``M`` state components each.  Only the
``D`` directly actuated components receive control and noise; the rest
evolve by the drift alone.  A rollout batch stores ``Y`` uncontrolled paths
of ``K`` Euler-Maruyama segments and everything the estimators need.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp, softmax

from .errors import ConfigError, NonFiniteState, SingularH, SingularR
from .network import Graph


@dataclass(frozen=True)
class JointDynamics:
    """``dx = f(x,t) dt + B (u dt + sigma dw)`` for every member.

    Parameters
    ----------
    drift : callable
        ``drift(x, t)`` with ``x`` shaped ``(..., N, M)``; returns the same shape.
    b_d : (N, D, P) array
        Directly actuated block of each member's control matrix.
    sigma : (N, P, P) array
        Noise factor of each member.
    actuated : (D,) int array
        Which of the ``M`` components are directly actuated.
    boundary : callable, optional
        ``boundary(x) -> bool array (...)``; once true a rollout is frozen.
    """

    drift: Callable
    b_d: np.ndarray
    sigma: np.ndarray
    actuated: np.ndarray
    state_dim: int
    boundary: Callable | None = None

    @property
    def n_members(self) -> int:
        return self.b_d.shape[0]

    @property
    def d(self) -> int:
        return self.b_d.shape[1]

    @property
    def p(self) -> int:
        return self.b_d.shape[2]

    def with_sigma(self, sigma) -> "JointDynamics":
        return replace(self, sigma=_member_blocks(sigma, self.n_members, self.p))

    def h_blocks(self, sigma=None) -> np.ndarray:
        s = self.sigma if sigma is None else _member_blocks(sigma, self.n_members, self.p)
        return np.einsum("ndp,npq,nrq,ner->nde", self.b_d, s, s, self.b_d)


def _member_blocks(a, n, k):
    a = np.asarray(a, dtype=float)
    if a.ndim == 0:
        return np.broadcast_to(a * np.eye(k), (n, k, k)).copy()
    if a.ndim == 1:
        return np.broadcast_to(np.diag(a), (n, k, k)).copy()
    if a.ndim == 2:
        return np.broadcast_to(a, (n, k, k)).copy()
    return a.copy()


def make_joint_dynamics(drift, b_d, sigma, actuated, state_dim, n_members,
                        boundary=None) -> JointDynamics:
    b = np.asarray(b_d, dtype=float)
    if b.ndim == 2:
        b = np.broadcast_to(b, (n_members,) + b.shape).copy()
    return JointDynamics(drift, b, _member_blocks(sigma, n_members, b.shape[2]),
                         np.asarray(actuated, dtype=int), int(state_dim), boundary)


@dataclass
class CostSpec:
    """Running cost ``q``, terminal cost ``phi``, control weight ``R`` and temperature.

    ``state_cost(x, t)`` and ``terminal_cost(x)`` take joint states shaped
    ``(..., N, M)``.  ``grad`` (optional) returns the gradient of ``q`` with
    respect to the actuated components, shaped ``(..., N, D)``; central
    finite differences are used otherwise.
    """

    state_cost: Callable
    terminal_cost: Callable
    r: np.ndarray
    lam: float = 1.0
    grad: Callable | None = None
    gradient_free: bool = False

    def __post_init__(self):
        r = np.atleast_2d(np.asarray(self.r, dtype=float))
        if r.shape[0] != r.shape[1] or not np.allclose(r, r.T):
            raise SingularR("R must be symmetric")
        try:
            np.linalg.cholesky(r)
        except np.linalg.LinAlgError as exc:
            raise SingularR("R must be positive definite") from exc
        if self.lam <= 0:
            raise ConfigError("temperature must be positive")
        self.r = r

    def compatibility_residual(self, dyn: JointDynamics) -> float:
        """``|| sigma sigma^T - lam R^{-1} ||_2`` on the joint control space."""
        s = np.zeros_like(self.r)
        p = dyn.p
        for n in range(dyn.n_members):
            s[n * p:(n + 1) * p, n * p:(n + 1) * p] = dyn.sigma[n] @ dyn.sigma[n].T
        return float(np.linalg.norm(s - self.lam * np.linalg.inv(self.r), 2))


@dataclass
class TrajectoryBatch:
    """``Y`` rollouts of ``K`` segments of length ``eps`` starting at ``t0``.

    ``paths`` has shape ``(Y, K + 1, N, M)``; ``alive[y, k]`` is false once
    rollout ``y`` has been frozen at a boundary before step ``k``.
    ``sample_sigma`` is the noise used to generate the paths.
    """

    x0: np.ndarray
    paths: np.ndarray
    eps: float
    t0: float
    alive: np.ndarray
    sample_sigma: np.ndarray
    controls: np.ndarray | None = None
    seed: object = None
    s_tilde: np.ndarray | None = None
    u_init: np.ndarray | None = None
    log_proposal: np.ndarray | None = None

    @property
    def n_rollouts(self) -> int:
        return self.paths.shape[0]

    @property
    def k(self) -> int:
        return self.paths.shape[1] - 1

    def times(self) -> np.ndarray:
        return self.t0 + self.eps * np.arange(self.k + 1)


def hjb_optimal_control(b, r, grad_v) -> np.ndarray:
    """``u* = -R^{-1} B^T grad V``."""
    b = np.atleast_2d(np.asarray(b, dtype=float))
    r = np.atleast_2d(np.asarray(r, dtype=float))
    try:
        return -np.linalg.solve(r, b.T @ np.asarray(grad_v, dtype=float))
    except np.linalg.LinAlgError as exc:
        raise SingularR("R is singular") from exc


def _rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def simulate_uncontrolled(dyn: JointDynamics, x0, t0: float, tf: float, k: int, y: int,
                          seed=None, sample_sigma=None) -> TrajectoryBatch:
    """Euler-Maruyama rollouts of the passive dynamics.

    ``sample_sigma`` overrides the model noise (wider exploration).  The
    whole batch is drawn from one generator seeded by ``seed`` (an int, a
    sequence of ints or a ``Generator``), so it is reproducible regardless
    of how batches are distributed over workers.
    """
    if k < 1 or y < 1:
        raise ConfigError("K and Y must be at least 1")
    eps = (tf - t0) / k
    if eps <= 0:
        raise ConfigError("t_f must exceed t")
    return _rollout(dyn, x0, t0, eps, k, y, seed, sample_sigma, policy=None)


def _rollout(dyn, x0, t0, eps, k, y, seed, sample_sigma, policy):
    rng = _rng(seed)
    sig = dyn.sigma if sample_sigma is None else _member_blocks(sample_sigma, dyn.n_members, dyn.p)
    n, m, p = dyn.n_members, dyn.state_dim, dyn.p
    x0 = np.asarray(x0, dtype=float)
    # either one start shared by all paths or one start per path
    x0 = x0.reshape((y, n, m) if x0.size == y * n * m and x0.ndim == 3 else (n, m))
    paths = np.empty((y, k + 1, n, m))
    paths[:, 0] = x0
    alive = np.ones((y, k + 1), dtype=bool)
    controls = np.empty((y, k, n, p)) if policy is not None else None
    noise_scale = np.sqrt(eps)
    act = dyn.actuated
    for step in range(k):
        t = t0 + step * eps
        x = paths[:, step]
        if dyn.boundary is not None:
            alive[:, step] = alive[:, step] & ~np.asarray(dyn.boundary(x), dtype=bool)
        dx = dyn.drift(x, t) * eps
        xi = rng.standard_normal((y, n, p))
        w = np.einsum("npq,ynq->ynp", sig, xi) * noise_scale
        if policy is not None:
            u = policy(step, x, rng)
            controls[:, step] = u
            w = w + u * eps
        dx[..., act] += np.einsum("ndp,ynp->ynd", dyn.b_d, w)
        nxt = x + dx
        frozen = ~alive[:, step]
        nxt[frozen] = x[frozen]
        alive[:, step + 1] = alive[:, step]
        paths[:, step + 1] = nxt
    if dyn.boundary is not None:
        alive[:, k] = alive[:, k] & ~np.asarray(dyn.boundary(paths[:, k]), dtype=bool)
    if not np.all(np.isfinite(paths)):
        raise NonFiniteState("rollout produced non-finite states")
    return TrajectoryBatch(x0, paths, float(eps), float(t0), alive, sig, controls,
                           seed if not isinstance(seed, np.random.Generator) else None)


def _chol_h(h):
    try:
        return np.linalg.cholesky(h)
    except np.linalg.LinAlgError as exc:
        raise SingularH("H = B sigma sigma^T B^T is not positive definite") from exc


def _kinetic(dyn: JointDynamics, batch: TrajectoryBatch, h):
    """``(sum_k log det H, sum_k ||dx_d/eps - f_d||^2_{H^-1})`` per rollout over live steps."""
    chol = _chol_h(h)
    logdet = 2.0 * np.sum(np.log(np.diagonal(chol, axis1=-2, axis2=-1)))
    hinv = np.linalg.inv(h)
    paths = batch.paths
    kk = batch.k
    times = batch.t0 + batch.eps * np.arange(kk)
    f = np.stack([dyn.drift(paths[:, s], times[s]) for s in range(kk)], axis=1)
    act = dyn.actuated
    v = (paths[:, 1:, :, :][..., act] - paths[:, :-1, :, :][..., act]) / batch.eps - f[..., act]
    quad = np.einsum("yknd,nde,ykne->yk", v, hinv, v)
    live = batch.alive[:, :-1]
    return logdet * live.sum(axis=1), np.where(live, quad, 0.0).sum(axis=1)


def running_cost_sum(cost: CostSpec, batch: TrajectoryBatch) -> np.ndarray:
    """``eps * sum_k q(x_k, t_k)`` over live steps."""
    kk = batch.k
    q = np.stack([np.asarray(cost.state_cost(batch.paths[:, s], batch.t0 + s * batch.eps), dtype=float)
                  * np.ones(batch.n_rollouts) for s in range(kk)], axis=1)
    return batch.eps * np.where(batch.alive[:, :-1], q, 0.0).sum(axis=1)


def generalized_path_value(dyn: JointDynamics, cost: CostSpec, batch: TrajectoryBatch,
                           value_sigma=None) -> np.ndarray:
    """Generalized path value of every rollout.

    ``S = phi/lam + (eps/lam) sum q + 1/2 sum log det H
    + (eps/(2 lam)) sum ||dx_d/eps - f_d||^2_{H^-1}`` with
    ``H = B_d sigma sigma^T B_d^T``.  ``value_sigma`` replaces the model
    noise inside ``H``.
    """
    lam = cost.lam
    h = dyn.h_blocks(value_sigma)
    logdet, quad = _kinetic(dyn, batch, h)
    phi = np.asarray(cost.terminal_cost(batch.paths[:, -1]), dtype=float) * np.ones(batch.n_rollouts)
    s = phi / lam + running_cost_sum(cost, batch) / lam + 0.5 * logdet + batch.eps / (2 * lam) * quad
    if not np.all(np.isfinite(s)):
        raise NonFiniteState("non-finite path value")
    return s


def log_proposal_density(dyn: JointDynamics, batch: TrajectoryBatch) -> np.ndarray:
    """Log density of each path under the noise it was sampled with.

    The ``2 pi eps`` normalising constant is dropped, matching the path value.
    """
    logdet, quad = _kinetic(dyn, batch, dyn.h_blocks(batch.sample_sigma))
    return -0.5 * logdet - 0.5 * batch.eps * quad


def finite_difference_grad(cost: CostSpec, dyn: JointDynamics, x, t, h: float = 1e-6):
    """Central differences of ``q`` in the actuated components, shape ``(..., N, D)``."""
    x = np.asarray(x, dtype=float)
    g = np.zeros(x.shape[:-1] + (dyn.d,))
    for n in range(x.shape[-2]):
        for j, c in enumerate(dyn.actuated):
            xp = x.copy()
            xm = x.copy()
            xp[..., n, c] += h
            xm[..., n, c] -= h
            g[..., n, j] = (np.asarray(cost.state_cost(xp, t)) - np.asarray(cost.state_cost(xm, t))) / (2 * h)
    return g


def initial_control_variable(dyn: JointDynamics, cost: CostSpec, batch: TrajectoryBatch,
                             value_sigma=None) -> np.ndarray:
    """``u~ = -(eps/lam) grad q + H^-1 (dx_d/eps - f_d)`` at the first segment.

    Returns shape ``(Y, N * D)``.
    """
    h = dyn.h_blocks(value_sigma)
    _chol_h(h)
    x0 = batch.paths[:, 0]
    act = dyn.actuated
    v = (batch.paths[:, 1][..., act] - x0[..., act]) / batch.eps - dyn.drift(x0, batch.t0)[..., act]
    u = np.einsum("nde,yne->ynd", np.linalg.inv(h), v)
    if not cost.gradient_free:
        g = cost.grad(x0, batch.t0) if cost.grad is not None else finite_difference_grad(cost, dyn, x0, batch.t0)
        u = u - batch.eps / cost.lam * np.asarray(g)
    return u.reshape(batch.n_rollouts, -1)


def evaluate_batch(dyn: JointDynamics, cost: CostSpec, batch: TrajectoryBatch,
                   value_sigma=None) -> TrajectoryBatch:
    """Fill ``s_tilde``, ``u_init`` and ``log_proposal`` in place and return the batch."""
    batch.s_tilde = generalized_path_value(dyn, cost, batch, value_sigma)
    batch.u_init = initial_control_variable(dyn, cost, batch, value_sigma)
    batch.log_proposal = log_proposal_density(dyn, batch)
    return batch


def mc_path_weights(s_tilde, log_proposal=None) -> np.ndarray:
    """Normalised path weights ``softmax(-S - log q)``.

    ``log_proposal`` is the log density of each path under the law it was
    sampled from; with it the weights are importance-corrected estimates of
    the optimal path distribution.  Omit it to get the plain ``softmax(-S)``.
    Accepts a ``TrajectoryBatch`` as well.
    """
    if isinstance(s_tilde, TrajectoryBatch):
        log_proposal = s_tilde.log_proposal
        s_tilde = s_tilde.s_tilde
    a = -np.asarray(s_tilde, dtype=float)
    if log_proposal is not None:
        a = a - np.asarray(log_proposal, dtype=float)
    return softmax(a - np.max(a))


def mc_joint_control(dyn: JointDynamics, cost: CostSpec, batch: TrajectoryBatch,
                     weights=None) -> np.ndarray:
    """``u* = lam R^-1 B_d^T sum_y w_y u~_y`` as a flat joint control vector."""
    w = mc_path_weights(batch) if weights is None else np.asarray(weights)
    avg = (w @ batch.u_init).reshape(dyn.n_members, dyn.d)
    bt = np.einsum("ndp,nd->np", dyn.b_d, avg).ravel()
    try:
        return cost.lam * np.linalg.solve(cost.r, bt)
    except np.linalg.LinAlgError as exc:
        raise SingularR("R is singular") from exc


def log_passive_ratio(dyn: JointDynamics, batch: TrajectoryBatch) -> np.ndarray:
    """``log p_model(path) - log p_sample(path)``; zero when both noises agree."""
    logdet, quad = _kinetic(dyn, batch, dyn.h_blocks())
    return -0.5 * logdet - 0.5 * batch.eps * quad - log_proposal_density(dyn, batch)


def desirability_estimate(cost: CostSpec, batch: TrajectoryBatch, dyn: JointDynamics | None = None):
    """Monte Carlo ``Z = E[exp(-phi/lam - (eps/lam) sum q)]``.

    When ``dyn`` is given and the batch was sampled with a different noise
    than the model, each rollout is reweighted by the passive likelihood
    ratio.  Returns ``(Z, offset)`` where ``offset = K D N / 2 log(2 pi lam
    eps)`` is the constant of the discretised path measure, reported
    separately and not folded into ``Z``.
    """
    lam = cost.lam
    phi = np.asarray(cost.terminal_cost(batch.paths[:, -1]), dtype=float) * np.ones(batch.n_rollouts)
    a = -phi / lam - running_cost_sum(cost, batch) / lam
    if dyn is not None and not np.allclose(batch.sample_sigma, dyn.sigma):
        a = a + log_passive_ratio(dyn, batch)
    z = float(np.exp(logsumexp(a) - np.log(a.size)))
    n, dd = batch.paths.shape[2], (dyn.d if dyn is not None else batch.paths.shape[3])
    offset = batch.k * dd * n / 2 * np.log(2 * np.pi * lam * batch.eps)
    return z, float(offset)


def effective_sample_size(w) -> float:
    w = np.asarray(w)
    return float(1.0 / np.sum(w ** 2))


# ------------------------------------------------------------ receding horizon

@dataclass
class TeamProblem:
    """Multi-agent continuous problem as seen by the receding-horizon runners.

    ``dynamics[i]`` and ``costs[i]`` describe subsystem ``i`` with members
    ``graph.subsystem(i).members``.  ``x0`` is the global initial state
    ``(N_agents, M)``.
    """

    graph: Graph
    x0: np.ndarray
    dynamics: Sequence[JointDynamics]
    costs: Sequence[CostSpec]
    tf: float
    dt: float
    k: int
    y: int
    sample_sigma: object = None
    path_value_noise: str = "sampling"
    eps_min: float | None = None
    name: str = ""
    extra: dict = field(default_factory=dict)


def horizon_schedule(t: float, tf: float, k: int, dt: float, eps_min: float | None = None):
    """Return ``(K, eps)`` for the rollouts issued at time ``t``.

    ``K`` stays fixed while ``(tf - t)/K`` is at least ``eps_min`` (default
    ``dt``); afterwards segments are about ``dt`` long and ``K`` shrinks.
    ``K * eps == tf - t`` always holds.
    """
    rem = tf - t
    if rem <= 0:
        raise ValueError("no time left before t_f")
    floor = dt if eps_min is None else eps_min
    if rem / k >= floor - 1e-12:
        return k, rem / k
    kk = max(1, int(np.ceil(rem / dt - 1e-9)))
    return kk, rem / kk


def execute_step(dyn_nominal: JointDynamics, x, u, t, dt, rng):
    """One Euler-Maruyama step of length ``dt`` for a single agent with control ``u``."""
    x = np.asarray(x, dtype=float)[None, None]
    dx = dyn_nominal.drift(x, t)[0, 0] * dt
    xi = rng.standard_normal(dyn_nominal.p)
    w = u * dt + dyn_nominal.sigma[0] @ xi * np.sqrt(dt)
    dx[dyn_nominal.actuated] += dyn_nominal.b_d[0] @ w
    out = x[0, 0] + dx
    if not np.all(np.isfinite(out)):
        raise NonFiniteState("executed state is non-finite")
    return out


@dataclass
class RunLog:
    """Closed-loop trajectory log.

    ``states``: ``(C + 1, N, M)``; ``controls``: ``(C, N, P)`` applied center
    controls; ``q``: ``(C, N)`` subsystem state costs ``q_i``; ``c``:
    ``(C, N)`` immediate costs ``q_i + 1/2 u_i^T R u_i`` of each agent's
    joint estimate; ``rollouts``: ``(C, N)`` rollouts consumed.
    """

    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    q: np.ndarray
    c: np.ndarray
    rollouts: np.ndarray
    info: list = field(default_factory=list)

    def pair_distance(self, i: int, j: int) -> np.ndarray:
        return np.linalg.norm(self.states[:, i, :2] - self.states[:, j, :2], axis=1)


def gather(x_global, members) -> np.ndarray:
    return np.asarray(x_global)[list(members)]


def run_cycles(problem: TeamProblem, controller, seed: int, cycles: int | None = None) -> RunLog:
    """Shared closed loop for the path-integral and REPS runners.

    ``controller(i, xbar, t, k, eps, rng) -> (joint_u, info, n_rollouts)`` is
    called for every agent every cycle on the measured subsystem state.
    Each agent then applies the center block of its joint control for one
    cycle under the model noise.
    """
    g = problem.graph
    n_agents = g.n_agents
    n_cycles = int(round(problem.tf / problem.dt)) if cycles is None else int(cycles)
    x = np.asarray(problem.x0, dtype=float).copy()
    p = problem.dynamics[0].p
    states = [x.copy()]
    controls, qs, cs, nro, info, times = [], [], [], [], [], []
    for cyc in range(n_cycles):
        t = cyc * problem.dt
        if problem.tf - t <= 1e-9:
            break
        k, eps = horizon_schedule(t, problem.tf, problem.k, problem.dt, problem.eps_min)
        u_c = np.zeros((n_agents, p))
        q_c = np.zeros(n_agents)
        c_c = np.zeros(n_agents)
        r_c = np.zeros(n_agents, dtype=int)
        cyc_info = []
        for i in range(n_agents):
            members = g.subsystem(i).members
            xbar = gather(x, members)
            rng = np.random.default_rng([seed, i, cyc, 0])
            u, inf, used = controller(i, xbar, t, k, eps, rng)
            u_c[i] = u[:p]
            q_c[i] = float(problem.costs[i].state_cost(xbar[None], t)[0])
            c_c[i] = q_c[i] + 0.5 * float(u @ problem.costs[i].r @ u)
            r_c[i] = used
            cyc_info.append(inf)
        new = x.copy()
        for i in range(n_agents):
            rng = np.random.default_rng([seed, i, cyc, 1])
            dyn_i = problem.dynamics[i]
            single = replace(dyn_i, b_d=dyn_i.b_d[:1], sigma=dyn_i.sigma[:1])
            new[i] = execute_step(single, x[i], u_c[i], t, problem.dt, rng)
        x = new
        states.append(x.copy())
        controls.append(u_c)
        qs.append(q_c)
        cs.append(c_c)
        nro.append(r_c)
        info.append(cyc_info)
        times.append(t)
    times.append(times[-1] + problem.dt if times else 0.0)
    return RunLog(np.array(times), np.array(states), np.array(controls), np.array(qs),
                  np.array(cs), np.array(nro), info)


def path_integral_controller(problem: TeamProblem, y: int | None = None):
    """Sampling estimator as a closed-loop controller (one batch per cycle)."""
    y = problem.y if y is None else int(y)

    def ctrl(i, xbar, t, k, eps, rng):
        dyn = problem.dynamics[i]
        cost = problem.costs[i]
        samp = problem.sample_sigma
        batch = _rollout(dyn, xbar, t, eps, k, y, rng, samp, policy=None)
        vs = samp if problem.path_value_noise == "sampling" else None
        evaluate_batch(dyn, cost, batch, vs)
        w = mc_path_weights(batch)
        u = mc_joint_control(dyn, cost, batch, w)
        return u, {"ess": effective_sample_size(w), "s_mean": float(batch.s_tilde.mean()),
                   "s_std": float(batch.s_tilde.std())}, y

    return ctrl


def receding_horizon_run(problem: TeamProblem, seed: int = 0, y: int | None = None) -> RunLog:
    """Closed-loop run of the sampling-based distributed controller."""
    return run_cycles(problem, path_integral_controller(problem, y), seed)
