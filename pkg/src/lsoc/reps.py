"""Relative-entropy policy search for a subsystem's path distribution.

Each learning step reweights sampled paths toward the optimal path
distribution ``p* ~ exp(-S)`` while keeping the reweighted distribution
within KL radius ``delta`` of the sampling distribution ``q``.  The weights
come from a convex dual in ``(kappa, theta)``; the new time-varying
linear-Gaussian policy is their weighted maximum-likelihood fit.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq, minimize
from scipy.special import logsumexp, softmax

from .errors import DegenerateDesign, OptimizerDiverged, SingularCovariance
from .pathintegral import (
    CostSpec,
    JointDynamics,
    TeamProblem,
    TrajectoryBatch,
    _rollout,
    gather,
    generalized_path_value,
    horizon_schedule,
    path_integral_controller,
    run_cycles,
)

KAPPA_FLOOR = 1e-6
KAPPA_CEIL = 1e8
COV_FLOOR = 1e-12


@dataclass
class GaussianPolicy:
    """``u_k ~ N(a_k x + b_k, cov_k)`` on flattened joint states and controls.

    ``a``: ``(K, NP, NM)``, ``b``: ``(K, NP)``, ``cov``: ``(K, NP, NP)``.
    """

    a: np.ndarray
    b: np.ndarray
    cov: np.ndarray

    @classmethod
    def initial(cls, k: int, n_ctrl: int, n_state: int, scale: float = 1.0):
        return cls(np.zeros((k, n_ctrl, n_state)), np.zeros((k, n_ctrl)),
                   np.broadcast_to(scale * np.eye(n_ctrl), (k, n_ctrl, n_ctrl)).copy())

    @property
    def k(self) -> int:
        return self.a.shape[0]

    def mean(self, step: int, x) -> np.ndarray:
        return np.asarray(x) @ self.a[step].T + self.b[step]

    def chol(self, step: int) -> np.ndarray:
        return np.linalg.cholesky(floor_cov(self.cov[step]))

    def relative_change(self, other: "GaussianPolicy") -> float:
        out = 0.0
        for new, old in ((self.a, other.a), (self.b, other.b), (self.cov, other.cov)):
            den = max(np.linalg.norm(old), 1e-12)
            out = max(out, float(np.linalg.norm(new - old) / den))
        return out


def floor_cov(c, floor: float = COV_FLOOR) -> np.ndarray:
    c = 0.5 * (c + c.T)
    try:
        # succeeds exactly when every eigenvalue exceeds the floor
        np.linalg.cholesky(c - floor * np.eye(c.shape[0]))
        return c
    except np.linalg.LinAlgError:
        pass
    w, v = np.linalg.eigh(c)
    if np.all(w > floor):
        return c
    return (v * np.maximum(w, floor)) @ v.T


def sample_with_policy(dyn: JointDynamics, policy: GaussianPolicy, x0, t0: float, eps: float,
                       y: int, seed=None, sample_sigma=None, x0_sampler=None) -> TrajectoryBatch:
    """Roll out ``y`` paths applying ``u ~ policy`` at each segment.

    ``x0_sampler(rng, y)`` (optional) draws initial joint states shaped
    ``(y, N, M)``; otherwise every path starts at ``x0``.
    """
    n, p = dyn.n_members, dyn.p
    chols = [policy.chol(k) for k in range(policy.k)]

    def pol(step, x, rng):
        flat = x.reshape(x.shape[0], -1)
        u = policy.mean(step, flat) + rng.standard_normal((x.shape[0], n * p)) @ chols[step].T
        return u.reshape(x.shape[0], n, p)

    if x0_sampler is not None:
        rng = np.random.default_rng(seed) if not isinstance(seed, np.random.Generator) else seed
        x0 = np.asarray(x0_sampler(rng, y), dtype=float).reshape(y, n, dyn.state_dim)
        seed = rng
    return _rollout(dyn, x0, t0, eps, policy.k, y, seed, sample_sigma, pol)


def _joint_bd(dyn: JointDynamics) -> np.ndarray:
    n, d, p = dyn.n_members, dyn.d, dyn.p
    out = np.zeros((n * d, n * p))
    for i in range(n):
        out[i * d:(i + 1) * d, i * p:(i + 1) * p] = dyn.b_d[i]
    return out


def _joint_h(dyn: JointDynamics, sigma) -> np.ndarray:
    h = dyn.h_blocks(sigma)
    n, d = h.shape[0], h.shape[1]
    out = np.zeros((n * d, n * d))
    for i in range(n):
        out[i * d:(i + 1) * d, i * d:(i + 1) * d] = h[i]
    return out


def old_path_density(dyn: JointDynamics, policy: GaussianPolicy, batch: TrajectoryBatch) -> np.ndarray:
    """Log density of each path under the sampling policy.

    Marginalising the Gaussian control, the actuated components move as
    ``N(x_d + eps f_d + eps B_d (a x + b), eps H + eps^2 B_d cov B_d^T)``;
    the other components are deterministic given the state and contribute
    nothing.  A deterministic initial state contributes ``log 1 = 0``.
    """
    bd = _joint_bd(dyn)
    h = _joint_h(dyn, batch.sample_sigma)
    eps = batch.eps
    act = dyn.actuated
    y = batch.n_rollouts
    out = np.zeros(y)
    for k in range(batch.k):
        x = batch.paths[:, k]
        flat = x.reshape(y, -1)
        mean = (x[..., act] + eps * dyn.drift(x, batch.t0 + k * eps)[..., act]).reshape(y, -1)
        mean = mean + eps * policy.mean(k, flat) @ bd.T
        cov = eps * h + eps ** 2 * bd @ floor_cov(policy.cov[k]) @ bd.T
        try:
            c = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise SingularCovariance("transition covariance is not positive definite") from exc
        r = batch.paths[:, k + 1][..., act].reshape(y, -1) - mean
        z = np.linalg.solve(c, r.T)
        dim = r.shape[1]
        out += -0.5 * np.sum(z ** 2, axis=0) - np.sum(np.log(np.diag(c))) - 0.5 * dim * np.log(2 * np.pi)
    if not np.all(np.isfinite(out)):
        raise SingularCovariance("non-finite path density")
    return out


@dataclass
class DualSolution:
    kappa: float
    theta: np.ndarray
    eta: float
    g: float
    grad_norm: float
    kl: float = float("nan")


def _exponent(log_q, s, psi, theta, kappa):
    a = -(np.asarray(log_q) + np.asarray(s))
    if psi is not None and np.size(theta):
        a = a - psi @ theta
    return a / (1.0 + kappa)


def dual_objective(log_q, s, kappa: float, delta: float, theta=None, psi=None, psi_hat=None) -> float:
    """Sample estimate of the REPS dual.

    ``g = kappa delta + theta^T psi_hat + (1 + kappa) log mean_y
    q_y^{-1/(1+kappa)} exp(-(S_y + psi_y theta)/(1 + kappa))``.  The
    ``q^{-1/(1+kappa)}`` factor is the importance correction for paths drawn
    from ``q`` itself.
    """
    theta = np.zeros(0) if theta is None else np.asarray(theta, dtype=float)
    a = _exponent(log_q, s, psi, theta, kappa)
    g = kappa * delta + (1.0 + kappa) * (logsumexp(a) - np.log(a.size))
    if psi_hat is not None and theta.size:
        g += float(theta @ psi_hat)
    return float(g)


def _dual_and_grad(z, log_q, s, delta, psi, psi_hat):
    kappa = np.exp(z[0])
    theta = z[1:]
    a = _exponent(log_q, s, psi, theta, kappa)
    lme = logsumexp(a) - np.log(a.size)
    w = softmax(a)
    g = kappa * delta + (1 + kappa) * lme
    dk = delta + lme - w @ a
    grad = [kappa * dk]
    if theta.size:
        g += theta @ psi_hat
        grad.extend(psi_hat - w @ psi)
    return g, np.array(grad)


def solve_dual(log_q, s, delta: float, psi=None, psi_hat=None) -> DualSolution:
    """Minimise the dual over ``kappa > 0`` (as ``log kappa``) and ``theta``.

    Without features (deterministic initial state) ``theta`` is empty and
    the search is one-dimensional.  ``kappa`` is bounded below by 1e-6.
    """
    log_q = np.asarray(log_q, dtype=float)
    s = np.asarray(s, dtype=float)
    use_theta = psi is not None and psi_hat is not None
    nth = psi.shape[1] if use_theta else 0
    psi_ = np.asarray(psi, dtype=float) if use_theta else None
    psi_hat_ = np.asarray(psi_hat, dtype=float) if use_theta else None
    bounds = [(np.log(KAPPA_FLOOR), np.log(KAPPA_CEIL))] + [(None, None)] * nth
    if nth == 0:
        return _solve_dual_scalar(log_q, s, delta)
    best = None
    for z0 in (0.0, np.log(10.0), np.log(0.1)):
        x0 = np.concatenate([[z0], np.zeros(nth)])
        res = minimize(_dual_and_grad, x0, args=(log_q, s, delta, psi_, psi_hat_), jac=True,
                       method="L-BFGS-B", bounds=bounds,
                       options={"gtol": 1e-12, "ftol": 1e-15, "maxiter": 1000})
        if best is None or res.fun < best.fun:
            best = res
    if not np.isfinite(best.fun):
        raise OptimizerDiverged("dual objective is not finite")
    z = best.x
    kappa = float(np.exp(z[0]))
    theta = z[1:]
    _, grad = _dual_and_grad(z, log_q, s, delta, psi_, psi_hat_)
    # projected gradient: at the kappa bounds only the inward component counts
    pg = grad.copy()
    if z[0] <= bounds[0][0] + 1e-12 and pg[0] > 0:
        pg[0] = 0.0
    if z[0] >= bounds[0][1] - 1e-12 and pg[0] < 0:
        pg[0] = 0.0
    gnorm = float(np.linalg.norm(pg / np.r_[kappa, np.ones(nth)]))
    a = _exponent(log_q, s, psi_, theta, kappa)
    eta = float((1 + kappa) * (logsumexp(a) - np.log(a.size)))
    w = softmax(a)
    kl = float(np.sum(w * np.log(np.maximum(w * w.size, 1e-300))))
    return DualSolution(kappa, theta, eta, float(best.fun), gnorm, kl)


def _kl_at(base, kappa):
    a = base / (1.0 + kappa)
    a = a - a.max()
    e = np.exp(a)
    tot = e.sum()
    w = e / tot
    return float(w @ a - np.log(tot) + np.log(a.size))


def _solve_dual_scalar(log_q, s, delta):
    # dg/dkappa = delta - KL(kappa) and KL falls monotonically in kappa, so the
    # minimiser is the root of KL = delta, clipped to the kappa bounds
    base = -(log_q + s)
    lo, hi = np.log(KAPPA_FLOOR), np.log(KAPPA_CEIL)
    if _kl_at(base, KAPPA_FLOOR) <= delta:
        z = lo
    elif _kl_at(base, KAPPA_CEIL) >= delta:
        z = hi
    else:
        z = brentq(lambda v: _kl_at(base, np.exp(v)) - delta, lo, hi, xtol=1e-12, rtol=1e-14)
    g, grad = _dual_and_grad(np.array([z]), log_q, s, delta, None, None)
    kappa = float(np.exp(z))
    pg = grad[0]
    if (z <= lo and pg > 0) or (z >= hi and pg < 0):
        pg = 0.0
    a = _exponent(log_q, s, None, None, kappa)
    eta = float((1 + kappa) * (logsumexp(a) - np.log(a.size)))
    if not np.isfinite(g):
        raise OptimizerDiverged("dual objective is not finite")
    return DualSolution(kappa, np.zeros(0), eta, float(g), abs(float(pg)) / kappa,
                        _kl_at(base, kappa))


def learning_weights(log_q, s, dual: DualSolution, psi=None) -> np.ndarray:
    """Normalised weights ``d_y ~ q_y^{-1/(1+kappa)} exp(-(S_y + psi_y theta)/(1+kappa))``."""
    return softmax(_exponent(log_q, s, psi, dual.theta, dual.kappa))


def empirical_kl(w) -> float:
    """``sum_y w_y log(Y w_y)``: KL of the reweighted samples from the sampling law."""
    w = np.asarray(w)
    pos = w > 0
    return float(np.sum(w[pos] * np.log(w[pos] * w.size)))


def target_controls(dyn: JointDynamics, batch: TrajectoryBatch, step: int, pinv=None) -> np.ndarray:
    """``(B_d^T B_d)^-1 B_d^T (dx_d - eps f_d) / eps`` at segment ``step``, shape ``(Y, NP)``."""
    x = batch.paths[:, step]
    act = dyn.actuated
    v = (batch.paths[:, step + 1][..., act] - x[..., act]) / batch.eps - dyn.drift(x, batch.t0 + step * batch.eps)[..., act]
    if pinv is None:
        pinv = np.linalg.pinv(dyn.b_d)
    return np.einsum("npd,ynd->ynp", pinv, v).reshape(batch.n_rollouts, -1)


def fit_policy_weighted_mle(x, u, w):
    """Weighted least-squares fit ``u ~ N(a x + b, cov)``.

    ``x``: ``(Y, n)`` states, ``u``: ``(Y, m)`` targets, ``w``: weights
    summing to one.  States are centred at their weighted mean.  A ridge of
    ``1e-8 * trace / n`` is added when the weighted design is rank deficient
    (so unexplored directions get zero gain); the residual covariance is
    floored at 1e-12.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    w = np.asarray(w, dtype=float)
    xm = w @ x
    um = w @ u
    xc = x - xm
    uc = u - um
    sxx = (xc * w[:, None]).T @ xc
    sux = (uc * w[:, None]).T @ xc
    n = x.shape[1]
    tr = float(np.trace(sxx))
    ev = np.linalg.eigvalsh(sxx) if n else np.zeros(0)
    if tr <= 0:
        a = np.zeros((u.shape[1], n))
    else:
        if ev.min() <= 1e-10 * ev.max():
            sxx = sxx + 1e-8 * tr / n * np.eye(n)
        try:
            a = np.linalg.solve(sxx.T, sux.T).T
        except np.linalg.LinAlgError as exc:
            raise DegenerateDesign("weighted design is singular even with ridge") from exc
    if not np.all(np.isfinite(a)):
        raise DegenerateDesign("non-finite regression gain")
    b = um - a @ xm
    r = u - x @ a.T - b
    cov = floor_cov((r * w[:, None]).T @ r)
    return a, b, cov


def weighted_log_likelihood(x, u, w, a, b, cov) -> float:
    r = np.asarray(u) - np.asarray(x) @ a.T - b
    c = np.linalg.cholesky(cov)
    z = np.linalg.solve(c, r.T)
    return float(np.sum(w * (-0.5 * np.sum(z ** 2, axis=0))) - np.sum(np.log(np.diag(c))))


def marginal_policy(mean, cov, idx) -> tuple[np.ndarray, np.ndarray]:
    """Marginal of ``N(mean, cov)`` on the components ``idx`` (block selection)."""
    idx = np.asarray(idx)
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    return mean[..., idx], cov[np.ix_(idx, idx)]


@dataclass
class RepsConfig:
    delta: float = 25.0
    y_init: int = 400
    y_iter: int = 150
    max_iters: int = 20
    tol: float = 1e-3
    init_scale: float = 1.0
    execute: str = "mean"


@dataclass
class RepsResult:
    policy: GaussianPolicy
    iterations: int
    rollouts: int
    history: list = field(default_factory=list)
    # weighted mean control per segment from the last iteration, (K, NP)
    mean_controls: np.ndarray | None = None


def reps_optimize(dyn: JointDynamics, cost: CostSpec, x0, t0: float, eps: float, k: int,
                  cfg: RepsConfig, seed=None, sample_sigma=None, value_sigma=None,
                  policy: GaussianPolicy | None = None) -> RepsResult:
    """Policy iteration (sample, dual, weights, MLE) from a deterministic start."""
    rng = np.random.default_rng(seed) if not isinstance(seed, np.random.Generator) else seed
    n_ctrl = dyn.n_members * dyn.p
    n_state = dyn.n_members * dyn.state_dim
    pol = policy or GaussianPolicy.initial(k, n_ctrl, n_state, cfg.init_scale)
    history = []
    used = 0
    it = 0
    pinv = np.linalg.pinv(dyn.b_d)
    for it in range(1, cfg.max_iters + 1):
        y = cfg.y_init if it == 1 else cfg.y_iter
        batch = sample_with_policy(dyn, pol, x0, t0, eps, y, rng, sample_sigma)
        used += y
        s = generalized_path_value(dyn, cost, batch, value_sigma)
        log_q = old_path_density(dyn, pol, batch)
        dual = solve_dual(log_q, s, cfg.delta)
        w = learning_weights(log_q, s, dual)
        new = GaussianPolicy(np.empty_like(pol.a), np.empty_like(pol.b), np.empty_like(pol.cov))
        u_bar = np.empty_like(pol.b)
        for step in range(k):
            xs = batch.paths[:, step].reshape(y, -1)
            us = target_controls(dyn, batch, step, pinv)
            u_bar[step] = w @ us
            new.a[step], new.b[step], new.cov[step] = fit_policy_weighted_mle(xs, us, w)
        change = new.relative_change(pol)
        history.append({"iteration": it, "kappa": dual.kappa, "g": dual.g, "kl": empirical_kl(w),
                        "ess": float(1.0 / np.sum(w ** 2)), "change": change,
                        "s_mean": float(s.mean()), "rollouts": used,
                        "u0": new.mean(0, np.asarray(x0, dtype=float).reshape(1, -1))[0]})
        pol = new
        if change < cfg.tol:
            break
    return RepsResult(pol, it, used, history, u_bar)


def reps_controller(problem: TeamProblem, cfg: RepsConfig):
    def ctrl(i, xbar, t, k, eps, rng):
        dyn = problem.dynamics[i]
        samp = problem.sample_sigma if problem.extra.get("reps_sample_noise") == "sampling" else None
        vs = problem.sample_sigma if problem.path_value_noise == "sampling" else None
        res = reps_optimize(dyn, problem.costs[i], xbar, t, eps, k, cfg, rng, samp, vs)
        flat = np.asarray(xbar).reshape(-1)
        mean = res.policy.mean(0, flat[None])[0]
        if cfg.execute == "sample":
            mean = mean + res.policy.chol(0) @ rng.standard_normal(mean.size)
        last = res.history[-1]
        return mean, {"iterations": res.iterations, "kappa": last["kappa"], "kl": last["kl"],
                      "ess": last["ess"]}, res.rollouts

    return ctrl


def reps_run(problem: TeamProblem, cfg: RepsConfig | None = None, seed: int = 0):
    """Closed-loop run of the REPS-based distributed controller."""
    if cfg is None:
        cfg = RepsConfig(**problem.extra.get("reps", {}))
    return run_cycles(problem, reps_controller(problem, cfg), seed)


def first_cycle_learning_curve(problem: TeamProblem, agent: int, cfg: RepsConfig | None = None,
                               seed: int = 0) -> dict:
    """Immediate cost of agent ``agent``'s first-cycle control versus rollouts.

    REPS is run once and the control after every policy iteration is scored
    with ``c = q + 1/2 u^T R u`` at the initial joint state.  The sampling
    estimator is then given each of the same cumulative budgets.  Both use
    the cost of ``problem``, so the two curves are directly comparable.
    """
    if cfg is None:
        cfg = RepsConfig(**problem.extra.get("reps", {}))
        cfg = replace(cfg, max_iters=int(problem.extra.get("curve_iters", cfg.max_iters)))
    members = problem.graph.subsystem(agent).members
    xbar = gather(problem.x0, members)
    k, eps = horizon_schedule(0.0, problem.tf, problem.k, problem.dt, problem.eps_min)
    dyn, cost = problem.dynamics[agent], problem.costs[agent]
    q0 = float(cost.state_cost(xbar[None], 0.0)[0])

    def c(u):
        return q0 + 0.5 * float(u @ cost.r @ u)

    samp = problem.sample_sigma if problem.extra.get("reps_sample_noise") == "sampling" else None
    vs = problem.sample_sigma if problem.path_value_noise == "sampling" else None
    res = reps_optimize(dyn, cost, xbar, 0.0, eps, k, cfg, np.random.default_rng([seed, agent, 0, 2]),
                        samp, vs)
    budgets = [h["rollouts"] for h in res.history]
    reps_cost = [c(h["u0"]) for h in res.history]
    pi_cost = []
    for b in budgets:
        ctrl = path_integral_controller(problem, y=b)
        u, _, _ = ctrl(agent, xbar, 0.0, k, eps, np.random.default_rng([seed, agent, 0, 3]))
        pi_cost.append(c(u))
    return {"rollouts": budgets, "reps": reps_cost, "sampling": pi_cost,
            "converged": res.history[-1]["change"] < cfg.tol, "iterations": res.iterations}
