"""Controllers for new terminal costs assembled from learned components.

Desirabilities are linear in the terminal condition.  If a new exit cost
satisfies ``exp(-phi / lam) = sum_f w_f exp(-phi_f / lam_f)`` on the boundary,
then ``Z = sum_f w_f Z_f`` everywhere, and the optimal controller of the new
task is a state-dependent blend of the component controllers.  This only
works for controllers that carry a desirability; fitted REPS policies do not
and are rejected.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import ConfigError, IncompatibleWeights, MisalignedStateSpaces
from .lsmdp import Desirability, JointModel, optimal_joint_control
from .pathintegral import (
    CostSpec,
    JointDynamics,
    evaluate_batch,
    mc_joint_control,
    desirability_estimate,
    simulate_uncontrolled,
)

COMPAT_TOL = 1e-6


def _reject_policies(items) -> None:
    from .reps import GaussianPolicy, RepsResult

    for it in items:
        if isinstance(it, (GaussianPolicy, RepsResult)):
            raise ConfigError(
                "composition needs component desirabilities; REPS policies do not provide one"
            )


def composite_exit_cost(phis, weights, lams=None, lam: float = 1.0) -> np.ndarray:
    """``phi = -lam log sum_f w_f exp(-phi_f / lam_f)`` evaluated pointwise."""
    phis = np.asarray(phis, dtype=float)
    w = np.asarray(weights, dtype=float)
    lams = np.ones(len(w)) if lams is None else np.asarray(lams, dtype=float)
    a = -phis / lams.reshape((-1,) + (1,) * (phis.ndim - 1))
    s, sign = logsumexp(a, axis=0, b=w.reshape(a.shape[:1] + (1,) * (a.ndim - 1)), return_sign=True)
    if np.any(sign <= 0):
        raise IncompatibleWeights("weighted sum of component exit terms is not positive")
    return -lam * s


# ------------------------------------------------------------------ discrete

@dataclass
class DiscreteComponents:
    """Learned joint models of one subsystem that differ only in exit cost."""

    models: list
    desirabilities: list
    weights: np.ndarray

    def __post_init__(self):
        _reject_policies(self.desirabilities)
        self.weights = np.asarray(self.weights, dtype=float).ravel()
        if not (len(self.models) == len(self.desirabilities) == self.weights.size) or not self.models:
            raise ConfigError("need one model, desirability and weight per component")
        ref = self.models[0]
        for m in self.models[1:]:
            if m.shape != ref.shape or not np.array_equal(m.boundary, ref.boundary):
                raise MisalignedStateSpaces("components have different state spaces or boundaries")
            if (m.passive != ref.passive).nnz or not np.array_equal(m.state_cost, ref.state_cost):
                raise MisalignedStateSpaces("components must share passive dynamics and state cost")

    @property
    def n_components(self) -> int:
        return len(self.models)

    def z_full(self) -> np.ndarray:
        """Component desirabilities stacked as ``(F, n_joint)``."""
        if getattr(self, "_z", None) is None:
            self._z = self._stack()
        return self._z

    def _stack(self) -> np.ndarray:
        return np.stack([z.full(m) if isinstance(z, Desirability) else np.asarray(z, dtype=float)
                         for m, z in zip(self.models, self.desirabilities)])


def check_discrete_compatibility(components: DiscreteComponents, phi_new) -> np.ndarray:
    """Per-boundary-state residual ``|phi_new + log sum_f w_f exp(-phi_f)|``.

    ``phi_new`` is given either on every joint state or on the boundary
    states only (in boundary order).
    """
    ref = components.models[0]
    b = ref.boundary_idx
    phi_new = np.asarray(phi_new, dtype=float).ravel()
    if phi_new.size == ref.n_joint:
        phi_new = phi_new[b]
    elif phi_new.size != b.size:
        raise MisalignedStateSpaces(
            f"new exit cost has {phi_new.size} entries; expected {b.size} or {ref.n_joint}"
        )
    phis = np.stack([np.asarray(m.exit_cost, dtype=float)[b] for m in components.models])
    return np.abs(phi_new - composite_exit_cost(phis, components.weights))


def composite_model(components: DiscreteComponents, phi_new=None) -> JointModel:
    """Joint model of the composite task, for direct solves and checks."""
    ref = components.models[0]
    if phi_new is None:
        phis = np.stack([m.exit_cost for m in components.models])
        phi_new = np.zeros(ref.n_joint)
        b = ref.boundary_idx
        phi_new[b] = composite_exit_cost(phis[:, b], components.weights)
    return replace(ref, exit_cost=np.asarray(phi_new, dtype=float))


def compose_discrete_desirability(components: DiscreteComponents) -> np.ndarray:
    """``Z = sum_f w_f Z_f`` on every joint state."""
    return components.weights @ components.z_full()


def blend_weights_discrete(components: DiscreteComponents, xbar) -> np.ndarray:
    """``W_f = w_f sum p Z_f / sum_e w_e sum p Z_e`` at ``xbar``."""
    ref = components.models[0]
    s = ref.joint_index(xbar)
    row = ref.passive.getrow(s)
    z = components.z_full()[:, row.indices]
    with np.errstate(divide="ignore"):
        lw = logsumexp(np.log(row.data)[None, :] + np.log(np.maximum(z, 0.0)), axis=1)
    lw = lw + np.log(np.abs(components.weights))
    sign = np.sign(components.weights)
    top = np.max(lw[np.isfinite(lw)], initial=0.0)
    raw = sign * np.exp(lw - top)
    tot = raw.sum()
    if not np.isfinite(tot) or tot <= 0:
        raise IncompatibleWeights("blend weights have a non-positive normaliser")
    return raw / tot


def compose_discrete_controller(components: DiscreteComponents, xbar, phi_new=None,
                                tol: float = COMPAT_TOL) -> np.ndarray:
    """Composite joint control ``u = sum_f W_f u_f`` at joint state ``xbar``.

    When ``phi_new`` is given, the weights must reproduce it on the boundary
    to within ``tol``; otherwise ``IncompatibleWeights`` is raised.
    """
    if phi_new is not None:
        res = check_discrete_compatibility(components, phi_new)
        if res.max(initial=0.0) > tol:
            raise IncompatibleWeights(f"exit costs not reproduced (residual {res.max():.3e} > {tol:g})")
    w = blend_weights_discrete(components, xbar)
    us = np.stack([optimal_joint_control(m, z, xbar)
                   for m, z in zip(components.models, components.desirabilities)])
    return w @ us


# ---------------------------------------------------------------- continuous

@dataclass
class LQComponent:
    """Analytic desirability of ``dx = u dt + sigma dw`` with exit cost
    ``phi(x) = 1/2 (x - c)^T A (x - c)`` and no running cost.

    ``x_T ~ N(x, S)`` with ``S = sigma sigma^T (tf - t)`` under the passive
    dynamics, so with ``M = A / lam`` the desirability is
    ``det(I + S M)^{-1/2} exp(-1/2 d^T M (I + S M)^{-1} d)``, ``d = x - c``.
    """

    a: np.ndarray
    c: np.ndarray
    sigma: np.ndarray
    tf: float
    lam: float = 1.0
    r: np.ndarray | None = None

    def __post_init__(self):
        self.c = np.atleast_1d(np.asarray(self.c, dtype=float))
        n = self.c.size
        self.a = np.atleast_2d(np.asarray(self.a, dtype=float))
        if self.a.shape == (1, 1) and n > 1:
            self.a = self.a[0, 0] * np.eye(n)
        s = np.asarray(self.sigma, dtype=float)
        self.sigma = s * np.eye(n) if s.ndim == 0 else (np.diag(s) if s.ndim == 1 else s)
        if self.r is None:
            self.r = self.lam * np.linalg.inv(self.sigma @ self.sigma.T)
        if self.lam <= 0:
            raise ConfigError("lam must be positive")

    def _gain(self, t):
        n = self.c.size
        s = self.sigma @ self.sigma.T * (self.tf - t)
        m = self.a / self.lam
        k = np.linalg.solve((np.eye(n) + s @ m).T, m.T).T  # M (I + S M)^-1
        return 0.5 * (k + k.T), np.linalg.det(np.eye(n) + s @ m)

    def log_z(self, x, t=0.0) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        k, det = self._gain(t)
        d = x - self.c
        return -0.5 * np.einsum("yi,ij,yj->y", d, k, d) - 0.5 * np.log(det)

    def z(self, x, t=0.0) -> np.ndarray:
        return np.exp(self.log_z(x, t))

    def exit_cost(self, x) -> np.ndarray:
        d = np.atleast_2d(np.asarray(x, dtype=float)) - self.c
        return 0.5 * np.einsum("yi,ij,yj->y", d, self.a, d)

    def control(self, x, t=0.0) -> np.ndarray:
        """``lam R^-1 grad log Z``, rows per state."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        k, _ = self._gain(t)
        grad = -(x - self.c) @ k
        return self.lam * np.linalg.solve(self.r, grad.T).T


@dataclass
class MonteCarloComponent:
    """Desirability and control estimated from passive rollouts.

    The same ``seed`` is reused at every query, so components built with a
    common seed share their rollouts.  Estimates carry Monte Carlo error,
    which passes into the blend weights.
    """

    dyn: JointDynamics
    cost: CostSpec
    tf: float
    k: int
    y: int
    seed: int = 0
    sample_sigma: np.ndarray | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    def _batch(self, x, t):
        key = (np.asarray(x, dtype=float).tobytes(), float(t))
        if key not in self._cache:
            b = simulate_uncontrolled(self.dyn, x, t, self.tf, self.k, self.y, self.seed, self.sample_sigma)
            evaluate_batch(self.dyn, self.cost, b)
            self._cache = {key: b}
        return self._cache[key]

    @property
    def lam(self) -> float:
        return self.cost.lam

    def z(self, x, t=0.0) -> np.ndarray:
        z, _ = desirability_estimate(self.cost, self._batch(x, t), self.dyn)
        return np.atleast_1d(z)

    def control(self, x, t=0.0) -> np.ndarray:
        return mc_joint_control(self.dyn, self.cost, self._batch(x, t))[None]


def compose_continuous_desirability(components: Sequence, weights, x, t=0.0):
    """``Z = sum_f w_f Z_f`` and blend weights ``W_f = w_f Z_f / Z`` at ``x``.

    Returns ``(Z, W)`` with ``W`` shaped ``(F, n_states)``.
    """
    _reject_policies(components)
    w = np.asarray(weights, dtype=float).ravel()
    if w.size != len(components) or w.size == 0:
        raise ConfigError("one weight per component is required")
    zs = np.stack([np.atleast_1d(c.z(x, t)) for c in components])
    parts = w[:, None] * zs
    z = parts.sum(axis=0)
    if np.any(z <= 0) or not np.all(np.isfinite(z)):
        raise IncompatibleWeights("composite desirability is not positive")
    return z, parts / z


def check_continuous_compatibility(components: Sequence, weights, phi_new, x_exit, lam: float = 1.0):
    """Max residual of ``phi_new = -lam log sum_f w_f exp(-phi_f / lam_f)`` at ``x_exit``."""
    _reject_policies(components)
    x_exit = np.atleast_2d(np.asarray(x_exit, dtype=float))
    phis = np.stack([c.exit_cost(x_exit) for c in components])
    lams = [c.lam for c in components]
    target = composite_exit_cost(phis, weights, lams, lam)
    new = np.asarray(phi_new(x_exit) if callable(phi_new) else phi_new, dtype=float)
    return float(np.max(np.abs(new - target)))


def compose_continuous_controller(components: Sequence, weights, x, t=0.0) -> np.ndarray:
    """``u = sum_f W_f(x, t) u_f(x, t)`` row-wise over the states in ``x``."""
    _, bw = compose_continuous_desirability(components, weights, x, t)
    us = np.stack([np.atleast_2d(c.control(x, t)) for c in components])
    return np.einsum("fy,fyp->yp", bw, us)
