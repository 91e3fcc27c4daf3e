import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from conftest import random_joint, scalar_lq
from lsoc.composition import (
    DiscreteComponents,
    LQComponent,
    MonteCarloComponent,
    check_continuous_compatibility,
    check_discrete_compatibility,
    compose_continuous_controller,
    compose_continuous_desirability,
    compose_discrete_controller,
    compose_discrete_desirability,
    composite_exit_cost,
    composite_model,
)
from lsoc.errors import ConfigError, IncompatibleWeights, MisalignedStateSpaces
from lsoc.lsmdp import build_linear_system, optimal_joint_control, solve_desirability_centralized
from lsoc.reps import GaussianPolicy


def solve(m):
    return solve_desirability_centralized(*build_linear_system(m), tol=1e-14)


def variants(rng, m, exits):
    out = []
    for phi in exits:
        full = np.zeros(m.n_joint)
        full[m.boundary_idx] = phi
        out.append(replace(m, exit_cost=full))
    return out


def components(rng, shape=(4, 3), f=2, weights=None):
    base = random_joint(rng, shape)
    nb = base.boundary_idx.size
    models = variants(rng, base, [rng.uniform(0, 3, nb) for _ in range(f)])
    w = rng.uniform(0.2, 2.0, f) if weights is None else weights
    return DiscreteComponents(models, [solve(m) for m in models], w)


# ------------------------------------------------------------- discrete


def test_single_component_identity(rng):
    comps = components(rng, f=1, weights=[1.0])
    m = comps.models[0]
    assert check_discrete_compatibility(comps, m.exit_cost).max() == 0.0
    for s in m.interior_idx:
        np.testing.assert_allclose(compose_discrete_controller(comps, s),
                                   optimal_joint_control(m, comps.desirabilities[0], s), atol=1e-15)


def test_symmetric_components(rng):
    base = random_joint(rng, (3, 3))
    c = np.full(base.boundary_idx.size, 0.8)
    models = variants(rng, base, [c, c])
    comps = DiscreteComponents(models, [solve(m) for m in models], [0.5, 0.5])
    assert check_discrete_compatibility(comps, c).max() <= 1e-15
    s = base.interior_idx[0]
    np.testing.assert_allclose(compose_discrete_controller(comps, s, c),
                               optimal_joint_control(models[0], comps.desirabilities[0], s), atol=1e-15)


def test_log_sum_exp_example(rng):
    base = random_joint(rng, (3,))
    nb = base.boundary_idx.size
    models = variants(rng, base, [np.zeros(nb), np.full(nb, math.log(2))])
    comps = DiscreteComponents(models, [solve(m) for m in models], [1.0, 1.0])
    assert check_discrete_compatibility(comps, np.full(nb, -math.log(1.5))).max() <= 1e-15


def test_incompatible_target_refused(rng):
    comps = components(rng)
    phi = composite_model(comps).exit_cost.copy()
    phi[comps.models[0].boundary_idx[0]] += 1e-3
    with pytest.raises(IncompatibleWeights):
        compose_discrete_controller(comps, comps.models[0].interior_idx[0], phi)


def test_non_positive_mixture_refused():
    with pytest.raises(IncompatibleWeights):
        composite_exit_cost(np.zeros((2, 3)), [1.0, -1.0])


def test_misaligned_components(rng):
    a = random_joint(rng, (3, 3))
    b = random_joint(rng, (3, 4))
    with pytest.raises(MisalignedStateSpaces):
        DiscreteComponents([a, b], [solve(a), solve(b)], [1, 1])
    c = replace(a, state_cost=a.state_cost + 1)
    with pytest.raises(MisalignedStateSpaces):
        DiscreteComponents([a, c], [solve(a), solve(c)], [1, 1])
    comps = DiscreteComponents([a], [solve(a)], [1.0])
    with pytest.raises(MisalignedStateSpaces):
        check_discrete_compatibility(comps, np.zeros(2))


def test_policies_rejected(rng):
    a = random_joint(rng, (3,))
    pol = GaussianPolicy.initial(2, 1, 1)
    with pytest.raises(ConfigError):
        DiscreteComponents([a], [pol], [1.0])
    with pytest.raises(ConfigError):
        compose_continuous_desirability([pol], [1.0], np.zeros((1, 1)))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(2, 3))
def test_composition_equals_direct_solve(seed, f):
    rng = np.random.default_rng(seed)
    comps = components(rng, shape=tuple(rng.integers(2, 5, size=2)), f=f)
    direct = composite_model(comps)
    z_direct = solve(direct)
    np.testing.assert_allclose(compose_discrete_desirability(comps), z_direct.full(direct), rtol=1e-9, atol=0)
    for s in direct.interior_idx:
        u = compose_discrete_controller(comps, s, direct.exit_cost)
        assert np.max(np.abs(u - optimal_joint_control(direct, z_direct, s))) <= 1e-8
        assert abs(u.sum() - 1) <= 1e-12


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(1e-3, 1e3))
def test_weight_scaling_invariance(seed, c):
    rng = np.random.default_rng(seed)
    comps = components(rng)
    scaled = DiscreteComponents(comps.models, comps.desirabilities, c * comps.weights)
    for s in comps.models[0].interior_idx:
        np.testing.assert_allclose(compose_discrete_controller(scaled, s),
                                   compose_discrete_controller(comps, s), atol=1e-12)


# ----------------------------------------------------------- continuous


def composed_oracle(a, c, w, x, tau):
    """``Z`` and ``u = d/dx log Z`` of the mixture terminal cost by quadrature."""
    def mix(y):
        return sum(wf * math.exp(-0.5 * af * (y - cf) ** 2) for wf, af, cf in zip(w, a, c))

    sd = math.sqrt(tau)
    lo, hi = x - 12 * sd, x + 12 * sd
    dens = lambda y: math.exp(-0.5 * (y - x) ** 2 / tau) / math.sqrt(2 * math.pi * tau)  # noqa: E731
    z = integrate.quad(lambda y: dens(y) * mix(y), lo, hi, epsabs=1e-14, epsrel=1e-12)[0]
    dz = integrate.quad(lambda y: dens(y) * (y - x) / tau * mix(y), lo, hi, epsabs=1e-14, epsrel=1e-12)[0]
    return z, dz / z


def test_lq_single_component():
    comp = LQComponent(2.0, 0.5, 1.0, 1.0)
    xs = np.linspace(-2, 2, 7)[:, None]
    z, w = compose_continuous_desirability([comp], [1.0], xs)
    np.testing.assert_allclose(z, comp.z(xs))
    np.testing.assert_allclose(w, 1.0)


def test_lq_identical_components():
    a = LQComponent(1.5, -0.3, 1.0, 2.0)
    b = LQComponent(1.5, -0.3, 1.0, 2.0)
    _, w = compose_continuous_desirability([a, b], [2.0, 6.0], np.linspace(-3, 3, 11)[:, None])
    np.testing.assert_allclose(w[0], 0.25)
    np.testing.assert_allclose(w[1], 0.75)


def test_lq_component_matches_quadrature():
    comp = LQComponent(1.0, 0.0, 1.0, 1.0)
    assert comp.z(np.zeros((1, 1)))[0] == pytest.approx(1 / math.sqrt(2), abs=1e-15)
    xs = np.linspace(-2, 2, 9)
    np.testing.assert_allclose(comp.control(xs[:, None])[:, 0], -xs / 2, atol=1e-15)


def test_lq_mixture_matches_direct_solve():
    a, c, w = [1.0, 3.0], [-1.0, 1.5], [0.7, 0.3]
    tau = 1.0
    comps = [LQComponent(af, cf, 1.0, tau) for af, cf in zip(a, c)]
    xs = np.linspace(-3, 3, 20)
    z, bw = compose_continuous_desirability(comps, w, xs[:, None])
    u = compose_continuous_controller(comps, w, xs[:, None])[:, 0]
    np.testing.assert_allclose(bw.sum(axis=0), 1.0, atol=1e-14)
    for k, x in enumerate(xs):
        z_ref, u_ref = composed_oracle(a, c, w, x, tau)
        assert abs(z[k] - z_ref) <= 1e-6
        assert abs(u[k] - u_ref) <= 1e-6
    phi = lambda y: -np.log(sum(wf * np.exp(-0.5 * af * (y[:, 0] - cf) ** 2)  # noqa: E731
                                for wf, af, cf in zip(w, a, c)))
    assert check_continuous_compatibility(comps, w, phi, xs[:, None]) <= 1e-12


@settings(max_examples=30, deadline=None)
@given(st.floats(-3, 3), st.floats(0.0, 0.9), st.floats(1e-2, 1e2))
def test_lq_blend_properties(x, t, scale):
    comps = [LQComponent(1.0, -1.0, 0.8, 1.0), LQComponent(2.0, 1.0, 0.8, 1.0)]
    w = np.array([0.4, 1.1])
    _, bw = compose_continuous_desirability(comps, w, np.array([[x]]), t)
    assert abs(bw.sum() - 1) <= 1e-12
    u1 = compose_continuous_controller(comps, w, np.array([[x]]), t)
    u2 = compose_continuous_controller(comps, scale * w, np.array([[x]]), t)
    np.testing.assert_allclose(u1, u2, atol=1e-12)


def test_monte_carlo_components_track_analytic():
    dyn, _ = scalar_lq()
    from lsoc.pathintegral import CostSpec

    def quad(c):
        return CostSpec(lambda x, t: np.zeros(x.shape[:-2]), lambda x: 0.5 * (x[..., 0, 0] - c) ** 2,
                        np.eye(1), 1.0, gradient_free=True)

    mcs = [MonteCarloComponent(dyn, quad(c), 1.0, 5, 100_000, seed=3) for c in (-1.0, 1.0)]
    exact = [LQComponent(1.0, c, 1.0, 1.0) for c in (-1.0, 1.0)]
    x = np.array([[0.4]])
    z_mc, w_mc = compose_continuous_desirability(mcs, [0.5, 0.5], x[0])
    z_ex, w_ex = compose_continuous_desirability(exact, [0.5, 0.5], x)
    assert z_mc[0] == pytest.approx(z_ex[0], rel=0.02)
    np.testing.assert_allclose(w_mc, w_ex, atol=0.02)
    assert compose_continuous_controller(mcs, [0.5, 0.5], x[0])[0, 0] == pytest.approx(
        compose_continuous_controller(exact, [0.5, 0.5], x)[0, 0], abs=0.05)
