import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_joint
from lsoc.consensus import (
    Projector,
    build_projection,
    complexity_report,
    consensus_solve,
    partition_rows,
)
from lsoc.errors import InfeasibleInitialization, RankDeficientBlock, TooFewRows
from lsoc.lsmdp import build_linear_system, solve_desirability_direct


def random_system(rng, n):
    theta = rng.random((n, n))
    theta *= rng.uniform(0.3, 0.95) / np.max(np.abs(np.linalg.eigvals(theta)))
    omega = rng.random((n, 2))
    return theta, omega, rng.random(2)


@pytest.mark.parametrize("rows,parts,sizes", [(6, 3, [2, 2, 2]), (7, 3, [3, 2, 2]), (25, 2, [13, 12])])
def test_even_partition(rows, parts, sizes):
    part = partition_rows((np.eye(rows), np.ones(rows)), parts)
    assert part.sizes == sizes
    covered = np.concatenate([np.arange(rows)[s] for s in part.slices])
    np.testing.assert_array_equal(covered, np.arange(rows))


def test_custom_partition():
    part = partition_rows((np.eye(5), np.ones(5)), 2, policy="custom", sizes=[1, 4])
    assert part.sizes == [1, 4]
    with pytest.raises(TooFewRows):
        partition_rows((np.eye(5), np.ones(5)), 2, policy="custom", sizes=[2, 2])


def test_too_few_rows():
    with pytest.raises(TooFewRows):
        partition_rows((np.eye(2), np.ones(2)), 3)


def test_projection_examples():
    np.testing.assert_allclose(build_projection([[1.0, 0.0]]), np.diag([0.0, 1.0]), atol=1e-15)
    s = 1 / math.sqrt(2)
    np.testing.assert_allclose(build_projection([[s, s]]), [[0.5, -0.5], [-0.5, 0.5]], atol=1e-15)
    np.testing.assert_allclose(build_projection([[2.0, 1.0], [0.5, 3.0]]), np.zeros((2, 2)), atol=1e-14)


def test_rank_deficient_block():
    with pytest.raises(RankDeficientBlock):
        build_projection([[1.0, 2.0], [2.0, 4.0]])


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(0, 4), st.integers(0, 2**31 - 1))
def test_projector_properties(m, extra, seed):
    a = np.random.default_rng(seed).normal(size=(m, m + extra))
    p = build_projection(a)
    np.testing.assert_allclose(p, p.T, atol=1e-10)
    np.testing.assert_allclose(p @ p, p, atol=1e-10)
    assert np.max(np.abs(a @ p)) <= 1e-10


def test_implicit_projector_matches_dense(rng):
    import scipy.sparse as sp

    m = random_joint(rng, (13, 13, 13), q_scale=2.0)
    theta, omega, z_b = build_linear_system(m)
    part = partition_rows((theta, omega, z_b), 3)
    proj = part.projectors[1]
    assert proj.matrix is None
    v = rng.normal(size=theta.shape[0])
    out = proj.apply(v)
    a = part.block(1)[0]
    assert np.max(np.abs(a @ out)) <= 1e-10
    # v - P v lies in the row space, so P is orthogonal
    assert abs(out @ (v - out)) <= 1e-8 * (v @ v)
    assert sp.issparse(a)


def test_single_agent_consensus():
    a = np.array([[2.0, 1.0], [1.0, 3.0]])
    b = np.array([1.0, 2.0])
    res = consensus_solve(partition_rows((a, b), 1))
    np.testing.assert_allclose(res.z, np.linalg.solve(a, b), atol=1e-12)
    assert res.n_iter <= 1


def test_identity_consensus():
    res = consensus_solve(partition_rows((np.eye(2), np.array([1.0, 2.0])), 2))
    np.testing.assert_allclose(res.z, [1.0, 2.0], atol=1e-10)


def test_infeasible_initialisation():
    part = partition_rows((np.eye(2), np.array([1.0, 2.0])), 2)
    with pytest.raises(InfeasibleInitialization):
        consensus_solve(part, z_init=[np.zeros(2), np.array([0.0, 2.0])])


def test_feasible_initialisation_accepted():
    part = partition_rows((np.eye(2), np.array([1.0, 2.0])), 2)
    res = consensus_solve(part, z_init=[np.array([1.0, 5.0]), np.array([-3.0, 2.0])])
    np.testing.assert_allclose(res.z, [1.0, 2.0], atol=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 30), st.integers(1, 4), st.integers(0, 2**31 - 1))
def test_consensus_invariants(n, agents, seed):
    rng = np.random.default_rng(seed)
    agents = min(agents, n)
    system = random_system(rng, n)
    part = partition_rows(system, agents)
    res = consensus_solve(part, tol=1e-12)
    direct = solve_desirability_direct(*system)
    assert np.max(np.abs(res.z - direct)) <= 1e-7
    feas = [h["feasibility"] for h in res.history]
    assert max(feas) <= 1e-9
    spread = [h["spread"] for h in res.history]
    assert all(b <= a * (1 + 1e-12) + 1e-24 for a, b in zip(spread, spread[1:]))
    dis = [h["disagreement"] for h in res.history]
    assert dis[-1] <= dis[0] + 1e-12


def test_complexity_examples():
    assert complexity_report("line", 3, 24, "centralized")[1] == 13824
    assert complexity_report("line", 3, 24, "parallel")[1] == 4608
    assert complexity_report("line", 1, 24, "centralized") == [24]
    assert complexity_report("line", 1, 24, "parallel") == [24]
    assert complexity_report("fully-connected", 4, 24, "centralized") == [24 ** 4] * 4


def test_complexity_rejects_bad_input():
    with pytest.raises(ValueError):
        complexity_report("star", 3)
    with pytest.raises(ValueError):
        complexity_report("line", 0)
