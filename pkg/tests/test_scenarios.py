import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lsoc.errors import ConfigError
from lsoc.scenarios import (
    GridScenario,
    build_grid_scenario,
    build_team_problem,
    build_unicycle_cost,
    get_scenario,
    grid_passive_table,
    list_builtin_scenarios,
    unicycle_control_matrix,
    unicycle_drift,
)


def grid_q(sc, agent, cells):
    _, _, joints = build_grid_scenario(sc)
    m = joints[agent]
    idx = [sc.cell_index(cells[j]) for j in m.subsystem.members]
    return m.state_cost[m.joint_index(idx)]


def test_grid_colocated_cost():
    sc = GridScenario()
    assert grid_q(sc, 0, [(3, 3), (3, 3), (1, 1)]) == pytest.approx(4.84, abs=1e-12)


def test_grid_distance_cost():
    sc = GridScenario()
    assert grid_q(sc, 0, [(1, 5), (1, 1), (3, 3)]) == pytest.approx(18.84, abs=1e-12)
    assert grid_q(sc, 1, [(1, 5), (1, 1), (3, 3)]) == pytest.approx(18.84, abs=1e-12)


def test_grid_decoupled_cost():
    sc = GridScenario(distance_weights={(0, 1): 0.0, (1, 0): 0.0})
    assert grid_q(sc, 0, [(1, 5), (1, 1), (3, 3)]) == pytest.approx(4.84, abs=1e-12)
    assert grid_q(sc, 0, [(1, 5), (2, 2), (3, 3)]) == pytest.approx(2.2 * 30, abs=1e-12)
    # the third agent only pays its own cell cost
    assert grid_q(sc, 2, [(1, 5), (1, 1), (2, 2)]) == pytest.approx(30.0, abs=1e-12)


def test_grid_passive_profiles():
    for profile in ("default", "altered"):
        p = grid_passive_table(5, profile)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
    p = grid_passive_table(5, "default")
    assert p[12, 12] == pytest.approx(0.2)
    assert p[2, 2] == pytest.approx(0.4)
    assert p[0, 0] == pytest.approx(0.6)
    q = grid_passive_table(5, "altered")
    assert q[0, 0] == pytest.approx(0.1) and q[0, 1] == pytest.approx(0.45)


def test_grid_validation_messages():
    sc = GridScenario(starts=((2, 2), (1, 1), (1, 5)))
    assert any("agents[0].initial" in m and "obstacle" in m for m in sc.validate())
    bad = grid_passive_table(5).copy()
    bad[7, 7] += 0.1
    assert any("row 7" in m for m in GridScenario(passive=bad).validate())
    with pytest.raises(ConfigError):
        build_grid_scenario(GridScenario(exits=((9, 9), (5, 5), (5, 1))))


def test_unicycle_drift_examples():
    np.testing.assert_array_equal(unicycle_drift([3.0, 4.0, 0.0, 1.0]), np.zeros(4))
    np.testing.assert_array_equal(unicycle_drift([0.0, 0.0, 1.0, 0.0]), [1, 0, 0, 0])
    np.testing.assert_allclose(unicycle_drift([0.0, 0.0, 0.5, math.pi / 2]), [0, 0.5, 0, 0], atol=1e-12)
    b = unicycle_control_matrix()
    np.testing.assert_array_equal(b[2:], np.eye(2))
    np.testing.assert_array_equal(b[:2], np.zeros((2, 2)))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=4, max_size=4))
def test_drift_preserves_speed_and_heading(x):
    f = unicycle_drift(np.array(x))
    assert f[2] == 0.0 and f[3] == 0.0


def test_unicycle_cost_at_exit():
    sc = get_scenario("tri-open")
    members = (0, 1, 2)
    cost = build_unicycle_cost(sc, members)
    x = sc.x0.copy()
    x[0, :2] = sc.exits[0, :2]
    d01 = sc.initial_d_pair(0, 1)
    direction = (x[1, :2] - x[0, :2]) / np.linalg.norm(x[1, :2] - x[0, :2])
    x[1, :2] = x[0, :2] + d01 * direction
    w_self = sc.costs["pathintegral"]["w_self"][0]
    assert cost.state_cost(x[None], 0.0)[0] == pytest.approx(-w_self * sc.initial_d_max()[0], abs=1e-12)


def test_unicycle_zero_weights():
    sc = get_scenario("tri-open")
    sc.costs["zero"] = {"w_self": [0.0] * 3, "w_pair": {}}
    cost = build_unicycle_cost(sc, (1, 0, 2), "zero")
    rng = np.random.default_rng(0)
    assert np.all(cost.state_cost(rng.uniform(0, 50, (10, 3, 4)), 0.0) == 0.0)


def test_unicycle_pair_symmetry():
    sc = get_scenario("tri-open")
    sc.costs["pair"] = {"w_self": [0.0] * 3, "w_pair": {(0, 1): 1.5, (1, 0): 1.5}}
    c0 = build_unicycle_cost(sc, (0, 1, 2), "pair")
    c1 = build_unicycle_cost(sc, (1, 0, 2), "pair")
    x = np.random.default_rng(1).uniform(0, 50, (20, 3, 4))
    np.testing.assert_allclose(c0.state_cost(x, 0.0), c1.state_cost(x[:, [1, 0, 2]], 0.0), atol=1e-12)


def test_line_nine_neighbour_weights():
    sc = get_scenario("line-9")
    problem = build_team_problem(sc)
    assert problem.graph.subsystem(4).members == (4, 3, 5)
    w = sc.costs["pathintegral"]["w_pair"]
    assert w[(4, 3)] == 0.5 and w[(4, 5)] == 0.5
    x = sc.x0[[4, 3, 5]].copy()
    cost = problem.costs[4]
    base = cost.state_cost(x[None], 0.0)[0]
    moved = x.copy()
    moved[1, 1] += 2.0
    assert cost.state_cost(moved[None], 0.0)[0] == pytest.approx(base + 0.5 * 2.0, abs=1e-12)


def test_obstacle_penalty():
    sc = get_scenario("tri-cluttered")
    cost = build_unicycle_cost(sc, (0, 1, 2))
    x = sc.x0.copy()
    base = cost.state_cost(x[None], 0.0)[0]
    rect = sc.obstacles[0]
    inside = x.copy()
    inside[0, :2] = [(rect[0] + rect[1]) / 2, (rect[2] + rect[3]) / 2]
    no_obst = build_unicycle_cost(type(sc)(**{**sc.__dict__, "obstacles": ()}), (0, 1, 2))
    diff = cost.state_cost(inside[None], 0.0)[0] - no_obst.state_cost(inside[None], 0.0)[0]
    assert diff == pytest.approx(sc.obstacle_cost)
    assert base == pytest.approx(no_obst.state_cost(x[None], 0.0)[0])


def test_registry():
    assert list_builtin_scenarios() == ["grid-altered-wind", "grid-default", "line-9", "tri-cluttered", "tri-open"]
    t = get_scenario("tri-open")
    assert (t.tf, t.dt, t.k, t.y) == (25.0, 0.2, 7, 400)
    c = get_scenario("tri-cluttered")
    assert (c.tf, c.k) == (30.0, 18)
    with pytest.raises(ConfigError, match="tri-open"):
        get_scenario("nope")


def test_unicycle_validation():
    sc = get_scenario("tri-open")
    sc.tf = -1.0
    assert any(m.startswith("solver.tf") for m in sc.validate())
    with pytest.raises(ConfigError):
        build_team_problem(sc)
    sc = get_scenario("tri-open")
    sc.d_max = np.array([1.0, -1.0, 1.0])
    assert any(m.startswith("costs.d_max") for m in sc.validate())
    for name in list_builtin_scenarios():
        assert get_scenario(name).validate() == []
