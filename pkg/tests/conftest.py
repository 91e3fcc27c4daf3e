import numpy as np
import pytest

from lsoc.lsmdp import DiscreteModel, build_joint_model
from lsoc.network import Subsystem


def random_agent(rng, n_states, n_exit=1, density=0.6):
    """Random single-agent model whose last ``n_exit`` states are absorbing exits."""
    p = rng.random((n_states, n_states)) * (rng.random((n_states, n_states)) < density)
    n_int = n_states - n_exit
    # keep a path to some exit from every interior state
    p[:n_int, n_int + rng.integers(n_exit, size=n_int)] += 0.1
    p[np.arange(n_int), np.arange(n_int)] += 0.05
    p[n_int:] = 0.0
    p[np.arange(n_int, n_states), np.arange(n_int, n_states)] = 1.0
    p /= p.sum(axis=1, keepdims=True)
    boundary = np.zeros(n_states, dtype=bool)
    boundary[n_int:] = True
    phi = np.where(boundary, rng.uniform(0, 2, n_states), 0.0)
    return DiscreteModel(p, boundary, phi)


def random_joint(rng, sizes, q_scale=1.0):
    members = tuple(range(len(sizes)))
    sub = Subsystem(0, members)
    agents = [random_agent(rng, n) for n in sizes]
    q = rng.uniform(0, q_scale, int(np.prod(sizes)))
    return build_joint_model(sub, agents, q)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def scalar_lq(x_dim=1):
    """``dx = u dt + dw``, ``q = 0``, ``phi = x^2/2``, ``lam = R = 1``."""
    from lsoc.pathintegral import CostSpec, make_joint_dynamics

    dyn = make_joint_dynamics(lambda x, t: np.zeros_like(x), np.eye(1), 1.0, [0], 1, 1)
    cost = CostSpec(lambda x, t: np.zeros(x.shape[:-2]),
                    lambda x: 0.5 * x[..., 0, 0] ** 2, np.eye(1), 1.0, gradient_free=True)
    return dyn, cost


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
