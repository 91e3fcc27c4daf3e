"""Sampling estimator on the scalar LQ problem against its Riccati solution.

``dx = u dt + dw``, no running cost, ``phi = x^2 / 2``, one time unit to go.
The exact law is ``u = -x / 2`` and ``Z(0) = 1 / sqrt(2)``.

    python demos/lq_path_integral.py
"""

import math

import numpy as np

from lsoc.pathintegral import (
    CostSpec,
    desirability_estimate,
    evaluate_batch,
    make_joint_dynamics,
    mc_joint_control,
    simulate_uncontrolled,
)


def main():
    dyn = make_joint_dynamics(lambda x, t: np.zeros_like(x), np.eye(1), 1.0, [0], 1, 1)
    cost = CostSpec(lambda x, t: np.zeros(x.shape[:-2]), lambda x: 0.5 * x[..., 0, 0] ** 2,
                    np.eye(1), 1.0, gradient_free=True)

    z, _ = desirability_estimate(cost, simulate_uncontrolled(dyn, [[0.0]], 0.0, 1.0, 10, 100_000, seed=0), dyn)
    print(f"Z(0) = {z:.5f}  (exact {1 / math.sqrt(2):.5f})")

    print("   Y      rms control error over x in [-2, 2]")
    for y in (1000, 4000, 16000, 64000):
        err = []
        for j, x in enumerate(np.linspace(-2, 2, 9)):
            b = evaluate_batch(dyn, cost, simulate_uncontrolled(dyn, [[x]], 0.0, 1.0, 10, y, seed=[1, j]))
            err.append(mc_joint_control(dyn, cost, b)[0] + x / 2)
        print(f"{y:6d}  {math.sqrt(np.mean(np.square(err))):.4f}")


if __name__ == "__main__":
    main()
