"""REPS on the scalar LQ problem: learning curve and KL per step.

    python demos/reps_lq.py
"""

import math

import numpy as np

from lsoc.pathintegral import CostSpec, make_joint_dynamics
from lsoc.reps import RepsConfig, reps_optimize


def main():
    dyn = make_joint_dynamics(lambda x, t: np.zeros_like(x), np.eye(1), 1.0, [0], 1, 1)
    cost = CostSpec(lambda x, t: np.zeros(x.shape[:-2]), lambda x: 0.5 * x[..., 0, 0] ** 2,
                    np.eye(1), 1.0, gradient_free=True)
    cfg = RepsConfig(delta=0.5, y_init=4000, y_iter=4000, max_iters=20)
    res = reps_optimize(dyn, cost, [[1.0]], 0.0, 0.1, 10, cfg, seed=0)
    print("iter  rollouts  kappa     KL     u0")
    for h in res.history:
        print(f"{h['iteration']:4d}  {h['rollouts']:8d}  {h['kappa']:7.3f}  {h['kl']:.3f}  {h['u0'][0]:+.3f}")
    print(f"first control {res.policy.mean(0, np.array([[1.0]]))[0, 0]:+.3f}  (exact -0.500)")
    print(f"optimal expected cost {0.5 * math.log(2) + 0.25:.4f}")


if __name__ == "__main__":
    main()
