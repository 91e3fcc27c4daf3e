"""Compose two learned LQ controllers into one for a new exit cost.

Component tasks end at ``c = -1`` and ``c = +1``.  With weights ``w`` the
composite task's exit cost is ``-log(w_1 e^{-phi_1} + w_2 e^{-phi_2})``,
whose optimal controller is a state-dependent blend of the two.

    python demos/composition.py
"""

import numpy as np

from lsoc.composition import LQComponent, compose_continuous_controller, compose_continuous_desirability


def main():
    comps = [LQComponent(1.0, -1.0, 1.0, 1.0), LQComponent(1.0, 1.0, 1.0, 1.0)]
    for w in ([0.5, 0.5], [0.9, 0.1]):
        xs = np.linspace(-2, 2, 5)[:, None]
        _, bw = compose_continuous_desirability(comps, w, xs)
        u = compose_continuous_controller(comps, w, xs)[:, 0]
        print(f"weights {w}")
        for x, b, uu in zip(xs[:, 0], bw.T, u):
            print(f"  x={x:+.1f}  blend {b[0]:.3f}/{b[1]:.3f}  u={uu:+.3f}")


if __name__ == "__main__":
    main()
