"""Effect of the pair cost on the distance between UAV1 and UAV2.

Runs the sampling controller on the open three-UAV scenario with the
published pair weight and with the pair term switched off, and prints the
time-averaged UAV1-UAV2 distance for a few seeds.  Takes about half a minute.

    python demos/uav_cooperation.py
"""

from dataclasses import replace

from lsoc.pathintegral import receding_horizon_run
from lsoc.scenarios import build_team_problem, get_scenario


def problem_with_weight(weight):
    sc = get_scenario("tri-open")
    ws = sc.costs["pathintegral"]
    costs = {**sc.costs, "pathintegral": {**ws, "w_pair": {k: weight for k in ws["w_pair"]}}}
    return build_team_problem(replace(sc, costs=costs))


def main():
    on, off = problem_with_weight(1.5), problem_with_weight(0.0)
    print("seed  w=1.5   w=0")
    for seed in range(5):
        d_on = receding_horizon_run(on, seed).pair_distance(0, 1).mean()
        d_off = receding_horizon_run(off, seed).pair_distance(0, 1).mean()
        print(f"{seed:4d}  {d_on:5.2f}  {d_off:5.2f}")


if __name__ == "__main__":
    main()
