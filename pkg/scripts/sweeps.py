"""Sensitivity of mean PI to the flow gain, the sampling period and the budget.

    python3 scripts/sweeps.py sigma  --grid 50,100,150 --seeds 200
    python3 scripts/sweeps.py period --grid 50,100,150,200,250,300
    python3 scripts/sweeps.py budget --grid 7.5,15,37.5,75,150,300,750,3000 --seeds 50

Period values are in ms, budget values in ms of fixed per-sample budget.
The budget sweep normalizes by the exact-governor PI.
"""

import argparse

import numpy as np

from _common import scenario
from rotec.cli import sweep_variant
from rotec.scheduler_sim import build_setup, run_seeds


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("param", choices=["sigma", "period", "budget"])
    ap.add_argument("--grid", required=True)
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    grid = [float(x) for x in args.grid.split(",")]
    base = scenario("vehicle_period" if args.param == "period" else "vehicle_case3")
    ref = run_seeds(scenario("vehicle_case1"), range(1))[0].pi
    print(f"{'value':>10} {'mean PI':>12} {'normalized':>10} {'rejections':>10} {'violations':>10}")
    for value in grid:
        if args.param == "budget":
            sc = base.with_(budget_override=value * 1e-3)
        else:
            sc = sweep_variant(base, args.param, value)
        tr = run_seeds(sc, range(args.seeds), workers=args.workers, setup=build_setup(sc) if args.workers == 1 else None)
        pi = np.mean([t.pi for t in tr])
        print(f"{value:10g} {pi:12.6g} {pi / ref:10.4f} {np.mean([t.rejections for t in tr]):10.3f} "
              f"{sum(t.violation_count for t in tr):10d}")


if __name__ == "__main__":
    main()
