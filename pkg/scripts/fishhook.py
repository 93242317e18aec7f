"""Fishhook maneuver under randomized budgets: worst |LTR| and the switch sample.

    python3 scripts/fishhook.py --seeds 2000
"""

import argparse
from collections import Counter

import numpy as np

from _common import scenario
from rotec.scheduler_sim import build_setup, run_seeds


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=2000)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    sc = scenario("vehicle_fishhook")
    ybar = build_setup(sc).aset.ybar
    tr = run_seeds(sc, range(args.seeds), workers=args.workers)
    peak = np.array([np.max(t.y / ybar) for t in tr])
    switch = Counter(t.metadata["switch_k"] for t in tr)
    print(f"{len(tr)} seeds: max |LTR| {peak.max():.6f}, median peak {np.median(peak):.6f}, "
          f"violations {sum(t.violation_count for t in tr)}")
    print("countersteer sample:", ", ".join(f"k={k}: {n}" for k, n in sorted(switch.items(), key=str)))


if __name__ == "__main__":
    main()
