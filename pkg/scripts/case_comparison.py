"""Normalized PI of the three governor cases on the slalom maneuver.

Case I: exact governor every 100 ms.  Case II: exact governor at the 300 ms
period the schedulability test allows.  Case III: anytime governor every
100 ms on the shared processor.  PI is normalized by case I.

    python3 scripts/case_comparison.py --seeds 2000 --workers 1
"""

import argparse
import time

import numpy as np

from _common import scenario
from rotec.scheduler_sim import run_seeds


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=2000)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    t0 = time.time()
    pi1 = run_seeds(scenario("vehicle_case1"), range(1))[0].pi
    pi2 = run_seeds(scenario("vehicle_case2"), range(1))[0].pi
    tr = run_seeds(scenario("vehicle_case3"), range(args.seeds), workers=args.workers)
    n3 = np.array([t.pi for t in tr]) / pi1
    q1, med, q3 = np.percentile(n3, [25, 50, 75])
    print(f"case I   PI {pi1:.6g}  normalized 1")
    print(f"case II  PI {pi2:.6g}  normalized {pi2 / pi1:.4f}")
    print(f"case III mean normalized {n3.mean():.4f}  quartiles {q1:.4f} / {med:.4f} / {q3:.4f}  "
          f"over {len(tr)} seeds")
    print(f"violations {sum(t.violation_count for t in tr)}, "
          f"mean rejections {np.mean([t.rejections for t in tr]):.3f}, {time.time() - t0:.1f} s")


if __name__ == "__main__":
    main()
