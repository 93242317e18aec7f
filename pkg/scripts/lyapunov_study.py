"""Flow convergence on random fixed (z, r) instances of a small box-constrained plant.

For each instance: the largest relative increase of V = |w - w*|^2 / 2, the
empirical modulus mu (smallest <F(w), w - w*> / |w - w*|^2 along the path),
the fitted slope of log V against flow time and the final command error.

    python3 scripts/lyapunov_study.py --instances 20
"""

import argparse

import numpy as np

from rotec import admissible_set as adm
from rotec import governor as gv
from rotec import plant as pl
from rotec.rotec_flow import FlowParams, flow_trajectory


def small_system():
    """Stable 2-state plant, |x1| <= 1 and |x2| <= 1.5."""
    dp = pl.DiscretePlant([[0.8, 0.2], [0.0, 0.5]], [[0.0], [1.0]], 0.1)
    K, G = pl.design_tracking_gains(dp, [[1.0, 0.0]], [[0.0]], {"open_loop": True})
    C = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    sys = pl.augment(dp, K, G, C, np.zeros((4, 1)))
    return sys, adm.build_admissible_set(sys, [1.0, 1.0, 1.5, 1.5], 0.05)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--instances", type=int, default=20)
    ap.add_argument("--beta", type=float, default=5.0)
    ap.add_argument("--vartheta", type=float, default=0.5)
    ap.add_argument("--delta-eta", type=float, default=5e-5)
    ap.add_argument("--steps", type=int, default=400000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    sys_, aset = small_system()
    tset = adm.tighten(aset, args.beta, args.vartheta, sys_)
    prob = gv.GovernorProblem(sys_, tset)
    params = FlowParams(sigma=1.0, delta_eta=args.delta_eta)
    rng = np.random.default_rng(args.seed)
    print(f"{'#':>3} {'active':>6} {'max dV/V':>10} {'mu':>10} {'slope':>8} {'|v-v*|':>9}")
    for i in range(args.instances):
        while True:
            z, v0 = rng.uniform(-1, 1, sys_.nz), rng.uniform(-1, 1, 1)
            if adm.contains(tset, z, v0, args.vartheta):
                break
        r = rng.uniform(-3, 3, 1)
        vd, ld = gv.solve_tightened_oracle(prob, z, r, args.vartheta)
        lam0 = rng.uniform(1, 3, tset.n_rows)
        vs, ls, _ = flow_trajectory(prob, z, r, v0, lam0, params, args.steps)
        W = np.hstack([np.vstack([v0, vs]) - vd, np.vstack([lam0, ls]) - ld])
        V = 0.5 * np.sum(W * W, axis=1)
        live = V > 1e-18
        inc = np.max((np.diff(V) / V[:-1])[live[:-1]])
        F = -np.diff(W, axis=0) / args.delta_eta
        nn = np.sum(W[:-1] ** 2, axis=1)
        mu = np.min((np.sum(F * W[:-1], axis=1) / nn)[live[:-1]])
        eta = np.arange(V.size) * args.delta_eta
        slope = np.polyfit(eta[live], np.log(V[live]), 1)[0]
        print(f"{i:3d} {int(np.sum(ld > 0)):6d} {inc:10.2e} {mu:10.3e} {slope:8.3f} {abs(vs[-1, 0] - vd[0]):9.1e}")


if __name__ == "__main__":
    main()
