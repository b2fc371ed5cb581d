"""Drift-recovery toys for the one-dimensional deterministic coupling.

``deterministic``: x(1) = y(1) = c with c = +-1. The optimal x-drift is
(c - z) / (1 - t); the script prints the learned-minus-analytic error on a
(t, z) grid, split into cells the training interpolant actually visits and
cells it essentially never reaches.

``mixture``: x(1) is drawn from {c - s, c + s} given y(1) = c, so the optimal
drift is a posterior-weighted average with no simple closed form. It is
estimated at each grid cell by Monte Carlo over start points and compared to
the learned drift in units of the Monte Carlo standard error.

    python3 scripts/drift_toy.py deterministic --steps 20000
    python3 scripts/drift_toy.py mixture --steps 20000 --spread 0.5
"""

import argparse
import time

import numpy as np

from cpfm.dcfm import DriftNet, TrainConfig, TrainState, train
from cpfm.plan_ops import PlanSampler


def fit(x_pts, y_pts, plan, steps, hidden, seed):
    net = DriftNet.create(1, 1, hidden, seed=seed)
    epochs = max(1, steps // 1000)
    cfg = TrainConfig(alpha=0.5, lr=1e-3, batch=256, epochs=epochs, steps_per_epoch=steps // epochs, seed=seed)
    return train(TrainState.create(net, cfg), PlanSampler(plan, seed), x_pts, y_pts).net


def deterministic(args):
    pts = np.array([[-1.0], [1.0]])
    net = fit(pts, pts.copy(), np.eye(2) / 2, args.steps, args.hidden, args.seed)
    ts, zs = np.linspace(0.1, 0.9, 9), np.linspace(-2, 2, 21)
    print("   t   MAE(all z)  MAE(|x0|<=3)")
    for t in ts:
        errs, keep = [], []
        for c in (-1.0, 1.0):
            got = net.forward(zs[:, None], np.full((zs.size, 1), c), t, 0)[:, 0]
            errs.append(np.abs(got - (c - zs) / (1 - t)))
            keep.append(np.abs((zs - t * c) / (1 - t)) <= 3)
        e, k = np.concatenate(errs), np.concatenate(keep)
        print(f"{t:4.1f}  {e.mean():10.4f}  {e[k].mean() if k.any() else float('nan'):12.4f}")


def mc_drift(z, c, t, spread, draws, rng):
    # E[x1 - x0 | x_t = z] with x1 in {c - s, c + s} equally likely and x0 ~ N(0, 1)
    x1 = np.array([c - spread, c + spread])
    x0 = (z - t * x1) / (1 - t)
    logw = -0.5 * x0**2
    w = np.exp(logw - logw.max())
    w /= w.sum()
    pick = rng.choice(2, size=draws, p=w)
    vals = (x1 - x0)[pick]
    return vals.mean(), vals.std(ddof=1) / np.sqrt(draws)


def mixture(args):
    s = args.spread
    x_pts = np.array([[-1 - s], [-1 + s], [1 - s], [1 + s]])
    # each code appears twice so the plan stays a square permutation
    y_pts = np.array([[-1.0], [-1.0], [1.0], [1.0]])
    plan = np.eye(4) / 4
    net = fit(x_pts, y_pts, plan, args.steps, args.hidden, args.seed)
    rng = np.random.default_rng(args.seed)
    within, total = 0, 0
    for t in np.linspace(0.1, 0.9, 9):
        for c in (-1.0, 1.0):
            for z in np.linspace(c - 1, c + 1, 9):
                mean, se = mc_drift(z, c, t, s, args.draws, rng)
                got = float(net.forward(np.array([z]), np.array([c]), t, 0)[0])
                within += abs(got - mean) <= 3 * max(se, 1e-12)
                total += 1
    print(f"{within}/{total} cells within 3 Monte Carlo standard errors")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("toy", choices=["deterministic", "mixture"])
    ap.add_argument("--steps", type=int, default=20_000)
    ap.add_argument("--hidden", default="64,64")
    ap.add_argument("--spread", type=float, default=0.5)
    ap.add_argument("--draws", type=int, default=4000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    args.hidden = tuple(int(h) for h in args.hidden.split(","))
    t0 = time.perf_counter()
    (deterministic if args.toy == "deterministic" else mixture)(args)
    print(f"{time.perf_counter() - t0:.0f} s")


if __name__ == "__main__":
    main()
