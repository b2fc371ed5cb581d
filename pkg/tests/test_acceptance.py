"""End-to-end acceptance checks, one test per criterion.

Each test records a ``PASS``/``FAIL`` line in ``RESULTS``; conftest prints
them after the run. The thresholds here are the contract, so a failing
criterion fails its test rather than being loosened.
"""

import itertools
import math
import time

import numpy as np
import pytest

from cpfm.config import RunConfig
from cpfm.dcfm import DriftNet, TrainConfig, TrainState, train
from cpfm.gwot import EmbeddingSet, sign_flipped_solve, solve, solve_adaptive
from cpfm.io import SyntheticSpec, make_synthetic
from cpfm.kernels import Dataset, pairwise_sqdist
from cpfm.lowrank import factorize, pivoted_cholesky
from cpfm.oracle import (entropic_ot_bruteforce, gw_expand_check, gw_objective,
                         identity_check_factor2, random_feasible_plan)
from cpfm.pipeline import couple, embed, evaluate_embeddings, fit_drift, reconstruct
from cpfm.plan_ops import PlanSampler, interpolate_row
from cpfm.sinkhorn import sinkhorn

from test_dcfm import fd_max_rel_error, random_batch

RESULTS = []


def record(number, name, ok, detail):
    RESULTS.append(f"{'PASS' if ok else 'FAIL'} criterion {number:2d} {name}: {detail}")
    assert ok, detail


def label_gram(labels):
    labels = np.asarray(labels)
    return (labels[:, None] == labels[None, :]).astype(float)


def random_gram(rng, n):
    kind = rng.integers(3)
    if kind == 0:
        x = rng.standard_normal((n, 3))
        return np.exp(-pairwise_sqdist(x) / 2.0)
    if kind == 1:
        return label_gram(rng.integers(0, 3, n))
    a = rng.standard_normal((n, int(rng.integers(1, n + 1))))
    return a @ a.T / n


def test_c01_factor2_equivalence():
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst = 0.0
    for trial in range(50):
        n, d = int(rng.integers(2, 9)), int(rng.integers(1, 4))
        a = rng.standard_normal((n, n))
        worst = max(worst, identity_check_factor2(a @ a.T, rng.standard_normal((n, d)), trials=1, seed=trial))
    secs = time.perf_counter() - t0
    record(1, "factor-2 identity", worst <= 1e-9 and secs < 10,
           f"max rel err {worst:.2e} over 50 plans (<= 1e-9), {secs:.1f} s (< 10 s)")


def test_c02_monotone_objective():
    rng = np.random.default_rng(2)
    t0 = time.perf_counter()
    worst, steps = -np.inf, 0
    for _ in range(100):
        n, d = int(rng.integers(2, 33)), int(rng.integers(1, 4))
        factor = factorize(random_gram(rng, n), float(rng.choice([0.8, 0.95, 1.0])))
        eps = float(rng.choice([0.1, 0.03, 0.01]))
        res = solve(factor, rng.standard_normal((n, d)), eps, tau=1e-10, max_outer=100)
        rises = np.diff(res.objective_trace)
        steps += rises.size
        if rises.size:
            worst = max(worst, float(rises.max()))
    secs = time.perf_counter() - t0
    record(2, "monotone objective", worst <= 1e-7 and secs < 60,
           f"largest increase {worst:.2e} over {steps} steps (<= 1e-7), {secs:.1f} s (< 60 s)")


def test_c03_sinkhorn_vs_bruteforce():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(20):
        n = int(rng.choice([2, 3]))
        c = rng.uniform(0, 2, (n, n))
        eps = float(rng.choice([1.0, 0.3, 0.1]))
        worst = max(worst, float(np.abs(sinkhorn(c, eps) - entropic_ot_bruteforce(c, eps)).max()))
    closed = 0.0
    for eps in (1.0, 0.1, 0.05):
        p = sinkhorn(np.array([[0.0, 1.0], [1.0, 0.0]]), eps)
        closed = max(closed, abs(p[0, 0] - 0.5 / (1.0 + math.exp(-1.0 / eps))))
    record(3, "sinkhorn correctness", worst <= 1e-6 and closed <= 1e-8,
           f"bruteforce gap {worst:.2e} (<= 1e-6), 2x2 closed-form gap {closed:.2e} (<= 1e-8)")


def test_c04_gw_special_case():
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(20):
        n = int(rng.integers(1, 7))
        x, y = rng.standard_normal((n, 2)), rng.standard_normal((n, 3))
        worst = max(worst, gw_expand_check(x, y, random_feasible_plan(n, rng)))
    x = np.array([0.0, 1.0, 3.0, 7.0])
    y = np.array([0.0, 2.0, 3.0, 7.0])
    res = sign_flipped_solve((x[:, None] - x[None]) ** 2, y[:, None], 1e-3)
    got = gw_objective(x[:, None], y[:, None], res.plan)
    best = min(gw_objective(x[:, None], y[:, None], np.eye(4)[list(s)] / 4)
               for s in itertools.permutations(range(4)))
    gap = got - best
    record(4, "GW expansion and sign flip", worst <= 1e-10 and gap <= 1e-4,
           f"expansion gap {worst:.2e} (<= 1e-10), GW excess over best permutation {gap:.2e} (<= 1e-4)")


def test_c05_pivoted_cholesky():
    rng = np.random.default_rng(5)
    grams = [random_gram(rng, int(rng.integers(2, 60))) for _ in range(30)]
    grams += [np.eye(5), np.ones((6, 6)), np.diag([5.0, 1.0, 1e-3, 0.0])]
    worst_trace, worst_rec = -np.inf, 0.0
    for g in grams:
        tr = float(np.trace(g))
        for eta in (0.8, 0.95, 1.0):
            f = pivoted_cholesky(g, eta)
            worst_trace = max(worst_trace, f.residual_trace - (1 - eta) * tr)
            if eta == 1.0:
                rec = np.linalg.norm(f.phi @ f.phi.T - g) / np.linalg.norm(g)
                worst_rec = max(worst_rec, float(rec))
    record(5, "pivoted cholesky", worst_trace <= 1e-12 and worst_rec <= 1e-8,
           f"max residual excess over (1-eta) trace {worst_trace:.2e} (<= 1e-12), eta=1 Frobenius rel err {worst_rec:.2e} (<= 1e-8)")


def test_c06_adaptive_schedule():
    rng = np.random.default_rng(6)
    labels = np.repeat([0, 1], 12)
    factor = factorize(label_gram(labels), 0.95)
    emb = EmbeddingSet(rng.standard_normal((24, 2)))
    star = 0.005
    finals = []
    for eps_init in (0.01, 0.012):
        delta = eps_init / 1024
        res = solve_adaptive(factor, emb, eps_init, delta=delta, fail_below=star)
        finals.append((res.final_epsilon, delta))
    injected_ok = all(star <= e <= star + d for e, d in finals)

    delta = 0.01 / 1024
    res = solve_adaptive(factor, emb, 0.01, delta=delta)
    gap = abs(res.last_trial - res.final_epsilon)
    p = res.plan
    marg = max(np.abs(p.sum(0) - 1 / 24).max(), np.abs(p.sum(1) - 1 / 24).max())
    free_ok = gap < delta and p.min() >= 0 and marg <= 1e-8
    record(6, "adaptive epsilon", injected_ok and free_ok,
           f"injected finals {[f'{e:.6f}' for e, _ in finals]} in [0.005, 0.005+delta]; "
           f"uninjected |trial - eps| {gap:.2e} < delta {delta:.2e}, marginal err {marg:.1e}")


def test_c07_gradients():
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(5):
        rng = np.random.default_rng(seed)
        net = DriftNet.create(3, 2, (16, 16), seed=seed)
        worst = max(worst, fd_max_rel_error(net, random_batch(rng, net, 6)))
    secs = time.perf_counter() - t0
    record(7, "drift gradients", worst <= 1e-4 and secs < 30,
           f"max rel err {worst:.2e} (<= 1e-4), {secs:.1f} s (< 30 s)")


def test_c08_toy_drift():
    t0 = time.perf_counter()
    pts = np.array([[-1.0], [1.0]])
    net = DriftNet.create(1, 1, (64, 64), seed=0)
    cfg = TrainConfig(alpha=0.5, lr=1e-3, batch=256, epochs=20, steps_per_epoch=1000, seed=0)
    state = train(TrainState.create(net, cfg), PlanSampler(np.eye(2) / 2, 0), pts, pts.copy())
    ts = np.linspace(0.1, 0.9, 9)
    zs = np.linspace(-2.0, 2.0, 21)
    errs, in_support = [], []
    for c in (-1.0, 1.0):
        tt, zz = (a.ravel() for a in np.meshgrid(ts, zs, indexing="ij"))
        got = state.net.forward(zz[:, None], np.full((zz.size, 1), c), tt, 0)[:, 0]
        err = np.abs(got - (c - zz) / (1 - tt))
        errs.append(err)
        # the start point that would put x(t) at z; beyond ~3 sigma training never visits it
        in_support.append(np.abs((zz - tt * c) / (1 - tt)) <= 3.0)
    errs, in_support = np.concatenate(errs), np.concatenate(in_support)
    mae = float(errs.mean())
    secs = time.perf_counter() - t0
    record(8, "toy drift recovery", mae <= 0.05 and secs < 300,
           f"MAE {mae:.3f} (<= 0.05) on the full grid, {errs[in_support].mean():.3f} on the "
           f"{in_support.mean():.0%} of cells reachable from |x0| <= 3, {secs:.0f} s (< 300 s)")


def perceptron_accuracy(feats, labels, epochs=200):
    """Pocket perceptron; returns the best training accuracy seen."""
    x = np.hstack([feats, np.ones((feats.shape[0], 1))])
    s = np.where(labels == 1, 1.0, -1.0)
    w = np.zeros(x.shape[1])
    best = 0.0
    for _ in range(epochs):
        for i in range(x.shape[0]):
            if s[i] * (x[i] @ w) <= 0:
                w += s[i] * x[i]
        best = max(best, float(np.mean(s * (x @ w) > 0)))
        if best == 1.0:
            break
    return best


@pytest.fixture(scope="module")
def pipeline_run():
    t0 = time.perf_counter()
    ds = make_synthetic(SyntheticSpec(n=512, d_x=10, n_classes=2, separation=6.0, seed=0))
    cfg = RunConfig(hidden=(128, 128), lr=1e-3, epochs=30, steps_per_epoch=100, batch=256, seed=0)
    stage = couple(ds, cfg)
    state = fit_drift(ds, stage, cfg)
    return ds, cfg, stage, state, t0


def test_c09_pipeline(pipeline_run):
    ds, cfg, stage, state, t0 = pipeline_run
    plan, y = stage.result.plan, stage.emb.y

    i, j = PlanSampler(plan, 7).sample_cells(2000)
    sep = perceptron_accuracy(y[j], ds.labels[i])

    gen = float(np.mean(evaluate_embeddings(embed(state.net, ds.features, 100, 1000))))
    # baseline: every point gets a uniformly random class label and sits at that label's code
    codes = np.array([[-1.0, 0.0], [1.0, 0.0]])
    base = float(np.mean(evaluate_embeddings(codes[np.random.default_rng(9).integers(0, 2, ds.n)])))
    # an untrained net leaves its Gaussian start draw nearly untouched, so it is reported only
    untrained = DriftNet.create(ds.dim, cfg.d_y, cfg.hidden, seed=cfg.seed)
    raw = float(np.mean(evaluate_embeddings(embed(untrained, ds.features, 100, 1000))))

    cent = np.stack([ds.features[ds.labels == c].mean(0) for c in (0, 1)])
    post = (plan * ds.n).T @ ds.labels  # class-1 share of each embedding's coupled mass
    hits, total = 0, 0
    for c in (0, 1):
        yc = y[(post > 0.5) == (c == 1)]
        xr = reconstruct(state.net, yc, 100, 5000 + 1000 * c)
        pred = np.argmin(((xr[:, None, :] - cent[None]) ** 2).sum(-1), 1)
        hits += int((pred == c).sum())
        total += len(yc)
    acc = hits / total
    secs = time.perf_counter() - t0
    # W2G carries a negative entropy offset, so "3x higher" alone is vacuous once gen < 0;
    # the baseline must also miss the 0.3 bound the generated set meets
    ok = sep >= 0.99 and gen <= 0.3 and base >= 3 * gen and base > 0.3 and acc >= 0.9 and secs < 900
    record(9, "desk pipeline", ok,
           f"perceptron {sep:.3f} (>= 0.99), W2G generated {gen:.3f} (<= 0.3), random-label "
           f"baseline {base:.3f} (>= 3x and > 0.3; untrained net {raw:.3f}), reconstruction {acc:.3f} (>= 0.9), {secs:.0f} s (< 900 s)")


def test_c10_plan_interpolation():
    rng = np.random.default_rng(10)
    n = 40
    sub = Dataset(rng.standard_normal((n, 3)), rng.integers(0, 2, n))
    plan = random_feasible_plan(n, rng)
    worst, neg = 0.0, 0.0
    for _ in range(1000):
        label = int(rng.integers(2)) if rng.random() < 0.5 else None
        row = interpolate_row(2 * rng.standard_normal(3), sub, plan, k=int(rng.integers(1, 6)), label=label)
        worst = max(worst, abs(row.sum() - 1 / n))
        neg = min(neg, float(row.min()))
    exact = interpolate_row(sub.features[7], sub, plan, k=1)
    ok = worst <= 1e-12 and neg >= 0 and np.array_equal(exact, plan[7])
    record(10, "plan interpolation", ok,
           f"row-sum err {worst:.1e} over 1000 queries, min entry {neg:.1e}, "
           f"coincident point exact: {np.array_equal(exact, plan[7])}")
