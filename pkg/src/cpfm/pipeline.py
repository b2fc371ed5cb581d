"""Stage functions shared by the CLI, the experiment scripts and the tests.

Each stage is a plain function of in-memory objects; the CLI wraps them with
file persistence so any stage can be rerun on its own.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .config import RunConfig
from .dcfm import DriftNet, TrainConfig, TrainState, train
from .errors import ValidationError
from .gwot import EmbeddingSet, GwotResult, solve_adaptive
from .io import draw_target
from .kernels import (Dataset, gaussian_bandwidth, image_kernel, molecule_kernel,
                      neg_sqdist_kernel, rbf_kernel, sqdist_kernel)
from .lowrank import GramFactor, factorize
from .metrics import wasserstein_to_gaussian
from .plan_ops import PlanInterpolator, PlanSampler
from .sampler import euler_sample_batch

log = logging.getLogger(__name__)


def build_gram(ds: Dataset, kernel: str = "image", fingerprints=None, sigma: float | None = None):
    """Gram matrix for a named kernel; returns ``(G, sigma or None)``."""
    if kernel in ("image", "rbf"):
        sigma = gaussian_bandwidth(ds) if sigma is None else sigma
        g = image_kernel(ds, sigma) if kernel == "image" else rbf_kernel(ds, sigma)
        return g, sigma
    if kernel == "molecule":
        if fingerprints is None:
            raise ValidationError("molecule kernel needs a fingerprint matrix")
        if ds.properties is None:
            raise ValidationError("molecule kernel needs a property column")
        return molecule_kernel(fingerprints, ds.properties), None
    if kernel == "neg-sqdist":
        return neg_sqdist_kernel(ds), None
    if kernel == "sqdist":
        return sqdist_kernel(ds), None
    raise ValidationError(f"unknown kernel {kernel!r}")


@dataclass
class CouplingStage:
    subset_idx: np.ndarray  # rows of the full dataset the plan was computed on
    factor: GramFactor
    emb: EmbeddingSet
    result: GwotResult
    sigma: float | None = None


def subsample(n: int, max_points: int, seed: int) -> np.ndarray:
    if n <= max_points:
        return np.arange(n)
    return np.sort(np.random.default_rng(seed).choice(n, size=max_points, replace=False))


def couple(ds: Dataset, cfg: RunConfig, fingerprints=None) -> CouplingStage:
    """Kernel, factor and adaptive GWOT solve on (a subsample of) ``ds``."""
    idx = subsample(ds.n, cfg.max_ot_points, cfg.seed)
    sub = ds.subset(idx)
    fp = None if fingerprints is None else np.asarray(fingerprints)[idx]
    g, sigma = build_gram(sub, cfg.kernel, fp)
    factor = factorize(g, cfg.eta)
    emb = draw_target(cfg.target_dist, sub.n, cfg.d_y, cfg.seed)
    log.info("coupling %d points, rank %d", sub.n, factor.rank)
    res = solve_adaptive(factor, emb, cfg.epsilon_init, cfg.tau, cfg.delta)
    return CouplingStage(idx, factor, emb, res, sigma)


def make_sampler(ds: Dataset, stage: CouplingStage, cfg: RunConfig) -> PlanSampler:
    """Plan sampler; mixes in interpolated rows only when the plan saw a subsample."""
    interp = None
    if stage.subset_idx.size < ds.n:
        interp = PlanInterpolator(ds.subset(stage.subset_idx), stage.result.plan, ds, cfg.knn_k)
    return PlanSampler(stage.result.plan, cfg.seed, cfg.mixture_weight if interp else 0.0, interp)


def train_config(cfg: RunConfig) -> TrainConfig:
    return TrainConfig(alpha=cfg.alpha, lr=cfg.lr, weight_decay=cfg.weight_decay, batch=cfg.batch,
                       epochs=cfg.epochs, steps_per_epoch=cfg.steps_per_epoch, seed=cfg.seed)


def fit_drift(ds: Dataset, stage: CouplingStage, cfg: RunConfig, callback=None) -> TrainState:
    net = DriftNet.create(ds.dim, cfg.d_y, cfg.hidden, seed=cfg.seed)
    state = TrainState.create(net, train_config(cfg), cfg.schedule)
    sampler = make_sampler(ds, stage, cfg)
    return train(state, sampler, ds.subset(stage.subset_idx).features, stage.emb.y, callback=callback)


def embed(net: DriftNet, x, steps: int = 100, seed: int = 0) -> np.ndarray:
    """Sample one embedding per row of ``x`` (role 1); row ``i`` uses seed ``seed + i``."""
    x = np.atleast_2d(x)
    return euler_sample_batch(net, x, 1, steps, seed + np.arange(x.shape[0]))


def reconstruct(net: DriftNet, y, steps: int = 100, seed: int = 0) -> np.ndarray:
    """Sample one data point per row of ``y`` (role 0)."""
    y = np.atleast_2d(y)
    return euler_sample_batch(net, y, 0, steps, seed + np.arange(y.shape[0]))


def evaluate_embeddings(y, eps: float = 1e-2, seeds=(0, 1, 2)) -> list:
    return [wasserstein_to_gaussian(y, eps, s) for s in seeds]
