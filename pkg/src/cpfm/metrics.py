"""Evaluation metrics that need no pretrained networks."""

from __future__ import annotations

import math

import numpy as np

from .errors import InsufficientRuns, ShapeMismatch, ValidationError
from .kernels import pairwise_sqdist
from .sinkhorn import DEFAULT_TOL, entropic_ot_value, sinkhorn_log

DEFAULT_METRIC_EPS = 1e-2
# Residual target for the metric solve (same as the solver default).
METRIC_TOL = DEFAULT_TOL
# FID and LPIPS need pretrained vision networks and are not provided.
UNAVAILABLE = ("fid", "lpips")


def gaussian_reference(n: int, dim: int, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal((n, dim))


def wasserstein_to_gaussian(y, eps: float = DEFAULT_METRIC_EPS, seed: int = 0, *,
                            reference=None, max_iter: int = 100_000, tol: float = METRIC_TOL) -> float:
    """Entropic OT objective between ``y`` and an equal-size standard normal sample.

    Squared Euclidean cost, uniform weights, entropy ``eps * sum P (log P - 1)``.
    ``reference`` overrides the normal draw (used by tests).
    """
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    n = y.shape[0]
    if n < 2:
        raise ValidationError("need at least two embeddings")
    z = gaussian_reference(n, y.shape[1], seed) if reference is None else np.asarray(reference, dtype=np.float64)
    if z.shape != y.shape:
        raise ShapeMismatch(f"reference has shape {z.shape}, embeddings {y.shape}")
    cost = pairwise_sqdist(y, z)
    plan = sinkhorn_log(cost, eps, tol, max_iter).plan
    return entropic_ot_value(cost, plan, eps)


def gwot_eval(gram, y) -> float:
    """Kernelized distortion of the one-to-one pairing ``x_i <-> y_i``."""
    g = np.asarray(gram, dtype=np.float64)
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if y.shape[0] == 1 and g.shape[0] != 1:
        y = y.T
    n = g.shape[0]
    if g.shape != (n, n) or y.shape[0] != n:
        raise ShapeMismatch(f"Gram {g.shape} and embeddings {y.shape} disagree")
    return float((g * pairwise_sqdist(y)).sum() / n**2)


def aggregate(runs):
    """Mean and unbiased sample standard deviation over independent runs."""
    vals = [float(v) for v in runs]
    if len(vals) < 1:
        raise InsufficientRuns("no runs to aggregate")
    if len(vals) < 2:
        raise InsufficientRuns("standard deviation needs at least two runs")
    mean = math.fsum(vals) / len(vals)
    var = math.fsum((v - mean) ** 2 for v in vals) / (len(vals) - 1)
    return mean, math.sqrt(var)


def run_mean(runs) -> float:
    vals = [float(v) for v in runs]
    if not vals:
        raise InsufficientRuns("no runs to aggregate")
    return math.fsum(vals) / len(vals)
