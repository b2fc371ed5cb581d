"""Sampling training pairs from a transport plan, and extending a plan to new points."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientNeighbors, ShapeMismatch, ValidationError
from .kernels import Dataset


def interpolate_row(x, subset: Dataset, plan, k: int = 5, label=None) -> np.ndarray:
    """Plan row for an unseen point as a softmax(-distance) blend of neighbour rows.

    Neighbours are the ``k`` nearest subset points, restricted to ``label``
    when both ``label`` and subset labels are given.
    """
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    x = np.asarray(x, dtype=np.float64).ravel()
    feats = subset.features
    plan = np.asarray(plan, dtype=np.float64)
    if plan.shape[0] != subset.n:
        raise ShapeMismatch(f"plan has {plan.shape[0]} rows for {subset.n} subset points")
    if x.shape[0] != feats.shape[1]:
        raise ShapeMismatch(f"query has dim {x.shape[0]}, subset has {feats.shape[1]}")
    cand = np.arange(subset.n)
    if label is not None and subset.labels is not None:
        cand = np.flatnonzero(subset.labels == label)
    if cand.size < k:
        raise InsufficientNeighbors(f"need {k} neighbours, only {cand.size} candidates")
    diff = feats[cand] - x
    dist = np.sqrt((diff * diff).sum(1))
    near = np.argsort(dist, kind="stable")[:k]
    d = dist[near]
    w = np.exp(-(d - d.min()))
    w /= w.sum()
    return w @ plan[cand[near]]


@dataclass
class PlanInterpolator:
    """Extends a plan computed on ``subset`` to every point of ``full``."""

    subset: Dataset
    plan: np.ndarray
    full: Dataset
    k: int = 5

    def row(self, i: int) -> np.ndarray:
        label = None if self.full.labels is None else self.full.labels[i]
        return interpolate_row(self.full.features[i], self.subset, self.plan, self.k, label)


@dataclass
class PlanSampler:
    """Draws ``(x, y-index)`` pairs with probability ``P_ij``.

    With probability ``mixture_weight`` (only when an ``interpolated``
    provider is attached) the x is instead a uniformly drawn point of the full
    dataset and j is drawn from its interpolated plan row. Owns its RNG.
    """

    plan: np.ndarray
    rng_seed: int = 0
    mixture_weight: float = 0.0
    interpolated: PlanInterpolator | None = None
    _rng: np.random.Generator = field(init=False, repr=False)
    _cdf: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        plan = np.asarray(self.plan, dtype=np.float64)
        if plan.ndim != 2 or plan.shape[0] != plan.shape[1]:
            raise ShapeMismatch("plan must be square")
        if np.any(plan < 0) or not np.all(np.isfinite(plan)):
            raise ValidationError("plan entries must be finite and nonnegative")
        if not 0.0 <= self.mixture_weight <= 1.0:
            raise ValidationError(f"mixture_weight must lie in [0, 1], got {self.mixture_weight}")
        self.plan = plan
        cdf = np.cumsum(plan.ravel())
        self._cdf = cdf / cdf[-1]
        self._rng = np.random.default_rng(self.rng_seed)

    @property
    def n(self) -> int:
        return self.plan.shape[0]

    def _use_mixture(self) -> bool:
        return self.interpolated is not None and self.mixture_weight > 0

    def sample_cells(self, size: int):
        flat = np.searchsorted(self._cdf, self._rng.random(size), side="right")
        flat = np.minimum(flat, self._cdf.size - 1)
        return flat // self.n, flat % self.n

    def sample_pair(self):
        """One draw: ``(i, j)`` from the plan, or ``(x_vector, j)`` from the mixture."""
        if self._use_mixture() and self._rng.random() < self.mixture_weight:
            idx = int(self._rng.integers(self.interpolated.full.n))
            row = self.interpolated.row(idx)
            j = int(self._rng.choice(self.n, p=row / row.sum()))
            return self.interpolated.full.features[idx], j
        i, j = self.sample_cells(1)
        return int(i[0]), int(j[0])

    def sample_batch(self, size: int, x_subset):
        """``size`` pairs as ``(x1 rows, y indices)``; ``x_subset`` are the plan's rows."""
        x_subset = np.atleast_2d(np.asarray(x_subset, dtype=np.float64))
        if not self._use_mixture():
            i, j = self.sample_cells(size)
            return x_subset[i], j
        x1 = np.empty((size, x_subset.shape[1]))
        j = np.empty(size, dtype=np.int64)
        for b in range(size):
            a, jj = self.sample_pair()
            x1[b] = x_subset[a] if np.isscalar(a) or np.ndim(a) == 0 else a
            j[b] = jj
        return x1, j
