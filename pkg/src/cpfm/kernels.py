"""Kernel Gram matrices over the data space."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateBandwidth,
    EmptyFingerprint,
    MissingLabels,
    NonpositiveBandwidth,
    ShapeMismatch,
    SingletonDataset,
    ValidationError,
)


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray | None = None
    properties: np.ndarray | None = None

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.features, dtype=np.float64))
        object.__setattr__(self, "features", x)
        n = x.shape[0]
        if n < 1:
            raise ValidationError("dataset must contain at least one sample")
        if not np.all(np.isfinite(x)):
            raise ValidationError("features must be finite")
        if self.labels is not None:
            labels = np.asarray(self.labels)
            if labels.shape != (n,):
                raise ShapeMismatch(f"labels have shape {labels.shape}, expected ({n},)")
            object.__setattr__(self, "labels", labels.astype(np.int64))
        if self.properties is not None:
            props = np.asarray(self.properties, dtype=np.float64)
            if props.shape != (n,):
                raise ShapeMismatch(f"properties have shape {props.shape}, expected ({n},)")
            if not np.all(np.isfinite(props)):
                raise ValidationError("properties must be finite")
            object.__setattr__(self, "properties", props)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(
            self.features[idx],
            None if self.labels is None else self.labels[idx],
            None if self.properties is None else self.properties[idx],
        )


def _features(ds) -> np.ndarray:
    if isinstance(ds, Dataset):
        return ds.features
    return np.atleast_2d(np.asarray(ds, dtype=np.float64))


# Above this many difference entries fall back to the Gram-matrix expansion.
_DIRECT_LIMIT = 4_000_000


def pairwise_sqdist(x: np.ndarray, z: np.ndarray | None = None) -> np.ndarray:
    """Squared Euclidean distances, clipped at zero against cancellation."""
    same = z is None
    z = x if z is None else z
    if x.shape[0] * z.shape[0] * x.shape[1] <= _DIRECT_LIMIT:
        diff = x[:, None, :] - z[None, :, :]
        return (diff * diff).sum(-1)
    d = (x * x).sum(1)[:, None] + (z * z).sum(1)[None, :] - 2.0 * x @ z.T
    np.maximum(d, 0.0, out=d)
    if same:
        np.fill_diagonal(d, 0.0)
        d = 0.5 * (d + d.T)
    return d


def _symmetrize(g: np.ndarray) -> np.ndarray:
    return 0.5 * (g + g.T)


def gaussian_bandwidth(ds) -> float:
    """Mean Euclidean distance over all n^2 ordered pairs, diagonal included."""
    x = _features(ds)
    n = x.shape[0]
    if n < 2:
        raise SingletonDataset("bandwidth needs at least two samples")
    dist = np.sqrt(pairwise_sqdist(x))
    sigma = float(dist.sum() / n**2)
    if sigma == 0.0:
        raise DegenerateBandwidth("all samples coincide; bandwidth is zero")
    return sigma


def rbf_kernel(ds, sigma: float) -> np.ndarray:
    if not sigma > 0:
        raise NonpositiveBandwidth(f"bandwidth must be positive, got {sigma}")
    x = _features(ds)
    g = np.exp(-pairwise_sqdist(x) / (2.0 * sigma**2))
    np.fill_diagonal(g, 1.0)
    return _symmetrize(g)


def image_kernel(ds: Dataset, sigma: float) -> np.ndarray:
    """Heat kernel on appearance times a same-label indicator."""
    if ds.labels is None:
        raise MissingLabels("image kernel requires a `label` column")
    g = rbf_kernel(ds, sigma)
    same = ds.labels[:, None] == ds.labels[None, :]
    return np.where(same, g, 0.0)


def tanimoto(fingerprints: np.ndarray) -> np.ndarray:
    f = np.asarray(fingerprints, dtype=np.float64)
    if f.ndim != 2:
        raise ShapeMismatch("fingerprints must be a 2-D 0/1 matrix")
    if not np.all((f == 0) | (f == 1)):
        raise ValidationError("fingerprints must be binary")
    counts = f.sum(1)
    if np.any(counts == 0):
        bad = int(np.flatnonzero(counts == 0)[0])
        raise EmptyFingerprint(f"fingerprint {bad} has no set bits")
    inter = f @ f.T
    return inter / (counts[:, None] + counts[None, :] - inter)


def molecule_kernel(fingerprints: np.ndarray, properties: np.ndarray) -> np.ndarray:
    """Half Tanimoto similarity plus half absolute property difference.

    The property term is a distance, taken as written; it is neither negated
    nor rescaled.
    """
    props = np.asarray(properties, dtype=np.float64).ravel()
    struct = tanimoto(fingerprints)
    if props.shape[0] != struct.shape[0]:
        raise ShapeMismatch("one property value per fingerprint is required")
    if not np.all(np.isfinite(props)):
        raise ValidationError("properties must be finite")
    g = 0.5 * struct + 0.5 * np.abs(props[:, None] - props[None, :])
    return _symmetrize(g)


def neg_sqdist_kernel(ds) -> np.ndarray:
    return -pairwise_sqdist(_features(ds))


def sqdist_kernel(ds) -> np.ndarray:
    """Squared distances; the sign-flipped Gromov-Wasserstein kernel."""
    return pairwise_sqdist(_features(ds))


KERNELS = ("image", "rbf", "molecule", "neg-sqdist", "sqdist")
