"""Low-rank row-feature factorizations of Gram matrices."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import IndefiniteGram, ShapeMismatch, ValidationError

# Relative (to trace) slack below which a negative pivot counts as round-off.
PIVOT_SLACK = 1e-10
# Diagonal residual mass below this fraction of the trace is round-off.
_NOISE_FLOOR = 1e-13


@dataclass(frozen=True)
class GramFactor:
    """Row features ``phi`` (n x m) with ``phi @ phi.T ~ G`` and row weights.

    ``weights`` are row sums of the exact Gram matrix, not of the truncated
    product, so the truncation error stays out of the linear cost term.
    """

    phi: np.ndarray
    weights: np.ndarray
    rank: int
    residual_trace: float
    eta: float = 1.0
    clipped_mass: float = 0.0

    @property
    def n(self) -> int:
        return self.phi.shape[0]

    def gram(self) -> np.ndarray:
        return self.phi @ self.phi.T


def _check_square(g) -> np.ndarray:
    g = np.asarray(g, dtype=np.float64)
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise ShapeMismatch(f"Gram matrix must be square, got shape {g.shape}")
    if not np.all(np.isfinite(g)):
        raise ValidationError("Gram matrix has non-finite entries")
    return g


def _check_eta(eta: float) -> None:
    if not 0.0 < eta <= 1.0:
        raise ValidationError(f"eta must lie in (0, 1], got {eta}")


def row_weights(g) -> np.ndarray:
    return np.asarray(g, dtype=np.float64).sum(axis=1)


def pivoted_cholesky(g, eta: float = 0.95) -> GramFactor:
    """Greedy pivoted Cholesky stopped once ``eta`` of the trace is explained.

    Pivots are taken in order of the largest remaining diagonal residual.
    Raises ``IndefiniteGram`` when a diagonal residual drops below
    ``-PIVOT_SLACK * trace(G)``; use :func:`eigen_factor` for such kernels.
    """
    g = _check_square(g)
    _check_eta(eta)
    n = g.shape[0]
    diag = np.diag(g).copy()
    total = float(diag.sum())
    scale = max(abs(total), float(np.abs(g).max(initial=0.0)))
    slack = PIVOT_SLACK * scale
    if np.any(diag < -slack) or (total <= slack and np.abs(g).max(initial=0.0) > slack):
        raise IndefiniteGram("Gram matrix is not positive semidefinite (non-positive trace/diagonal)")

    target = (1.0 - eta) * total
    floor = _NOISE_FLOOR * max(total, 0.0)
    cols = []
    resid = diag
    while len(cols) < n:
        if resid.sum() <= max(target, floor):
            break
        j = int(np.argmax(resid))
        pivot = resid[j]
        if pivot <= floor:
            break
        col = g[:, j].copy()
        for c in cols:
            col -= c * c[j]
        col /= np.sqrt(pivot)
        cols.append(col)
        resid = resid - col * col
        if np.any(resid < -slack):
            raise IndefiniteGram(f"negative diagonal residual {resid.min():.3e} after {len(cols)} pivots")

    resid = np.maximum(resid, 0.0)
    residual = float(resid.sum())
    if len(cols) == n or residual <= floor:
        residual = 0.0
    phi = np.stack(cols, axis=1) if cols else np.zeros((n, 0))
    return GramFactor(phi, row_weights(g), len(cols), residual, eta)


def eigen_factor(g, eta: float = 0.95) -> GramFactor:
    """Factor the positive spectral part of a symmetric (possibly indefinite) G.

    Negative eigenvalues are clipped to zero; ``clipped_mass`` is the share of
    total absolute spectral mass that was discarded. The kept eigenpairs are
    the fewest, largest ones covering ``eta`` of the positive mass.
    """
    g = _check_square(g)
    _check_eta(eta)
    n = g.shape[0]
    lam, vec = np.linalg.eigh(0.5 * (g + g.T))
    order = np.argsort(lam)[::-1]
    lam, vec = lam[order], vec[:, order]
    pos = np.maximum(lam, 0.0)
    pos_mass = float(pos.sum())
    abs_mass = float(np.abs(lam).sum())
    clipped = float(np.abs(np.minimum(lam, 0.0)).sum() / abs_mass) if abs_mass > 0 else 0.0
    if pos_mass <= 0.0:
        return GramFactor(np.zeros((n, 0)), row_weights(g), 0, 0.0, eta, clipped)
    cum = np.cumsum(pos)
    m = int(np.searchsorted(cum, eta * pos_mass * (1 - 1e-12)) + 1)
    m = min(m, int((pos > 0).sum()))
    phi = vec[:, :m] * np.sqrt(pos[:m])
    residual = max(pos_mass - float(cum[m - 1]), 0.0)
    if residual <= _NOISE_FLOOR * pos_mass:
        residual = 0.0
    return GramFactor(phi, row_weights(g), m, residual, eta, clipped)


def factorize(g, eta: float = 0.95) -> GramFactor:
    """Pivoted Cholesky, falling back to the clipped eigen-factor when indefinite."""
    try:
        return pivoted_cholesky(g, eta)
    except IndefiniteGram:
        return eigen_factor(g, eta)
