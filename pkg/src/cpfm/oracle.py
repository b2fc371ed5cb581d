"""Brute-force reference computations for tiny instances.

Nothing here calls the Sinkhorn solver, the GWOT loop or the factorizations
of the main modules; the only shared machinery is plain numpy linear algebra,
so agreement between the two sides is evidence rather than a tautology.
"""

from __future__ import annotations

import itertools

import numpy as np

from .errors import ValidationError


def _entropic_value(c, p, eps):
    pos = p > 0
    return float((c * p).sum() + eps * ((p[pos] * np.log(p[pos])).sum() - p.sum()))


def _polytope_basis(n):
    """Affine chart ``P = P0 + B theta`` of the uniform-marginal transport polytope."""
    k = n - 1
    p0 = np.zeros((n, n))
    p0[:, k] = 1.0 / n
    p0[k, :] = 1.0 / n
    p0[k, k] = 1.0 / n - (n - 1) / n
    basis = np.zeros((n * n, k * k))
    for a in range(k):
        for b in range(k):
            e = np.zeros((n, n))
            e[a, b] = 1.0
            e[a, k] = -1.0
            e[k, b] = -1.0
            e[k, k] = 1.0
            basis[:, a * k + b] = e.ravel()
    return p0, basis


def entropic_ot_bruteforce(cost, eps: float, grad_tol: float = 1e-10, max_iter: int = 500) -> np.ndarray:
    """Minimize the entropic OT objective by damped Newton in the polytope's affine chart.

    Iterates stay strictly inside the polytope (backtracking on positivity
    and on the objective); stops when the reduced gradient norm is at most
    ``grad_tol``.
    """
    c = np.asarray(cost, dtype=np.float64)
    n = c.shape[0]
    if n > 3:
        raise ValidationError("brute-force entropic OT is capped at n <= 3")
    if n == 1:
        return np.ones((1, 1))
    p0, basis = _polytope_basis(n)
    theta = np.full((n - 1) ** 2, 1.0 / n**2)
    cflat = c.ravel()
    for _ in range(max_iter):
        p = p0.ravel() + basis @ theta
        g = basis.T @ (cflat + eps * np.log(p))
        if np.linalg.norm(g) <= grad_tol:
            break
        hess = basis.T @ (basis * (eps / p)[:, None])
        step = np.linalg.solve(hess, g)
        f_old = _entropic_value(c, p.reshape(n, n), eps)
        lam = 1.0
        while lam > 1e-20:
            cand = theta - lam * step
            q = p0.ravel() + basis @ cand
            if np.all(q > 0) and _entropic_value(c, q.reshape(n, n), eps) <= f_old + 1e-18:
                theta = cand
                break
            lam *= 0.5
        else:
            break
    return (p0.ravel() + basis @ theta).reshape(n, n)


def quadratic_bruteforce(gram, y, plan) -> float:
    """``sum_{i,j,i',j'} P_ij P_i'j' G_ii' |y_j - y_j'|^2`` as a literal quadruple sum."""
    g = np.asarray(gram, dtype=np.float64)
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if y.shape[0] != g.shape[0]:
        y = y.T
    p = np.asarray(plan, dtype=np.float64)
    diff = y[:, None, :] - y[None, :, :]
    dy = (diff**2).sum(-1)
    return float(np.einsum("ij,kl,ik,jl->", p, p, g, dy))


def permutation_coupling_scan(gram, y):
    """Best permutation plan ``P = I_sigma / n`` for the quadratic objective.

    Returns ``(sigma, value, all_values)`` where ``sigma[i]`` is the
    embedding index paired with data point ``i``.
    """
    g = np.asarray(gram, dtype=np.float64)
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    n = g.shape[0]
    if y.shape[0] != n:
        y = y.T
    if n > 8:
        raise ValidationError("permutation scan is capped at n <= 8")
    diff = y[:, None, :] - y[None, :, :]
    dy = (diff**2).sum(-1)
    values = {}
    for sigma in itertools.permutations(range(n)):
        s = np.array(sigma)
        values[sigma] = float((g * dy[np.ix_(s, s)]).sum() / n**2)
    best = min(values, key=lambda k: (values[k], k))
    return best, values[best], values


def random_feasible_plan(n: int, rng, sweeps: int = 2000) -> np.ndarray:
    """Random positive matrix scaled to uniform marginals by alternating normalization."""
    p = rng.random((n, n)) + 1e-3
    for _ in range(sweeps):
        p /= p.sum(1, keepdims=True) * n
        p /= p.sum(0, keepdims=True) * n
    return p


def _psd_features(g):
    lam, vec = np.linalg.eigh(0.5 * (g + g.T))
    keep = lam > 1e-12 * max(abs(lam).max(initial=0.0), 1.0)
    return vec[:, keep] * np.sqrt(lam[keep])


def identity_check_factor2(gram, y, trials: int = 50, seed: int = 0, phi=None) -> float:
    """Max relative gap ``|2 V(P, A*(P)) - Q(P)| / max(1, |Q(P)|)`` over random plans.

    ``V`` is the linearized (variational) value with ``A* = Phi^T P Y`` and
    marginal-weighted row sums; ``Q`` the quadruple sum. ``phi`` may supply
    an exact row factor of ``gram``; otherwise one is built by eigendecomposition.
    """
    g = np.asarray(gram, dtype=np.float64)
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    n = g.shape[0]
    if y.shape[0] != n:
        y = y.T
    phi = _psd_features(g) if phi is None else np.asarray(phi, dtype=np.float64)
    w = g.sum(1) / n
    ynorm = (y**2).sum(1)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        p = random_feasible_plan(n, rng)
        a = phi.T @ p @ y
        lin = np.einsum("ij,i,j->", p, w, ynorm) - 2.0 * np.einsum("ij,ik,jl,kl->", p, phi, y, a)
        var = float((a**2).sum() + lin)
        quad = quadratic_bruteforce(g, y, p)
        worst = max(worst, abs(2.0 * var - quad) / max(1.0, abs(quad)))
    return worst


def gw_objective(x, y, plan) -> float:
    """Squared-loss Gromov-Wasserstein objective with squared Euclidean dissimilarities."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    p = np.asarray(plan, dtype=np.float64)
    if x.shape[0] != p.shape[0]:
        x = x.T
    if y.shape[0] != p.shape[0]:
        y = y.T
    dx = ((x[:, None, :] - x[None, :, :]) ** 2).sum(-1)
    dy = ((y[:, None, :] - y[None, :, :]) ** 2).sum(-1)
    return _gw_literal(dx, dy, p)


def _gw_literal(dx, dy, p) -> float:
    n = p.shape[0]
    total = 0.0
    for i in range(n):
        for k in range(n):
            total += float((p[i][:, None] * p[k][None, :] * (dx[i, k] - dy) ** 2).sum())
    return total


def gw_expand_check(x, y, plan) -> float:
    """Relative gap between GW(P) and its marginal-constants-minus-cross-term expansion."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    p = np.asarray(plan, dtype=np.float64)
    n = p.shape[0]
    if n > 6:
        raise ValidationError("expansion check is capped at n <= 6")
    if x.shape[0] != n:
        x = x.T
    if y.shape[0] != n:
        y = y.T
    dx = ((x[:, None, :] - x[None, :, :]) ** 2).sum(-1)
    dy = ((y[:, None, :] - y[None, :, :]) ** 2).sum(-1)
    lhs = _gw_literal(dx, dy, p)
    mu = np.full(n, 1.0 / n)
    const_x = float(mu @ (dx**2) @ mu)
    const_y = float(mu @ (dy**2) @ mu)
    cross = float(np.einsum("ij,kl,ik,jl->", p, p, dx, dy))
    rhs = const_x + const_y - 2.0 * cross
    scale = max(abs(lhs), abs(const_x) + abs(const_y) + 2.0 * abs(cross), 1e-300)
    return abs(lhs - rhs) / scale
