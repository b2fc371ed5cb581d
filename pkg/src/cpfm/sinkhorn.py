"""Log-domain Sinkhorn for entropic OT with uniform marginals."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import PrecisionFailure, ShapeMismatch, ValidationError

DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 10_000
# Largest |log| a scaling vector may reach before it is folded into the potentials.
ABSORB = 30.0
TINY = 1e-200
# epsilon scaling: start where cost spread / eps is at most ANNEAL_START
ANNEAL_START = 64.0
ANNEAL_FACTOR = 2.0
ANNEAL_TOL = 1e-6
ANNEAL_SWEEPS = 2000
# a warm start that has not converged after this many sweeps is abandoned
WARM_SWEEPS = 1000
# Newton polish of the dual once scaling sweeps stall; dense solves, so capped in n
NEWTON_MAX_N = 1500
NEWTON_SWITCH = 300
NEWTON_MAX_STEPS = 60
NEWTON_RIDGE = 1e-12


@dataclass
class SinkhornResult:
    plan: np.ndarray
    f: np.ndarray
    g: np.ndarray
    n_iter: int
    residual: float


def _lse_rows(m: np.ndarray) -> np.ndarray:
    mx = m.max(axis=1)
    return mx + np.log(np.exp(m - mx[:, None]).sum(axis=1))


def _check_cost(cost) -> np.ndarray:
    c = np.asarray(cost, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ShapeMismatch(f"cost matrix must be square, got shape {c.shape}")
    if not np.all(np.isfinite(c)):
        raise ValidationError("cost matrix has non-finite entries")
    return c


def _log_sweep(k, kt, g, log_marg):
    f = log_marg - _lse_rows(k + g[None, :])
    g = log_marg - _lse_rows(kt + f[None, :])
    return f, g


def _scaling_loop(k, kt, f, g, tol, max_iter):
    """Stabilized scaling sweeps from scaled potentials ``(f, g)``.

    Returns ``(f, g, sweeps, residual)``; never raises on slow convergence.
    """
    n = k.shape[0]
    marg = 1.0 / n
    log_marg = -np.log(n)
    it = 0
    residual = np.inf
    while True:
        if not (np.isfinite(f).all() and np.isfinite(g).all()):
            return f, g, it, np.inf
        kern = np.exp(k + f[:, None] + g[None, :])
        # subnormals make every matvec crawl; their mass is far below tol
        kern[kern < TINY] = 0.0
        v = np.ones(n)
        kv = kern @ v
        u = None
        while it < max_iter:
            u = marg / kv
            v = marg / (kern.T @ u)
            it += 1
            kv = kern @ v
            residual = float(np.abs(u * kv - marg).max())
            if residual <= tol or not (np.isfinite(residual) and np.isfinite(v).all()):
                break
            if np.abs(np.log(u)).max() > ABSORB or np.abs(np.log(v)).max() > ABSORB:
                break
        if u is None:
            return f, g, it, residual
        with np.errstate(divide="ignore", invalid="ignore"):
            lu, lv = np.log(u), np.log(v)
        if np.isfinite(lu).all() and np.isfinite(lv).all() and np.isfinite(residual):
            f, g = f + lu, g + lv
            if residual <= tol or it >= max_iter:
                return f, g, it, residual
        else:
            # a shifted row or column underflowed; repair with exact log sweeps
            f, g = _log_sweep(k, kt, g, log_marg)
            it += 1
            rows = np.exp(f + _lse_rows(k + g[None, :]))
            residual = float(np.abs(rows - marg).max())
            if residual <= tol or it >= max_iter:
                return f, g, it, residual


def _dual_objective(k, f, g, a):
    with np.errstate(over="ignore"):
        p = np.exp(k + f[:, None] + g[None, :])
    return p, float(p.sum() - a * (f.sum() + g.sum()))


def _newton_polish(k, f, g, tol, max_steps):
    """Damped Newton steps on the (scaled) dual of the entropic problem.

    Minimizes ``sum_ij exp(k_ij + f_i + g_j) - (sum f + sum g) / n`` whose
    gradient is the marginal violation. The gauge freedom ``(f + c, g - c)``
    is removed by holding the last ``g`` fixed. Returns
    ``(f, g, steps, residual)``; stops early if the line search stalls.
    """
    n = k.shape[0]
    a = 1.0 / n
    p, obj = _dual_objective(k, f, g, a)
    steps = 0
    res = np.inf
    while True:
        r, s = p.sum(1), p.sum(0)
        grad = np.concatenate([r - a, s[:-1] - a])
        res = max(float(np.abs(r - a).max()), float(np.abs(s - a).max()))
        if not np.isfinite(res) or res <= tol or steps >= max_steps:
            break
        h = np.empty((2 * n - 1, 2 * n - 1))
        h[:n, :n] = np.diag(r)
        h[:n, n:] = p[:, :-1]
        h[n:, :n] = p[:, :-1].T
        h[n:, n:] = np.diag(s[:-1])
        h[np.diag_indices_from(h)] += NEWTON_RIDGE * a
        try:
            d = -np.linalg.solve(h, grad)
        except np.linalg.LinAlgError:
            break
        df, dg = d[:n], np.append(d[n:], 0.0)
        slope = float(grad @ d)
        t = 1.0
        while t > 1e-12:
            fn, gn = f + t * df, g + t * dg
            pn, on = _dual_objective(k, fn, gn, a)
            if np.isfinite(on):
                new_res = max(float(np.abs(pn.sum(1) - a).max()), float(np.abs(pn.sum(0) - a).max()))
                if on <= obj + 1e-4 * t * slope or new_res < 0.5 * res:
                    break
            t *= 0.5
        else:
            break
        f, g, p, obj = fn, gn, pn, on
        steps += 1
    return f, g, steps, res


def _final_stage(k, kt, f, g, tol, budget):
    """Scaling sweeps at the target epsilon, with a Newton polish once they stall."""
    used = 0
    if k.shape[0] <= NEWTON_MAX_N:
        f, g, used, res = _scaling_loop(k, kt, f, g, tol, min(budget, NEWTON_SWITCH))
        if res <= tol or used >= budget:
            return f, g, used, res
        f, g, steps, res = _newton_polish(k, f, g, tol, min(NEWTON_MAX_STEPS, budget - used))
        used += steps
        if res <= tol or used >= budget:
            return f, g, used, res
    f, g, more, res = _scaling_loop(k, kt, f, g, tol, budget - used)
    return f, g, used + more, res


def _anneal_schedule(spread: float, eps: float) -> list:
    """Decreasing epsilons ending at ``eps``, starting where ``spread/eps`` is mild."""
    stages = [eps]
    while spread / stages[-1] > ANNEAL_START:
        stages.append(stages[-1] * ANNEAL_FACTOR)
    return stages[::-1]


def sinkhorn_log(cost, eps: float, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
                 f0=None, g0=None) -> SinkhornResult:
    """Solve ``min <C, P> + eps * sum P (log P - 1)`` with marginals 1/n.

    The state is a pair of dual potentials ``f, g`` (cost units), with plan
    ``exp((f_i + g_j - C_ij) / eps)``. Sweeps run as scaling updates on the
    kernel shifted by the current potentials; the scalings are absorbed back
    into the potentials (and the shifted kernel rebuilt) as soon as they leave
    ``[e^-ABSORB, e^ABSORB]``, so no unshifted ``exp(-C/eps)`` is formed.

    Two accelerations change the speed, not the answer. Without a warm start
    and when the cost spread is large compared to ``eps``, the potentials are
    first brought close by a short sequence of larger-epsilon problems
    (epsilon scaling). When the sweeps at the target epsilon stall (nearly
    deterministic plans contract very slowly) and ``n <= NEWTON_MAX_N``, the
    potentials are polished by damped Newton steps on the dual. Sweeps and
    Newton steps all count against ``max_iter``.

    ``f0``/``g0`` warm-start the potentials.

    Raises ``PrecisionFailure`` on non-finite potentials or when the L-inf
    marginal residual is still above ``tol`` after ``max_iter`` iterations.
    """
    c = _check_cost(cost)
    if not eps > 0:
        raise ValidationError(f"epsilon must be positive, got {eps}")
    n = c.shape[0]
    marg = 1.0 / n
    log_marg = -np.log(n)

    def run(stages, g_pot, it, budget_total):
        f = g = k = None
        residual = np.inf
        for k_stage, e in enumerate(stages):
            last = k_stage == len(stages) - 1
            k = -c / e
            kt = np.ascontiguousarray(k.T)
            f, g = _log_sweep(k, kt, g_pot / e, log_marg)
            it += 1
            budget = max(budget_total - it, 0)
            if last:
                f, g, used, residual = _final_stage(k, kt, f, g, tol, budget)
            else:
                f, g, used, residual = _scaling_loop(k, kt, f, g, max(tol, ANNEAL_TOL),
                                                     min(ANNEAL_SWEEPS, budget))
            it += used
            if not (np.isfinite(f).all() and np.isfinite(g).all()):
                raise PrecisionFailure(f"non-finite dual potentials at eps={e:g} after {it} sweeps")
            g_pot = g * e
        return k, f, g, it, residual

    it = 0
    residual = np.inf
    if g0 is not None:
        k, f, g, it, residual = run([eps], np.asarray(g0, dtype=np.float64), 0,
                                    min(max_iter, WARM_SWEEPS))
    if residual > tol and it < max_iter:
        # cold start (or a warm start that stalled): epsilon scaling from scratch
        stages = _anneal_schedule(float(c.max() - c.min()), eps)
        k, f, g, it, residual = run(stages, c.min(axis=0), it, max_iter)

    if not (np.isfinite(f).all() and np.isfinite(g).all()):
        raise PrecisionFailure(f"non-finite dual potentials at eps={eps:g} after {it} sweeps")
    plan = np.exp(k + f[:, None] + g[None, :])
    residual = max(
        float(np.abs(plan.sum(1) - marg).max()), float(np.abs(plan.sum(0) - marg).max())
    )
    if not np.isfinite(residual) or residual > tol:
        raise PrecisionFailure(
            f"Sinkhorn did not reach tol={tol:g} at eps={eps:g} in {max_iter} sweeps "
            f"(residual {residual:.3e})"
        )
    return SinkhornResult(plan, f * eps, g * eps, it, residual)


def sinkhorn(cost, eps: float, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> np.ndarray:
    return sinkhorn_log(cost, eps, tol, max_iter).plan


def entropy_term(plan) -> float:
    """``sum P (log P - 1)`` with the 0 log 0 = 0 convention."""
    p = np.asarray(plan, dtype=np.float64)
    pos = p > 0
    return float((p[pos] * np.log(p[pos])).sum() - p.sum())


def entropic_ot_value(cost, plan, eps: float) -> float:
    c = np.asarray(cost, dtype=np.float64)
    p = np.asarray(plan, dtype=np.float64)
    return float((c * p).sum() + eps * entropy_term(p))


def marginal_residual(plan) -> float:
    p = np.asarray(plan, dtype=np.float64)
    n = p.shape[0]
    return float(max(np.abs(p.sum(1) - 1.0 / n).max(), np.abs(p.sum(0) - 1.0 / n).max()))
