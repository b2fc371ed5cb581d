"""Alternating minimization for the kernelized Gromov-Wasserstein coupling.

The quadratic objective ``sum_{iji'j'} P_ij P_i'j' G_ii' |y_j - y_j'|^2`` is
linearized through an auxiliary matrix ``A`` (m x d_y) over the low-rank
factor ``G ~ Phi Phi^T``; for fixed ``A`` the plan solves an entropic linear
OT problem, for fixed plan ``A = Phi^T P Y`` in closed form.

The linear term weights each data point by ``w_i / n``, i.e. its kernel row
sum integrated against the uniform data marginal. With that weighting twice
the variational value equals the quadratic objective exactly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import NoStableEpsilon, PrecisionFailure, ShapeMismatch, ValidationError
from .lowrank import GramFactor, eigen_factor
from .sinkhorn import DEFAULT_MAX_ITER, DEFAULT_TOL, entropy_term, sinkhorn_log

log = logging.getLogger(__name__)

DEFAULT_TAU = 1e-6
DEFAULT_MAX_OUTER = 500


@dataclass(frozen=True)
class EmbeddingSet:
    y: np.ndarray
    y_norm: np.ndarray = field(init=False)

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.float64)
        if y.ndim == 1:
            y = y[:, None]
        if not np.all(np.isfinite(y)):
            raise ValidationError("embeddings must be finite")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "y_norm", (y * y).sum(1))

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def dim(self) -> int:
        return self.y.shape[1]


@dataclass
class GwotResult:
    plan: np.ndarray
    aux: np.ndarray
    objective_trace: list
    final_epsilon: float
    # Algorithm-style value ||A_new||^2 + <C_old, P>, kept for reporting only
    unregularized_trace: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = True
    accepted_epsilons: list = field(default_factory=list)
    potentials: tuple | None = None
    # adaptive schedule only: the trial value that ended the search
    last_trial: float | None = None

    @property
    def objective(self) -> float:
        return self.objective_trace[-1] if self.objective_trace else float("nan")


def _as_emb(emb) -> EmbeddingSet:
    return emb if isinstance(emb, EmbeddingSet) else EmbeddingSet(emb)


def _check_shapes(factor: GramFactor, emb: EmbeddingSet, aux=None, plan=None):
    n, m = factor.phi.shape
    if emb.n != n:
        raise ShapeMismatch(f"factor has {n} rows but there are {emb.n} embeddings")
    if aux is not None and np.shape(aux) != (m, emb.dim):
        raise ShapeMismatch(f"auxiliary matrix has shape {np.shape(aux)}, expected {(m, emb.dim)}")
    if plan is not None and np.shape(plan) != (n, n):
        raise ShapeMismatch(f"plan has shape {np.shape(plan)}, expected {(n, n)}")


def marginal_weights(factor: GramFactor) -> np.ndarray:
    return factor.weights / factor.n


def build_cost(factor: GramFactor, aux, emb, sign: float = 1.0, out=None) -> np.ndarray:
    """``C = (w/n) |y|^2^T - 2 Phi A Y^T``; ``sign=-1`` flips the whole cost.

    ``out`` is an optional n x n buffer to write into.
    """
    emb = _as_emb(emb)
    aux = np.asarray(aux, dtype=np.float64)
    _check_shapes(factor, emb, aux)
    # one (n x (1+d)) @ ((1+d) x n) product, so only a single n x n array is allocated
    left = np.concatenate([marginal_weights(factor)[:, None], -2.0 * (factor.phi @ aux)], axis=1)
    right = np.concatenate([emb.y_norm[None, :], emb.y.T], axis=0)
    return np.matmul(sign * left, right, out=out)


def update_aux(factor: GramFactor, plan, emb) -> np.ndarray:
    emb = _as_emb(emb)
    _check_shapes(factor, emb, plan=plan)
    return factor.phi.T @ (np.asarray(plan, dtype=np.float64) @ emb.y)


def variational_objective(factor: GramFactor, plan, aux, emb) -> float:
    aux = np.asarray(aux, dtype=np.float64)
    cost = build_cost(factor, aux, emb)
    return float((aux * aux).sum() + (cost * np.asarray(plan)).sum())


def quadratic_objective(gram, emb, plan) -> float:
    """Exact ``sum P_ij P_i'j' G_ii' |y_j - y_j'|^2`` without factorization."""
    y = _as_emb(emb).y
    plan = np.asarray(plan, dtype=np.float64)
    diff = y[:, None, :] - y[None, :, :]
    dy = (diff * diff).sum(-1)
    return float((np.asarray(gram, dtype=np.float64) * (plan @ dy @ plan.T)).sum())


def _weighted_norm_term(factor, emb, plan) -> float:
    # <(w/n) |y|^2^T, P> without forming the n x n product
    return float(marginal_weights(factor) @ (plan @ emb.y_norm))


def _linear_term(factor, aux, emb, plan) -> float:
    """``<build_cost(factor, aux, emb), plan>`` in O(n^2) time and O(n) extra memory."""
    cross = float(((factor.phi @ aux) * (plan @ emb.y)).sum())
    return _weighted_norm_term(factor, emb, plan) - 2.0 * cross


def solve(factor: GramFactor, emb, eps: float, tau: float = DEFAULT_TAU, *, aux0=None,
          potentials=None, max_outer: int = DEFAULT_MAX_OUTER, sinkhorn_tol: float = DEFAULT_TOL,
          sinkhorn_max_iter: int = DEFAULT_MAX_ITER, sign: float = 1.0) -> GwotResult:
    """Alternate Sinkhorn plan updates and closed-form ``A`` updates.

    The recorded objective is the entropy-regularized variational value at
    ``(P_t, A_t)`` with ``A_t = Phi^T P_t Y``; the loop stops once it drops by
    less than ``tau``. ``sign=-1`` runs the sign-flipped variant used for plain
    Gromov-Wasserstein with squared-distance kernels.
    """
    emb = _as_emb(emb)
    if not eps > 0:
        raise ValidationError(f"epsilon must be positive, got {eps}")
    if not tau > 0:
        raise ValidationError(f"tau must be positive, got {tau}")
    n, m = factor.phi.shape
    aux = np.zeros((m, emb.dim)) if aux0 is None else np.array(aux0, dtype=np.float64)
    _check_shapes(factor, emb, aux)
    f0, g0 = potentials if potentials is not None else (None, None)

    cost_buf = np.empty((n, n))
    trace, raw = [], []
    prev = np.inf
    plan = None
    converged = False
    it = 0
    for it in range(1, max_outer + 1):
        cost = build_cost(factor, aux, emb, sign, out=cost_buf)
        res = sinkhorn_log(cost, eps, sinkhorn_tol, sinkhorn_max_iter, f0, g0)
        plan, f0, g0 = res.plan, res.f, res.g
        new_aux = update_aux(factor, plan, emb)
        sq = float((new_aux * new_aux).sum())
        if sign < 0:
            # half the negated squared-distance objective, plus entropy
            value = sq - _weighted_norm_term(factor, emb, plan) + eps * entropy_term(plan)
        else:
            value = sq + _linear_term(factor, new_aux, emb, plan) + eps * entropy_term(plan)
        raw.append(sq + float(np.vdot(cost, plan)))
        trace.append(value)
        aux = new_aux
        if prev - value < tau:
            converged = True
            break
        prev = value
    if not converged:
        log.warning("GWOT outer loop hit max_outer=%d at eps=%g", max_outer, eps)
    return GwotResult(plan, aux, trace, eps, raw, it, converged, [eps], (f0, g0))


def solve_adaptive(factor: GramFactor, emb, eps_init: float = 0.01, tau: float = DEFAULT_TAU,
                   delta: float | None = None, *, fail_below: float | None = None,
                   max_trials: int = 200, **solve_kw) -> GwotResult:
    """Shrink epsilon while the inner solve stays numerically stable.

    A successful solve at the trial value is accepted (its ``A`` and dual
    potentials warm-start the next trial) and the trial value is halved. A
    failed solve moves the trial value to the midpoint between the last
    stable value and the nearest known failing value. Stops once the trial
    value is within ``delta`` of the last stable one and returns the last
    accepted solve.

    ``fail_below`` is a test hook: any trial strictly below it fails as if
    the inner solver had hit its precision limit.
    """
    if not eps_init > 0:
        raise ValidationError(f"initial epsilon must be positive, got {eps_init}")
    delta = eps_init / 1024 if delta is None else delta
    if not delta > 0:
        raise ValidationError(f"delta must be positive, got {delta}")

    def attempt(eps, warm):
        if fail_below is not None and eps < fail_below:
            raise PrecisionFailure(f"injected precision failure at eps={eps:g}")
        aux0, pots = (None, None) if warm is None else (warm.aux, warm.potentials)
        return solve(factor, emb, eps, tau, aux0=aux0, potentials=pots, **solve_kw)

    try:
        best = attempt(eps_init, None)
    except PrecisionFailure as exc:
        raise NoStableEpsilon(f"initial epsilon {eps_init:g} is already unstable: {exc}") from exc
    stable = eps_init
    accepted = [eps_init]
    failed = None
    current = stable / 2
    for _ in range(max_trials):
        if abs(current - stable) < delta:
            break
        try:
            res = attempt(current, best)
        except PrecisionFailure as exc:
            log.info("eps=%g unstable (%s)", current, exc)
            failed = current
            current = 0.5 * (stable + current)
            continue
        best, stable = res, current
        accepted.append(current)
        log.info("eps=%g accepted after %d outer iterations", current, res.iterations)
        current = current / 2 if failed is None else 0.5 * (current + failed)
    best.final_epsilon = stable
    best.accepted_epsilons = accepted
    best.last_trial = current
    return best


def sign_flipped_solve(dist_sq_gram, emb, eps: float, tau: float = DEFAULT_TAU, **solve_kw) -> GwotResult:
    """Plain squared-loss Gromov-Wasserstein through the sign-flipped cost.

    ``dist_sq_gram`` holds squared distances ``|x_i - x_i'|^2``; it is factored
    with the clipped eigen-factor and the loop runs on
    ``C = -(w/n) |y|^2^T + 2 Phi A Y^T`` with the usual ``A = Phi^T P Y``.
    """
    factor = eigen_factor(dist_sq_gram, eta=1.0)
    return solve(factor, emb, eps, tau, sign=-1.0, **solve_kw)
