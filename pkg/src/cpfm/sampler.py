"""Fixed-step Euler inference for both conditional directions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch, ValidationError

DEFAULT_STEPS = 100


@dataclass(frozen=True)
class SampleRequest:
    """``condition`` is an x when ``role == 1`` (sample y) and a y when ``role == 0``."""

    condition: np.ndarray
    role: int
    steps: int = DEFAULT_STEPS
    seed: int = 0

    def __post_init__(self):
        if self.role not in (0, 1):
            raise ValidationError(f"role flag must be 0 or 1, got {self.role}")
        if self.steps < 1:
            raise ValidationError(f"steps must be >= 1, got {self.steps}")


def _dims(net, role):
    # (state dim, condition dim)
    return (net.d_x, net.d_y) if role == 0 else (net.d_y, net.d_x)


def base_draw(dim: int, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal(dim)


def euler_integrate(net, cond, role: int, steps: int, z0) -> np.ndarray:
    """Integrate ``dz/dt = u(z, cond, t, role)`` from t=0 to 1 in ``steps`` Euler steps.

    ``cond`` and ``z0`` are batched (one row per sample).
    """
    z = np.array(z0, dtype=np.float64)
    dt = 1.0 / steps
    for k in range(steps):
        t = np.full(z.shape[0], k / steps)
        if role == 0:
            u = net.forward(z, cond, t, 0)
        else:
            u = net.forward(cond, z, t, 1)
        z = z + dt * u
    return z


def euler_sample(net, req: SampleRequest) -> np.ndarray:
    dim, cdim = _dims(net, req.role)
    cond = np.asarray(req.condition, dtype=np.float64).ravel()
    if cond.shape[0] != cdim:
        raise ShapeMismatch(f"condition has dim {cond.shape[0]}, role {req.role} expects {cdim}")
    z0 = base_draw(dim, req.seed)[None, :]
    return euler_integrate(net, cond[None, :], req.role, req.steps, z0)[0]


def euler_sample_batch(net, conditions, role: int, steps: int = DEFAULT_STEPS, seeds=None) -> np.ndarray:
    """Vectorized ``euler_sample``; row ``i`` equals the single call with ``seeds[i]``."""
    dim, cdim = _dims(net, role)
    cond = np.atleast_2d(np.asarray(conditions, dtype=np.float64))
    if cond.shape[1] != cdim:
        raise ShapeMismatch(f"conditions have dim {cond.shape[1]}, role {role} expects {cdim}")
    if steps < 1:
        raise ValidationError(f"steps must be >= 1, got {steps}")
    seeds = np.arange(cond.shape[0]) if seeds is None else np.asarray(seeds)
    z0 = np.stack([base_draw(dim, int(s)) for s in seeds]) if len(seeds) else np.zeros((0, dim))
    return euler_integrate(net, cond, role, steps, z0)


def grid_conditions(lo: float = -1.5, hi: float = 1.5, k: int = 10) -> np.ndarray:
    """Row-major ``K x K`` grid ``(s_u, s_v)``, ``s_u = lo + u (hi - lo) / (K - 1)``."""
    if k < 2:
        raise ValidationError(f"grid needs K >= 2, got {k}")
    s = lo + np.arange(k) * (hi - lo) / (k - 1)
    u, v = np.meshgrid(s, s, indexing="ij")
    return np.stack([u.ravel(), v.ravel()], axis=1)


def grid_generate(net, lo: float = -1.5, hi: float = 1.5, k: int = 10,
                  steps: int = DEFAULT_STEPS, seed: int = 0) -> np.ndarray:
    """Decode every grid point as an embedding (role 0); seeds are ``seed + index``."""
    if net.d_y != 2:
        raise ShapeMismatch(f"grid mode needs a 2-D embedding space, net has d_y={net.d_y}")
    cond = grid_conditions(lo, hi, k)
    return euler_sample_batch(net, cond, 0, steps, seed + np.arange(len(cond)))
