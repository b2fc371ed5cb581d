"""Dual-conditional flow matching: schedules, two-headed drift net, training."""

from __future__ import annotations

import logging
import math
import struct
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DomainError, ParseError, ShapeMismatch, ValidationError

log = logging.getLogger(__name__)


# ----------------------------------------------------------------------------
# interpolant schedules


@dataclass(frozen=True)
class InterpolantSchedule:
    name: str
    a: Callable
    b: Callable
    a_dot: Callable
    b_dot: Callable


LINEAR = InterpolantSchedule(
    "linear",
    a=lambda t: 1.0 - t,
    b=lambda t: t,
    a_dot=lambda t: -np.ones_like(t),
    b_dot=lambda t: np.ones_like(t),
)

TRIG = InterpolantSchedule(
    "trig",
    a=lambda t: np.cos(0.5 * np.pi * t),
    b=lambda t: np.sin(0.5 * np.pi * t),
    a_dot=lambda t: -0.5 * np.pi * np.sin(0.5 * np.pi * t),
    b_dot=lambda t: 0.5 * np.pi * np.cos(0.5 * np.pi * t),
)

SCHEDULES = {"linear": LINEAR, "trig": TRIG}
SCHEDULE_IDS = {"linear": 0, "trig": 1}


def get_schedule(name: str) -> InterpolantSchedule:
    try:
        return SCHEDULES[name]
    except KeyError:
        raise ValidationError(f"unknown schedule {name!r}; choose from {sorted(SCHEDULES)}") from None


def interpolate(schedule: InterpolantSchedule, z0, z1, t):
    """Return ``(a_t z0 + b_t z1, a_dot_t z0 + b_dot_t z1)``.

    ``t`` may be a scalar or one value per row of batched ``z0``/``z1``.
    """
    z0 = np.asarray(z0, dtype=np.float64)
    z1 = np.asarray(z1, dtype=np.float64)
    if z0.shape != z1.shape:
        raise ShapeMismatch(f"endpoint shapes differ: {z0.shape} vs {z1.shape}")
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0) or np.any(t > 1) or not np.all(np.isfinite(t)):
        raise DomainError("interpolation time must lie in [0, 1]")
    tt = t[..., None] if t.ndim == 1 and z0.ndim == 2 else t
    zt = schedule.a(tt) * z0 + schedule.b(tt) * z1
    vt = schedule.a_dot(tt) * z0 + schedule.b_dot(tt) * z1
    return zt, vt


# ----------------------------------------------------------------------------
# drift network

TIME_FREQS_MAX = 100.0


def time_embedding(t, dim: int) -> np.ndarray:
    """Sinusoidal features ``[sin(w_k t), cos(w_k t)]`` with geometric w_k."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.geomspace(1.0, TIME_FREQS_MAX, half)
    arg = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(arg), np.cos(arg)], axis=1)


def _silu(z):
    s = 1.0 / (1.0 + np.exp(-z))
    return z * s, s


@dataclass
class DriftNet:
    """Shared dense trunk with an x-head (role 0) and a y-head (role 1).

    Trunk input is ``[x_state, y_state, time features, role embedding]``.
    Parameters live in ``params`` in declaration order; that order is also
    the checkpoint layout.
    """

    d_x: int
    d_y: int
    hidden: tuple = (256, 256, 256)
    time_dim: int = 32
    role_dim: int = 8
    params: dict = field(default_factory=dict)

    @classmethod
    def create(cls, d_x: int, d_y: int, hidden=(256, 256, 256), time_dim: int = 32,
               role_dim: int = 8, seed: int = 0) -> "DriftNet":
        net = cls(d_x, d_y, tuple(int(h) for h in hidden), time_dim, role_dim)
        rng = np.random.default_rng(seed)
        p = {}
        for name, shape in net.param_shapes():
            if name.startswith("b"):
                p[name] = np.zeros(shape)
            elif name == "role":
                p[name] = rng.standard_normal(shape)
            else:
                p[name] = rng.standard_normal(shape) / math.sqrt(shape[0])
        net.params = p
        return net

    @property
    def in_dim(self) -> int:
        return self.d_x + self.d_y + self.time_dim + self.role_dim

    def param_shapes(self):
        shapes = [("role", (2, self.role_dim))]
        prev = self.in_dim
        for i, h in enumerate(self.hidden):
            shapes += [(f"W{i}", (prev, h)), (f"b{i}", (h,))]
            prev = h
        shapes += [("Wx", (prev, self.d_x)), ("bx", (self.d_x,)),
                   ("Wy", (prev, self.d_y)), ("by", (self.d_y,))]
        return shapes

    def n_params(self) -> int:
        return sum(int(np.prod(s)) for _, s in self.param_shapes())

    def zeros_like(self) -> dict:
        return {k: np.zeros_like(v) for k, v in self.params.items()}

    def flat(self) -> np.ndarray:
        return np.concatenate([self.params[k].ravel() for k, _ in self.param_shapes()])

    def set_flat(self, vec) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        off = 0
        for name, shape in self.param_shapes():
            size = int(np.prod(shape))
            self.params[name] = vec[off:off + size].reshape(shape).copy()
            off += size

    def copy(self) -> "DriftNet":
        return DriftNet(self.d_x, self.d_y, self.hidden, self.time_dim, self.role_dim,
                        {k: v.copy() for k, v in self.params.items()})

    # -- forward / backward ---------------------------------------------------

    def _inputs(self, x_state, y_state, t, role: int):
        x_state = np.atleast_2d(np.asarray(x_state, dtype=np.float64))
        y_state = np.atleast_2d(np.asarray(y_state, dtype=np.float64))
        if x_state.shape[1] != self.d_x or y_state.shape[1] != self.d_y:
            raise ShapeMismatch(
                f"expected x-state dim {self.d_x} and y-state dim {self.d_y}, "
                f"got {x_state.shape[1]} and {y_state.shape[1]}"
            )
        bsz = x_state.shape[0]
        if y_state.shape[0] != bsz:
            raise ShapeMismatch("x-state and y-state batch sizes differ")
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (bsz,))
        role_feat = np.broadcast_to(self.params["role"][role], (bsz, self.role_dim))
        return np.concatenate([x_state, y_state, time_embedding(t, self.time_dim), role_feat], axis=1)

    def _trunk(self, h):
        cache = [h]
        for i in range(len(self.hidden)):
            z = h @ self.params[f"W{i}"] + self.params[f"b{i}"]
            h, s = _silu(z)
            cache.append((z, s))
            cache.append(h)
        return h, cache

    def forward(self, x_state, y_state, t, role: int) -> np.ndarray:
        """Drift for role 0 (x-space, from ``head_x``) or role 1 (y-space)."""
        if role not in (0, 1):
            raise ValidationError(f"role flag must be 0 or 1, got {role}")
        single = np.ndim(x_state) == 1
        h, _ = self._trunk(self._inputs(x_state, y_state, t, role))
        head = "x" if role == 0 else "y"
        out = h @ self.params[f"W{head}"] + self.params[f"b{head}"]
        return out[0] if single else out

    def _loss_grad_role(self, x_state, y_state, t, role, target, scale, grads):
        inp = self._inputs(x_state, y_state, t, role)
        h, cache = self._trunk(inp)
        head = "x" if role == 0 else "y"
        out = h @ self.params[f"W{head}"] + self.params[f"b{head}"]
        res = out - target
        per_sample = (res * res).sum(1)
        if grads is None:
            return per_sample
        d_out = 2.0 * scale * res
        grads[f"W{head}"] += h.T @ d_out
        grads[f"b{head}"] += d_out.sum(0)
        dh = d_out @ self.params[f"W{head}"].T
        for i in reversed(range(len(self.hidden))):
            z, s = cache[2 * i + 1]
            h_in = cache[2 * i]
            dz = dh * (s * (1.0 + z * (1.0 - s)))
            grads[f"W{i}"] += h_in.T @ dz
            grads[f"b{i}"] += dz.sum(0)
            dh = dz @ self.params[f"W{i}"].T
        grads["role"][role] += dh[:, -self.role_dim:].sum(0)
        return per_sample

    def loss_and_grad(self, batch: "RoleBatch", with_grad: bool = True):
        """Mean over the batch of per-sample squared residual norms.

        Each role's sub-batch goes only through its own head, so the muted
        head receives an exactly zero gradient.
        """
        bsz = len(batch)
        grads = self.zeros_like() if with_grad else None
        losses = np.zeros(bsz)
        for role in (0, 1):
            idx = np.flatnonzero(batch.role == role)
            if idx.size == 0:
                continue
            losses[idx] = self._loss_grad_role(
                batch.x_state[idx], batch.y_state[idx], batch.t[idx], role,
                (batch.target_x if role == 0 else batch.target_y)[idx], 1.0 / bsz, grads,
            )
        return float(losses.mean()), grads, losses


@dataclass
class RoleBatch:
    """Role-tagged training tuples.

    Role 0 rows hold ``(x(t), y(1), t, v_x)``; role 1 rows hold
    ``(x(1), y(t), t, v_y)``. Both velocity arrays are kept full-length and
    each role reads its own.
    """

    x_state: np.ndarray
    y_state: np.ndarray
    t: np.ndarray
    role: np.ndarray
    target_x: np.ndarray
    target_y: np.ndarray

    def __len__(self):
        return self.x_state.shape[0]


def forward(net: DriftNet, x_state, y_state, t, r: int) -> np.ndarray:
    return net.forward(x_state, y_state, t, r)


def loss_x(net: DriftNet, t, x_t, y1, v_x) -> float:
    res = np.atleast_2d(net.forward(x_t, y1, t, 0)) - np.atleast_2d(v_x)
    return float((res * res).sum(1).sum()) if np.ndim(x_t) > 1 else float((res * res).sum())


def loss_y(net: DriftNet, t, x1, y_t, v_y) -> float:
    res = np.atleast_2d(net.forward(x1, y_t, t, 1)) - np.atleast_2d(v_y)
    return float((res * res).sum(1).sum()) if np.ndim(y_t) > 1 else float((res * res).sum())


def grad(net: DriftNet, batch: RoleBatch) -> dict:
    return net.loss_and_grad(batch)[1]


def make_batch(schedule: InterpolantSchedule, x1, y1, role, t, x0, y0) -> RoleBatch:
    """Interpolate the active side of each pair; the other side stays at its endpoint."""
    x1 = np.atleast_2d(x1)
    y1 = np.atleast_2d(y1)
    role = np.asarray(role, dtype=np.int64)
    xt, vx = interpolate(schedule, x0, x1, t)
    yt, vy = interpolate(schedule, y0, y1, t)
    is_x = (role == 0)[:, None]
    x_state = np.where(is_x, xt, x1)
    y_state = np.where(is_x, y1, yt)
    return RoleBatch(x_state, y_state, np.asarray(t, dtype=np.float64), role, vx, vy)


# ----------------------------------------------------------------------------
# optimizer and training


@dataclass
class TrainConfig:
    alpha: float = 0.5
    lr: float = 1e-4
    weight_decay: float = 1e-4
    betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    batch: int = 128
    epochs: int = 200
    steps_per_epoch: int | None = None
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValidationError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not self.lr > 0:
            raise ValidationError(f"learning rate must be positive, got {self.lr}")
        if self.batch < 1 or self.epochs < 0:
            raise ValidationError("batch must be >= 1 and epochs >= 0")


@dataclass
class AdamW:
    m: dict
    v: dict
    step: int = 0

    @classmethod
    def for_net(cls, net: DriftNet) -> "AdamW":
        return cls(net.zeros_like(), net.zeros_like(), 0)

    def update(self, net: DriftNet, grads: dict, cfg: TrainConfig) -> None:
        b1, b2 = cfg.betas
        self.step += 1
        c1 = 1.0 - b1**self.step
        c2 = 1.0 - b2**self.step
        for k, p in net.params.items():
            g = grads[k]
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            p *= 1.0 - cfg.lr * cfg.weight_decay
            p -= cfg.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + cfg.adam_eps)


@dataclass
class TrainState:
    net: DriftNet
    adamw: AdamW
    config: TrainConfig
    schedule: str = "linear"
    history: list = field(default_factory=list)

    @classmethod
    def create(cls, net: DriftNet, config: TrainConfig, schedule: str = "linear") -> "TrainState":
        return cls(net, AdamW.for_net(net), config, schedule)


def train(state: TrainState, sampler, x_data, y_data, *, callback=None) -> TrainState:
    """Run ``epochs`` passes of stochastic flow matching on plan-sampled pairs.

    ``sampler.sample_batch(k, x_data)`` yields ``(x1, j)`` with ``y1 = y_data[j]``.
    Each element draws role ``r ~ Bernoulli(alpha)``, ``t ~ U[0, 1]`` and a
    standard normal start point for the active side. Deterministic given
    ``config.seed`` and the sampler seed.
    """
    cfg = state.config
    net = state.net
    schedule = get_schedule(state.schedule)
    y_data = np.atleast_2d(np.asarray(y_data, dtype=np.float64))
    if y_data.shape[1] != net.d_y:
        raise ShapeMismatch(f"embeddings have dim {y_data.shape[1]}, net expects {net.d_y}")
    rng = np.random.default_rng([cfg.seed, state.adamw.step])
    n_pairs = sampler.n
    steps = cfg.steps_per_epoch or max(1, math.ceil(n_pairs / cfg.batch))
    t_start = time.perf_counter()
    for epoch in range(cfg.epochs):
        sums = np.zeros(2)
        counts = np.zeros(2)
        for _ in range(steps):
            x1, j = sampler.sample_batch(cfg.batch, x_data)
            y1 = y_data[j]
            role = (rng.random(cfg.batch) < cfg.alpha).astype(np.int64)
            t = rng.random(cfg.batch)
            x0 = rng.standard_normal(x1.shape)
            y0 = rng.standard_normal(y1.shape)
            batch = make_batch(schedule, x1, y1, role, t, x0, y0)
            _, grads, losses = net.loss_and_grad(batch)
            state.adamw.update(net, grads, cfg)
            for r in (0, 1):
                sel = role == r
                sums[r] += losses[sel].sum()
                counts[r] += sel.sum()
        with np.errstate(invalid="ignore", divide="ignore"):
            means = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
        row = (len(state.history), float(means[0]), float(means[1]),
               time.perf_counter() - t_start)
        state.history.append(row)
        log.info("epoch %d loss_x %.4f loss_y %.4f", *row[:3])
        if callback is not None:
            callback(state, row)
    return state


# ----------------------------------------------------------------------------
# checkpoint format

MAGIC = b"CPFM"
FORMAT_VERSION = 1


def save_checkpoint(path, net: DriftNet, schedule: str = "linear") -> None:
    """Write magic, version, architecture descriptor, then float64 LE params.

    Descriptor: uint32 ``d_x, d_y, time_dim, role_dim, schedule_id, n_hidden``
    followed by ``n_hidden`` uint32 layer widths.
    """
    head = MAGIC + struct.pack("<I", FORMAT_VERSION)
    desc = [net.d_x, net.d_y, net.time_dim, net.role_dim, SCHEDULE_IDS[schedule], len(net.hidden)]
    desc += list(net.hidden)
    head += struct.pack(f"<{len(desc)}I", *desc)
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(net.flat().astype("<f8").tobytes())


def load_checkpoint(path):
    """Return ``(net, schedule_name)``."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise ParseError("not a checkpoint (bad magic)", path=path)
    if len(data) < 32:
        raise ParseError("truncated checkpoint header", path=path)
    (version,) = struct.unpack_from("<I", data, 4)
    if version != FORMAT_VERSION:
        raise ParseError(f"unsupported checkpoint version {version}", path=path)
    d_x, d_y, time_dim, role_dim, sched_id, n_hidden = struct.unpack_from("<6I", data, 8)
    off = 8 + 24
    hidden = struct.unpack_from(f"<{n_hidden}I", data, off)
    off += 4 * n_hidden
    names = {v: k for k, v in SCHEDULE_IDS.items()}
    if sched_id not in names:
        raise ParseError(f"unknown schedule id {sched_id}", path=path)
    net = DriftNet(d_x, d_y, tuple(hidden), time_dim, role_dim)
    count = net.n_params()
    vec = np.frombuffer(data, dtype="<f8", count=-1, offset=off)
    if vec.size != count:
        raise ParseError(f"expected {count} parameters, found {vec.size}", path=path)
    net.set_flat(vec.astype(np.float64))
    return net, names[sched_id]
