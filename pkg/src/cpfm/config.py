"""Run configuration shared by the CLI stages."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields

from .errors import ConfigError, IoError, ParseError

TARGETS = ("gaussian", "uniform_square", "unit_circle")


@dataclass
class RunConfig:
    epsilon_init: float = 0.01
    tau: float = 1e-6
    delta: float | None = None  # None means epsilon_init / 1024
    eta: float = 0.95
    alpha: float = 0.5
    mixture_weight: float = 0.5
    knn_k: int = 5
    steps_T: int = 100
    lr: float = 1e-4
    epochs: int = 200
    batch: int = 128
    seed: int = 0
    max_ot_points: int = 10_000
    target_dist: str = "gaussian"
    d_y: int = 2
    deterministic: bool = True
    # desk-scale extras, not hyperparameters of the method itself
    kernel: str = "image"
    hidden: tuple = (256, 256, 256)
    steps_per_epoch: int | None = None
    schedule: str = "linear"
    weight_decay: float = 1e-4

    def __post_init__(self):
        if self.delta is None:
            self.delta = self.epsilon_init / 1024 if _is_num(self.epsilon_init) else None
        self.hidden = tuple(self.hidden)
        self.validate()

    def validate(self) -> None:
        for name in ("epsilon_init", "tau", "delta", "lr"):
            v = getattr(self, name)
            if not _is_num(v) or not v > 0:
                raise ConfigError(name, f"must be a positive number, got {v!r}")
        for name in ("alpha", "mixture_weight"):
            v = getattr(self, name)
            if not _is_num(v) or not 0 < v < 1:
                raise ConfigError(name, f"must lie in (0, 1), got {v!r}")
        if not _is_num(self.eta) or not 0 < self.eta <= 1:
            raise ConfigError("eta", f"must lie in (0, 1], got {self.eta!r}")
        if not _is_num(self.weight_decay) or self.weight_decay < 0:
            raise ConfigError("weight_decay", f"must be >= 0, got {self.weight_decay!r}")
        for name in ("knn_k", "steps_T", "epochs", "batch", "max_ot_points", "d_y"):
            v = getattr(self, name)
            if not _is_int(v) or v < 1:
                raise ConfigError(name, f"must be an integer >= 1, got {v!r}")
        if not _is_int(self.seed) or self.seed < 0:
            raise ConfigError("seed", f"must be a nonnegative integer, got {self.seed!r}")
        if self.steps_per_epoch is not None and (not _is_int(self.steps_per_epoch) or self.steps_per_epoch < 1):
            raise ConfigError("steps_per_epoch", f"must be an integer >= 1, got {self.steps_per_epoch!r}")
        if self.target_dist not in TARGETS:
            raise ConfigError("target_dist", f"must be one of {TARGETS}, got {self.target_dist!r}")
        if self.target_dist == "unit_circle" and self.d_y != 2:
            raise ConfigError("d_y", "unit_circle target needs d_y = 2")
        if not isinstance(self.deterministic, bool):
            raise ConfigError("deterministic", f"must be a boolean, got {self.deterministic!r}")
        if not self.hidden or not all(_is_int(h) and h >= 1 for h in self.hidden):
            raise ConfigError("hidden", f"must be a nonempty list of positive widths, got {self.hidden!r}")
        if self.schedule not in ("linear", "trig"):
            raise ConfigError("schedule", f"unknown schedule {self.schedule!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and v == v


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def config_from_dict(d: dict) -> RunConfig:
    known = {f.name for f in fields(RunConfig)}
    for key in d:
        if key not in known:
            raise ConfigError(key, "unknown field")
    return RunConfig(**d)


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read config {path}: {exc}") from exc
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, path, exc.lineno, exc.colno) from exc
    if not isinstance(d, dict):
        raise ParseError("config must be a JSON object", path, 1, 1)
    return config_from_dict(d)


def save_config(path, cfg: RunConfig) -> None:
    with open(path, "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
