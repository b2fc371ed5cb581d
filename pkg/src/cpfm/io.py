"""CSV/JSON persistence, target draws and synthetic datasets."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, IoError, ParseError, ShapeMismatch, ValidationError
from .gwot import EmbeddingSet
from .kernels import Dataset
from .config import TARGETS
from .lowrank import GramFactor

FLOAT_FMT = ".17g"


def _fmt(v) -> str:
    return format(float(v), FLOAT_FMT)


def _open_read(path):
    try:
        return open(path, newline="")
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc


def _float(cell, path, line, col) -> float:
    try:
        v = float(cell)
    except ValueError:
        raise ParseError(f"not a number: {cell!r}", path, line, col) from None
    return v


# -- matrices ---------------------------------------------------------------

def save_matrix(path, matrix) -> None:
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim == 1:
        m = m[:, None]
    if m.ndim != 2:
        raise ShapeMismatch(f"expected a matrix, got {m.ndim} dimensions")
    with open(path, "w", newline="") as fh:
        for row in m:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def load_matrix(path) -> np.ndarray:
    rows = []
    with _open_read(path) as fh:
        for line, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            vals = [_float(c, path, line, col) for col, c in enumerate(row, start=1)]
            if rows and len(vals) != len(rows[0]):
                raise ParseError(f"expected {len(rows[0])} columns, found {len(vals)}", path, line, len(vals))
            rows.append(vals)
    if not rows:
        raise ParseError("empty matrix file", path, 1, 1)
    return np.array(rows, dtype=np.float64)


# -- datasets ---------------------------------------------------------------

def save_dataset(path, ds: Dataset) -> None:
    header = [f"f{k}" for k in range(ds.dim)]
    if ds.labels is not None:
        header.append("label")
    if ds.properties is not None:
        header.append("property")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(ds.n):
            row = [_fmt(v) for v in ds.features[i]]
            if ds.labels is not None:
                row.append(str(int(ds.labels[i])))
            if ds.properties is not None:
                row.append(_fmt(ds.properties[i]))
            w.writerow(row)


def load_dataset(path) -> Dataset:
    """Read ``f0..f{d-1}`` plus optional ``label`` and ``property`` columns.

    Missing labels are not an error here; kernels that need them complain.
    """
    with _open_read(path) as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError("empty dataset file", path, 1, 1) from None
        feat_cols = []
        for col, name in enumerate(header):
            if name.startswith("f") and name[1:].isdigit():
                feat_cols.append((int(name[1:]), col))
            elif name not in ("label", "property"):
                raise ParseError(f"unknown column {name!r}", path, 1, col + 1)
        feat_cols.sort()
        if [k for k, _ in feat_cols] != list(range(len(feat_cols))) or not feat_cols:
            raise ParseError("feature columns must be f0..f{d-1}", path, 1, 1)
        lab_col = header.index("label") if "label" in header else None
        prop_col = header.index("property") if "property" in header else None
        feats, labels, props = [], [], []
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} columns, found {len(row)}", path, line, len(row))
            feats.append([_float(row[c], path, line, c + 1) for _, c in feat_cols])
            if lab_col is not None:
                cell = row[lab_col].strip()
                try:
                    labels.append(int(cell))
                except ValueError:
                    raise ParseError(f"label is not an integer: {cell!r}", path, line, lab_col + 1) from None
            if prop_col is not None:
                props.append(_float(row[prop_col], path, line, prop_col + 1))
    if not feats:
        raise ParseError("dataset has no rows", path, 2, 1)
    return Dataset(
        np.array(feats),
        np.array(labels) if lab_col is not None else None,
        np.array(props) if prop_col is not None else None,
    )


def load_fingerprints(path) -> np.ndarray:
    with _open_read(path) as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError("empty fingerprint file", path, 1, 1) from None
        for col, name in enumerate(header):
            if name != f"b{col}":
                raise ParseError(f"expected column b{col}, found {name!r}", path, 1, col + 1)
        rows = []
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} columns, found {len(row)}", path, line, len(row))
            bits = []
            for col, cell in enumerate(row, start=1):
                if cell.strip() not in ("0", "1"):
                    raise ParseError(f"fingerprint bits must be 0 or 1, got {cell!r}", path, line, col)
                bits.append(int(cell))
            rows.append(bits)
    return np.array(rows, dtype=np.int64).reshape(len(rows), len(header))


def save_fingerprints(path, bits) -> None:
    bits = np.asarray(bits, dtype=np.int64)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"b{k}" for k in range(bits.shape[1])])
        w.writerows(bits.tolist())


# -- factors ----------------------------------------------------------------

def save_factor(directory, factor: GramFactor) -> None:
    os.makedirs(directory, exist_ok=True)
    save_matrix(os.path.join(directory, "phi.csv"), factor.phi if factor.rank else np.zeros((factor.n, 1)))
    save_matrix(os.path.join(directory, "weights.csv"), factor.weights)
    meta = {"m": factor.rank, "residual_trace": factor.residual_trace,
            "eta": factor.eta, "clipped_mass": factor.clipped_mass, "n": factor.n}
    with open(os.path.join(directory, "factor.json"), "w") as fh:
        json.dump(meta, fh, indent=2)
        fh.write("\n")


def load_factor(directory) -> GramFactor:
    meta_path = os.path.join(directory, "factor.json")
    with _open_read(meta_path) as fh:
        try:
            meta = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(exc.msg, meta_path, exc.lineno, exc.colno) from exc
    phi = load_matrix(os.path.join(directory, "phi.csv"))
    weights = load_matrix(os.path.join(directory, "weights.csv"))[:, 0]
    phi = phi[:, : meta["m"]]
    return GramFactor(phi, weights, int(meta["m"]), float(meta["residual_trace"]),
                      float(meta["eta"]), float(meta.get("clipped_mass", 0.0)))


# -- targets and synthetic data ----------------------------------------------

def draw_target(dist: str, n: int, d_y: int, seed: int) -> EmbeddingSet:
    if n < 1:
        raise ValidationError(f"need n >= 1 target points, got {n}")
    if dist not in TARGETS:
        raise ValidationError(f"unknown target distribution {dist!r}, expected one of {TARGETS}")
    rng = np.random.default_rng(seed)
    if dist == "gaussian":
        y = rng.standard_normal((n, d_y))
    elif dist == "uniform_square":
        y = rng.uniform(-1.0, 1.0, size=(n, d_y))
    elif dist == "unit_circle":
        if d_y != 2:
            raise DimensionError(f"unit_circle lives in 2 dimensions, got d_y={d_y}")
        theta = rng.uniform(0.0, 2 * np.pi, size=n)
        y = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    return EmbeddingSet(y)


@dataclass(frozen=True)
class SyntheticSpec:
    """Labeled Gaussian mixture; ``kind="molecule"`` adds fingerprints and properties.

    Class centres sit on scaled coordinate axes so every pair of centres is
    ``separation * sigma`` apart.
    """

    n: int = 512
    d_x: int = 10
    n_classes: int = 2
    separation: float = 6.0
    sigma: float = 1.0
    seed: int = 0
    kind: str = "mixture"
    n_bits: int = 32

    def __post_init__(self):
        if self.n < 1 or self.d_x < 1 or self.n_classes < 1:
            raise ValidationError("n, d_x and n_classes must be >= 1")
        if self.n_classes > self.d_x and self.n_classes > 2:
            raise ValidationError("axis-aligned centres need n_classes <= d_x")
        if self.kind not in ("mixture", "molecule"):
            raise ValidationError(f"unknown synthetic kind {self.kind!r}")


def class_centres(spec: SyntheticSpec) -> np.ndarray:
    k, d = spec.n_classes, spec.d_x
    c = np.zeros((k, d))
    if k == 2:
        c[0, 0], c[1, 0] = -0.5 * spec.separation * spec.sigma, 0.5 * spec.separation * spec.sigma
    elif k > 2:
        c[np.arange(k), np.arange(k)] = spec.separation * spec.sigma / np.sqrt(2.0)
    return c


def make_synthetic(spec: SyntheticSpec):
    """Returns a Dataset, plus a fingerprint matrix when ``kind="molecule"``."""
    rng = np.random.default_rng(spec.seed)
    labels = np.arange(spec.n) % spec.n_classes
    rng.shuffle(labels)
    x = class_centres(spec)[labels] + spec.sigma * rng.standard_normal((spec.n, spec.d_x))
    if spec.kind == "mixture":
        return Dataset(x, labels)
    bits = (rng.random((spec.n, spec.n_bits)) < 0.3).astype(np.int64)
    empty = bits.sum(1) == 0
    bits[empty, rng.integers(spec.n_bits, size=int(empty.sum()))] = 1
    coef = rng.standard_normal(spec.n_bits) / np.sqrt(spec.n_bits)
    props = bits @ coef + 0.1 * rng.standard_normal(spec.n)
    return Dataset(x, labels, props), bits
