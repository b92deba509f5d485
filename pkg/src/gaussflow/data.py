"""Datasets: toy generators, CSV ingestion, normalization, splits, stretches, dequantization.

A :class:`Dataset` is immutable by convention: every operation returns a new one.
"""

import csv
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import i0e, logsumexp

from .errors import ContractError, ParseError

STD_FLOOR = 1e-8
TOY_NAMES = ("two_gaussians", "ring", "checkerboard", "spiral")


@dataclass(frozen=True)
class Dataset:
    data: np.ndarray
    splits: dict = field(default_factory=dict)  # name -> row indices
    normalization: dict | None = None  # {"mean": array, "std": array}
    transform: dict | None = None  # {"kind": "cubic" | "affine", ...}
    dequantization: dict | None = None  # {"levels": int, "offset": nats}
    log_density: object = None  # callable on rows in the current space, or None
    original: np.ndarray | None = None  # pre-stretch values
    meta: dict = field(default_factory=dict)

    @property
    def dim(self):
        return self.data.shape[1]

    def __len__(self):
        return self.data.shape[0]

    def rows(self, name):
        if not self.splits:
            if name == "train":
                return np.arange(len(self))
            raise ContractError(f"dataset has no {name!r} split")
        if name not in self.splits:
            raise ContractError(f"dataset has no {name!r} split")
        return self.splits[name]

    def get(self, name):
        return self.data[self.rows(name)]

    @property
    def train(self):
        return self.get("train")

    @property
    def val(self):
        return self.get("val")

    @property
    def test(self):
        return self.get("test")

    def manifest(self):
        def arr(a):
            return None if a is None else np.asarray(a).tolist()

        return {
            "rows": len(self),
            "dim": self.dim,
            "splits": {k: arr(v) for k, v in self.splits.items()},
            "normalization": None if self.normalization is None else {
                "mean": arr(self.normalization["mean"]), "std": arr(self.normalization["std"])},
            "transform": None if self.transform is None else dict(self.transform),
            "dequantization": self.dequantization,
            "meta": self.meta,
        }


def save_manifest(ds, path):
    with open(path, "w") as fh:
        json.dump(ds.manifest(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_manifest(path):
    with open(path) as fh:
        return json.load(fh)


def apply_manifest(ds, manifest):
    """Attach splits, normalization, transform and dequantization records from a manifest."""
    splits = {k: np.asarray(v, dtype=np.int64) for k, v in (manifest.get("splits") or {}).items()}
    norm = manifest.get("normalization")
    if norm is not None:
        norm = {"mean": np.asarray(norm["mean"]), "std": np.asarray(norm["std"])}
    return replace(ds, splits=splits, normalization=norm, transform=manifest.get("transform"),
                   dequantization=manifest.get("dequantization"),
                   meta={**ds.meta, **(manifest.get("meta") or {})})


# ---------------------------------------------------------------- toy data

def _two_gaussians(n, rng):
    centers = np.where(rng.random(n) < 0.5, -2.0, 2.0)
    x = rng.standard_normal((n, 2))
    x[:, 0] += centers

    def logp(x):
        x = np.asarray(x, dtype=np.float64)
        a = -0.5 * ((x[:, 0] + 2.0) ** 2 + x[:, 1] ** 2)
        b = -0.5 * ((x[:, 0] - 2.0) ** 2 + x[:, 1] ** 2)
        return np.logaddexp(a, b) + math.log(0.5) - math.log(2.0 * math.pi)

    return x, logp


_RING_R, _RING_S = 2.0, 0.25


def _ring(n, rng):
    theta = rng.uniform(0.0, 2.0 * math.pi, n)
    x = _RING_R * np.column_stack([np.cos(theta), np.sin(theta)])
    x += _RING_S * rng.standard_normal((n, 2))

    def logp(x):
        # isotropic Gaussian convolved with the uniform circle: a Bessel I0 term
        r = np.hypot(x[:, 0], x[:, 1])
        arg = _RING_R * r / _RING_S ** 2
        return (-(r * r + _RING_R ** 2) / (2 * _RING_S ** 2) + np.log(i0e(arg)) + arg
                - math.log(2.0 * math.pi * _RING_S ** 2))

    return x, logp


def _checkerboard(n, rng):
    x1 = rng.uniform(-2.0, 2.0, n)
    col = np.floor(x1)
    # rows with the same parity as the column: cells where floor(x1) + floor(x2) is even
    row = rng.integers(0, 2, n) * 2 - 2 + np.mod(col, 2)
    x2 = row + rng.random(n)
    x = np.column_stack([x1, x2])

    def logp(x):
        inside = np.all(np.abs(x) < 2.0, axis=1)
        even = np.mod(np.floor(x[:, 0]) + np.floor(x[:, 1]), 2) == 0
        return np.where(inside & even, math.log(1.0 / 8.0), -np.inf)

    return x, logp


_SPIRAL_NOISE = 0.2
# node spacing along the curve stays well below the noise scale
_SPIRAL_GRID = np.linspace(0.0, 1.0, 601)


def _spiral_center(t):
    theta = 0.5 * math.pi + 3.0 * math.pi * t
    r = 0.5 + 3.0 * t
    return np.stack([r * np.cos(theta), r * np.sin(theta)], axis=-1)


def _spiral(n, rng):
    t = rng.random(n)
    x = _spiral_center(t) + _SPIRAL_NOISE * rng.standard_normal((n, 2))
    centers = _spiral_center(_SPIRAL_GRID)
    # Simpson weights over t in [0, 1]
    w = np.ones(_SPIRAL_GRID.size)
    w[1:-1:2], w[2:-1:2] = 4.0, 2.0
    logw = np.log(w * (_SPIRAL_GRID[1] - _SPIRAL_GRID[0]) / 3.0)

    def logp(x):
        out = np.empty(x.shape[0])
        c2 = (centers ** 2).sum(axis=1)
        for s in range(0, x.shape[0], 4096):
            xs = x[s:s + 4096]
            d2 = (xs ** 2).sum(axis=1)[:, None] - 2.0 * xs @ centers.T + c2
            out[s:s + 4096] = logsumexp(logw - 0.5 * d2 / _SPIRAL_NOISE ** 2, axis=1)
        return out - math.log(2.0 * math.pi * _SPIRAL_NOISE ** 2)

    return x, logp


_TOYS = {"two_gaussians": _two_gaussians, "ring": _ring,
         "checkerboard": _checkerboard, "spiral": _spiral}


def gen_toy(name, n, rng):
    """Draw ``n`` points from a named 2D toy density, with its exact log-density attached."""
    if name not in _TOYS:
        raise ContractError(f"unknown toy dataset {name!r}; choose from {TOY_NAMES}")
    if n < 1:
        raise ContractError("n must be >= 1")
    x, logp = _TOYS[name](n, rng)
    return Dataset(x, log_density=logp, meta={"source": f"toy:{name}"})


def bimodal_1d(n, rng, separation=3.0, scale=0.6):
    """Equal mixture of N(-separation/2, scale^2) and N(+separation/2, scale^2)."""
    c = np.where(rng.random(n) < 0.5, -0.5, 0.5) * separation
    x = (c + scale * rng.standard_normal(n))[:, None]

    def logp(x):
        a = -0.5 * ((x[:, 0] + separation / 2) / scale) ** 2
        b = -0.5 * ((x[:, 0] - separation / 2) / scale) ** 2
        return np.logaddexp(a, b) + math.log(0.5) - math.log(scale * math.sqrt(2 * math.pi))

    return Dataset(x, log_density=logp, meta={"source": "toy:bimodal_1d"})


# ---------------------------------------------------------------- CSV

def _is_number(cell):
    try:
        float(cell)
    except ValueError:
        return False
    return True


def load_csv(path):
    """Read a rectangular numeric CSV; a non-numeric first row is taken as a header."""
    rows = []
    header = None
    width = None
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if not rec or all(not c.strip() for c in rec):
                continue
            if lineno == 1 and not all(_is_number(c) for c in rec):
                header = [c.strip() for c in rec]
                width = len(header)
                continue
            if width is None:
                width = len(rec)
            if len(rec) != width:
                raise ParseError(f"expected {width} fields, found {len(rec)}", line=lineno)
            try:
                rows.append([float(c) for c in rec])
            except ValueError:
                bad = next(c for c in rec if not _is_number(c))
                raise ParseError(f"non-numeric cell {bad!r}", line=lineno) from None
    if not rows:
        raise ParseError(f"{path}: no data rows")
    data = np.asarray(rows, dtype=np.float64)
    if not np.all(np.isfinite(data)):
        raise ParseError(f"{path}: non-finite values")
    return Dataset(data, meta={"source": str(path), "header": header})


def write_csv(path, array, header=None):
    array = np.asarray(array, dtype=np.float64)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if header:
            w.writerow(header)
        for row in array:
            w.writerow([format(v, ".17g") for v in row])


# ---------------------------------------------------------------- splits & scaling

def split(ds, fractions, rng):
    """Random disjoint train/val/test split; ``fractions`` = (train, val, test) summing to 1."""
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1) > 1e-9:
        raise ContractError("fractions must be three non-negative numbers summing to 1")
    n = len(ds)
    perm = rng.permutation(n)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    splits = {
        "train": np.sort(perm[:n_train]),
        "val": np.sort(perm[n_train:n_train + n_val]),
        "test": np.sort(perm[n_train + n_val:]),
    }
    return replace(ds, splits=splits)


def normalize(ds):
    """Standardize every column with the train split's mean and std (std floored)."""
    train = ds.train
    mean = train.mean(axis=0)
    std = np.maximum(train.std(axis=0), STD_FLOOR)
    data = (ds.data - mean) / std
    if ds.normalization is None:
        record = {"mean": mean, "std": std}
    else:
        # compose so that a single record still maps back to the raw data
        record = {"mean": ds.normalization["mean"] + ds.normalization["std"] * mean,
                  "std": ds.normalization["std"] * std}
    logp = None
    if ds.log_density is not None:
        inner, log_scale = ds.log_density, float(np.log(std).sum())

        def logp(y):
            return inner(np.asarray(y) * std + mean) + log_scale

    return replace(ds, data=data, normalization=record, log_density=logp)


def denormalize(ds):
    if ds.normalization is None:
        return ds
    data = ds.data * ds.normalization["std"] + ds.normalization["mean"]
    return replace(ds, data=data, normalization=None)


# ---------------------------------------------------------------- stretches

AFFINE_SCALE, AFFINE_SHIFT = 1000.0, 51.0


def stretch(ds, kind):
    """Element-wise x**3 ("cubic") or 1000 x + 51 ("affine"); keeps the original values."""
    x = ds.data
    if kind == "cubic":
        y = x ** 3
        record = {"kind": "cubic"}
    elif kind == "affine":
        y = AFFINE_SCALE * x + AFFINE_SHIFT
        record = {"kind": "affine", "a": AFFINE_SCALE, "b": AFFINE_SHIFT}
    else:
        raise ContractError(f"unknown stretch {kind!r}; use 'cubic' or 'affine'")
    logp = None
    if ds.log_density is not None:
        inner = ds.log_density

        def logp(yy):
            xx = _unstretch_values(np.asarray(yy), record)
            return inner(xx) - _log_abs_derivative(xx, record).sum(axis=1)

    return replace(ds, data=y, transform=record, original=x.copy(), log_density=logp)


def _log_abs_derivative(x, record):
    if record["kind"] == "cubic":
        with np.errstate(divide="ignore"):
            return np.log(3.0) + 2.0 * np.log(np.abs(x))
    return np.full(x.shape, math.log(abs(record["a"])))


def _unstretch_values(y, record):
    if record["kind"] == "cubic":
        return np.cbrt(y)
    return (y - record["b"]) / record["a"]


def unstretch(ds):
    """Invert the recorded stretch through the inverse function (not the stored originals)."""
    if ds.transform is None:
        return ds
    return replace(ds, data=_unstretch_values(ds.data, ds.transform), transform=None,
                   original=None, log_density=None)


def log_abs_jacobian_correction(ds, split_name=None):
    """Per-row sum_d log|f'(x_d)| at the original values.

    Original-space NLL = stretched-space NLL - mean correction.
    """
    if ds.transform is None:
        raise ContractError("dataset carries no stretch transform")
    x = ds.original if ds.original is not None else _unstretch_values(ds.data, ds.transform)
    if split_name is not None:
        x = x[ds.rows(split_name)]
    return _log_abs_derivative(x, ds.transform).sum(axis=1)


# ---------------------------------------------------------------- images

def dequantize_uniform(images, levels, rng):
    """Integer pixels in [0, levels) -> (pixel + U[0, 1)) / levels, with the bpd offset recorded."""
    images = np.asarray(images)
    if images.ndim != 2:
        raise ContractError("images must be a (rows, pixels) matrix")
    if not np.issubdtype(images.dtype, np.integer):
        if not np.all(np.equal(np.mod(images, 1), 0)):
            raise ContractError("pixel values must be integers")
    if images.min() < 0 or images.max() >= levels:
        raise ContractError(f"pixel values must lie in [0, {levels})")
    D = images.shape[1]
    data = (images.astype(np.float64) + rng.random(images.shape)) / levels
    deq = {"levels": int(levels), "offset": D * math.log(levels)}
    return Dataset(data, dequantization=deq, meta={"source": "dequantized"})
