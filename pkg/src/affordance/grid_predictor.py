"""Image to an m x n grid of per-affordance logistic predictions.

Each output cell gets a fixed feature vector built from the whole image:
HOG at full and half resolution, a coarse colour histogram and the mean
colour, all area-pooled to the output grid.  The cell also sees the same
quantities averaged over 3x3 and 7x7 neighbourhoods, copied from a few
nearby cells, and a smooth encoding of its position.  One linear map,
shared by all cells, plus a bias turns these features into a logit per
cell and affordance.  Training minimises the
binary cross-entropy over cells whose target is known, with momentum SGD.

Model file (little-endian)::

    b"AFFGRID1"           magic
    uint32                length of the JSON header in bytes
    JSON header           {"m", "n", "dim", "affordances", "features"}
    float64[dim]          feature mean
    float64[dim]          feature scale
    per affordance, in header order:
        float64[dim]      weights
        float64           bias
"""

from __future__ import annotations

import csv
import io as _io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage, special

from .errors import ImageTooSmall, NonFiniteLoss
from .hog import BINS, CELL, hog_cells, resize
from .labeler import AffordanceMap, Label


@dataclass(frozen=True)
class FeatureConfig:
    m: int = 50
    n: int = 50
    color_bins: int = 4              # per channel; histogram has color_bins^3 entries
    context: Tuple[int, ...] = (3, 7)
    shifts: Tuple[Tuple[int, int], ...] = ((-2, 0), (-1, 0), (1, 0), (2, 0), (0, -1), (0, 1))
    row_basis: int = 8
    col_basis: int = 4

    @property
    def min_size(self) -> int:
        return 4 * CELL              # the half-resolution HOG needs 2x2 cells

    def dim(self) -> int:
        base = 2 * BINS + self.color_bins ** 3 + 3
        return base * (1 + len(self.context) + len(self.shifts)) + self.row_basis + self.col_basis


# output grid and colour quantisation used for the 160x120 synthetic renders
SYNTH_FEATURES = FeatureConfig(m=40, n=40, color_bins=3)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.5
    momentum: float = 0.9
    batch_size: int = 16
    epochs: int = 30
    seed: int = 0
    weight_decay: float = 1e-4

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")


@dataclass
class GridModel:
    features: FeatureConfig
    affordances: Tuple[str, ...]
    weights: Dict[str, np.ndarray]          # name -> (dim,)
    bias: Dict[str, float]
    mean: np.ndarray                        # feature standardisation
    scale: np.ndarray
    log: List[Dict[str, float]] = field(default_factory=list)

    @property
    def m(self) -> int:
        return self.features.m

    @property
    def n(self) -> int:
        return self.features.n

    @classmethod
    def zeros(cls, affordances: Sequence[str], features: FeatureConfig = FeatureConfig()) -> "GridModel":
        d = features.dim()
        return cls(features, tuple(affordances), {a: np.zeros(d) for a in affordances},
                   {a: 0.0 for a in affordances}, np.zeros(d), np.ones(d))

    def copy(self) -> "GridModel":
        return GridModel(self.features, self.affordances,
                         {a: w.copy() for a, w in self.weights.items()}, dict(self.bias),
                         self.mean.copy(), self.scale.copy(), list(self.log))


# -- features ------------------------------------------------------------------

def _edges(length: int, k: int) -> np.ndarray:
    return np.rint(np.linspace(0, length, k + 1)).astype(int)


def area_pool(a: np.ndarray, m: int, n: int) -> np.ndarray:
    """Average (H, W, C) into m x n bins whose edges are rounded even splits."""
    a = np.asarray(a, float)
    H, W = a.shape[:2]
    if m > H or n > W:
        raise ImageTooSmall(f"cannot pool {H}x{W} into {m}x{n}")
    re, ce = _edges(H, m), _edges(W, n)
    s = np.add.reduceat(np.add.reduceat(a, re[:-1], axis=0), ce[:-1], axis=1)
    cnt = np.diff(re)[:, None] * np.diff(ce)[None, :]
    return s / cnt.reshape(m, n, *([1] * (a.ndim - 2)))


def _color_hist(rgb: np.ndarray, bins: int) -> np.ndarray:
    q = np.clip((rgb * bins).astype(int), 0, bins - 1)
    code = (q[..., 0] * bins + q[..., 1]) * bins + q[..., 2]
    return np.eye(bins ** 3)[code]


def _hog_pixels(gray: np.ndarray, shape: Tuple[int, int]) -> np.ndarray:
    """HOG cell map stretched back over the pixels it describes (nearest cell)."""
    cells = hog_cells(gray)
    h, w = shape
    rows = np.minimum((np.arange(h) + 0.5) * cells.shape[0] / h, cells.shape[0] - 1).astype(int)
    cols = np.minimum((np.arange(w) + 0.5) * cells.shape[1] / w, cells.shape[1] - 1).astype(int)
    return cells[np.ix_(rows, cols)]


def _basis(k: int, count: int) -> np.ndarray:
    """Gaussian bumps over normalised cell-centre position, one column per bump."""
    x = (np.arange(k) + 0.5) / k
    c = (np.arange(count) + 0.5) / count
    return np.exp(-0.5 * ((x[:, None] - c[None]) * count) ** 2)


def cell_features(image: np.ndarray, features: FeatureConfig = FeatureConfig()) -> np.ndarray:
    """(m, n, dim) raw (unstandardised) float32 features of an RGB image in [0, 1]."""
    img = np.asarray(image, float)
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=2)
    h, w = img.shape[:2]
    m, n = features.m, features.n
    if min(h, w) < features.min_size or h < m or w < n:
        raise ImageTooSmall(f"image {h}x{w} too small for a {m}x{n} grid")
    gray = img.mean(axis=2)
    half = resize(gray, (h // 2, w // 2))
    per_pixel = np.concatenate([
        _hog_pixels(gray, (h, w)),
        _hog_pixels(half, (h, w)),
        _color_hist(img, features.color_bins),
        img,
    ], axis=2)
    base = area_pool(per_pixel, m, n)
    parts = [base]
    for k in features.context:
        parts.append(ndimage.uniform_filter(base, size=(k, k, 1), mode="nearest"))
    pad = max([abs(v) for s in features.shifts for v in s], default=0)
    padded = np.pad(base, ((pad, pad), (pad, pad), (0, 0)), mode="edge")
    for dr, dc in features.shifts:
        parts.append(padded[pad + dr:pad + dr + m, pad + dc:pad + dc + n])
    rb = np.broadcast_to(_basis(m, features.row_basis)[:, None, :], (m, n, features.row_basis))
    cb = np.broadcast_to(_basis(n, features.col_basis)[None, :, :], (m, n, features.col_basis))
    return np.concatenate(parts + [rb, cb], axis=2).astype(np.float32)


def _standardised(model: GridModel, feats: np.ndarray) -> np.ndarray:
    return (feats - model.mean) / model.scale


def cell_targets(labels: np.ndarray, m: int, n: int) -> np.ndarray:
    """Majority vote of known pixels per cell; -1 where more than half the pixels are unknown."""
    lab = np.asarray(labels.labels if isinstance(labels, AffordanceMap) else labels)
    sup = area_pool((lab == Label.SUPPORTS)[..., None].astype(float), m, n)[..., 0]
    neg = area_pool((lab == Label.NOT)[..., None].astype(float), m, n)[..., 0]
    out = np.where(sup > neg, 1, 0).astype(np.int8)
    out[(sup + neg) <= 0.5] = -1
    return out


# -- loss ----------------------------------------------------------------------

def logits(model: GridModel, feats: np.ndarray, affordance: str) -> np.ndarray:
    return _standardised(model, feats) @ model.weights[affordance] + model.bias[affordance]


def loss_and_grad(model: GridModel, feats: np.ndarray, target: np.ndarray, affordance: str,
                  standardised: bool = False) -> Tuple[float, np.ndarray, float]:
    """Summed cross-entropy over known cells and its gradient.

    ``feats`` are the (m, n, dim) cell features of one image (or a stack
    of images); ``target`` holds 1, 0 or -1 (unknown, ignored).  Returns
    (loss, d loss / d weights, d loss / d bias).
    """
    X = feats if standardised else _standardised(model, np.asarray(feats, float))
    t = np.asarray(target)
    if t.shape != X.shape[:-1]:
        raise ValueError(f"target shape {t.shape} does not match the grid {X.shape[:-1]}")
    known = (t >= 0).ravel()
    Xf = X.reshape(-1, X.shape[-1])
    y = (t.ravel() == 1).astype(float)
    w = model.weights[affordance]
    z = Xf @ w.astype(Xf.dtype, copy=False) + model.bias[affordance]
    z = z.astype(float)
    # -log sigmoid(z) = logaddexp(0, -z); -log(1 - sigmoid(z)) = logaddexp(0, z)
    per = np.where(y > 0, np.logaddexp(0.0, -z), np.logaddexp(0.0, z))
    loss = float(np.sum(per, where=known))
    if not np.isfinite(loss):
        raise NonFiniteLoss("cross-entropy is not finite")
    r = np.where(known, special.expit(z) - y, 0.0)
    return loss, (r.astype(Xf.dtype) @ Xf).astype(float), float(r.sum())


# -- training ------------------------------------------------------------------

def fit_standardisation(model: GridModel, feats: Sequence[np.ndarray]) -> GridModel:
    X = np.concatenate([f.reshape(-1, f.shape[-1]) for f in feats])
    out = model.copy()
    out.mean = X.mean(axis=0)
    out.scale = np.where(X.std(axis=0) > 1e-8, X.std(axis=0), 1.0)
    return out


def train(model: GridModel, images: Sequence[np.ndarray],
          labels: Sequence[Mapping[str, AffordanceMap]], config: TrainConfig = TrainConfig(),
          affordances: Optional[Sequence[str]] = None,
          features: Optional[Sequence[np.ndarray]] = None) -> GridModel:
    """Momentum SGD on each affordance independently.

    ``labels[i]`` maps affordance names to label maps of ``images[i]``.
    The gradient of a minibatch is divided by its number of known cells.
    Feature standardisation is fitted on the training images when the
    model still has the identity one.  Returns a new model whose ``log``
    holds the mean per-cell loss of every epoch.
    """
    if len(images) == 0:
        raise ValueError("training set is empty")
    fc = model.features
    feats = list(features) if features is not None else [cell_features(im, fc) for im in images]
    out = model.copy()
    if not out.mean.any() and np.all(out.scale == 1):
        out = fit_standardisation(out, feats)
    # single precision halves the memory of the feature store; updates stay in float64
    X = np.stack([_standardised(out, f).astype(np.float32) for f in feats])
    names = list(affordances) if affordances is not None else list(out.affordances)
    targets = {a: np.stack([cell_targets(lab[a], fc.m, fc.n) if a in lab
                            else np.full((fc.m, fc.n), -1, np.int8) for lab in labels])
               for a in names}
    log = [dict() for _ in range(config.epochs)]
    for a in names:
        rng = np.random.default_rng(config.seed)
        w, b = out.weights[a].copy(), float(out.bias[a])
        vw, vb = np.zeros_like(w), 0.0
        T = targets[a]
        for epoch in range(config.epochs):
            order = rng.permutation(len(X))
            total, count = 0.0, 0
            for s in range(0, len(order), config.batch_size):
                idx = order[s:s + config.batch_size]
                out.weights[a], out.bias[a] = w, b
                loss, gw, gb = loss_and_grad(out, X[idx], T[idx], a, standardised=True)
                nk = int((T[idx] >= 0).sum())
                total += loss
                count += nk
                if nk == 0:
                    continue
                gw = gw / nk + config.weight_decay * w
                gb = gb / nk
                vw = config.momentum * vw - config.learning_rate * gw
                vb = config.momentum * vb - config.learning_rate * gb
                w = w + vw
                b = b + vb
            log[epoch][a] = total / max(count, 1)
        out.weights[a], out.bias[a] = w, float(b)
    out.log = [dict(epoch=i + 1, **row) for i, row in enumerate(log)]
    return out


def training_log_csv(model: GridModel) -> str:
    buf = _io.StringIO()
    names = [a for a in model.affordances if any(a in r for r in model.log)]
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["epoch", *names])
    for r in model.log:
        wr.writerow([r["epoch"], *(f"{r[a]:.9g}" if a in r else "" for a in names)])
    return buf.getvalue()


# -- prediction ----------------------------------------------------------------

def predict_grid(model: GridModel, image: np.ndarray, affordance: str,
                 feats: Optional[np.ndarray] = None) -> np.ndarray:
    f = cell_features(image, model.features) if feats is None else feats
    return special.expit(logits(model, f, affordance))


def upsample(grid: np.ndarray, shape: Tuple[int, int]) -> np.ndarray:
    """Bilinear upsampling that keeps cell values at the cell-centre pixels."""
    return resize(grid, shape)


def predict(model: GridModel, image: np.ndarray, affordance: str) -> AffordanceMap:
    h, w = np.shape(image)[:2]
    p = upsample(predict_grid(model, image, affordance), (h, w))
    return AffordanceMap.from_scores(p, affordance)


def predict_all(model: GridModel, image: np.ndarray) -> Dict[str, AffordanceMap]:
    feats = cell_features(image, model.features)
    h, w = np.shape(image)[:2]
    return {a: AffordanceMap.from_scores(upsample(predict_grid(model, image, a, feats), (h, w)), a)
            for a in model.affordances}


# -- serialisation -------------------------------------------------------------

GRID_MODEL_MAGIC = b"AFFGRID1"


def model_to_bytes(model: GridModel) -> bytes:
    fc = model.features
    header = json.dumps({
        "m": fc.m, "n": fc.n, "dim": fc.dim(), "affordances": list(model.affordances),
        "features": {"color_bins": fc.color_bins, "context": list(fc.context),
                     "shifts": [list(v) for v in fc.shifts],
                     "row_basis": fc.row_basis, "col_basis": fc.col_basis,
                     "hog_cell": CELL, "hog_bins": BINS},
    }, sort_keys=True).encode("utf-8")
    parts = [GRID_MODEL_MAGIC, struct.pack("<I", len(header)), header,
             np.asarray(model.mean, "<f8").tobytes(), np.asarray(model.scale, "<f8").tobytes()]
    for a in model.affordances:
        parts.append(np.asarray(model.weights[a], "<f8").tobytes())
        parts.append(struct.pack("<d", model.bias[a]))
    return b"".join(parts)


def model_from_bytes(data: bytes) -> GridModel:
    if data[:8] != GRID_MODEL_MAGIC:
        raise ValueError("not a grid model file")
    (hl,) = struct.unpack_from("<I", data, 8)
    head = json.loads(data[12:12 + hl].decode("utf-8"))
    f = head["features"]
    if f["hog_cell"] != CELL or f["hog_bins"] != BINS:
        raise ValueError("model was trained with a different HOG geometry")
    fc = FeatureConfig(head["m"], head["n"], f["color_bins"], tuple(f["context"]),
                       tuple(tuple(v) for v in f["shifts"]), f["row_basis"], f["col_basis"])
    d = head["dim"]
    if d != fc.dim():
        raise ValueError("feature dimension does not match the feature config")
    pos = 12 + hl
    expected = pos + 8 * d * (2 + len(head["affordances"])) + 8 * len(head["affordances"])
    if len(data) != expected:
        raise ValueError(f"grid model file has {len(data)} bytes, expected {expected}")
    vec = lambda k: np.frombuffer(data, "<f8", k, pos).astype(float)  # noqa: E731
    mean = vec(d)
    pos += 8 * d
    scale = vec(d)
    pos += 8 * d
    weights, bias = {}, {}
    for a in head["affordances"]:
        weights[a] = vec(d)
        pos += 8 * d
        (bias[a],) = struct.unpack_from("<d", data, pos)
        pos += 8
    return GridModel(fc, tuple(head["affordances"]), weights, bias, mean, scale)


def save_model(path, model: GridModel) -> None:
    Path(path).write_bytes(model_to_bytes(model))


def load_model(path) -> GridModel:
    return model_from_bytes(Path(path).read_bytes())
