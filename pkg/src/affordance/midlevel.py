"""Mid-level elements: HOG detectors paired with canonical affordance forms.

An element couples a linear detector ``w`` over a window of HOG cells with a
canonical form ``F``, the expected affordance label of each window cell.
Elements start as appearance clusters of affordance-rich windows and are
refined by alternating between the detector, the member set and the form.
At test time every detection pastes its element's form into the window,
weighted by a Weibull-calibrated detection score.

Element bank file (little-endian)::

    b"AFFELEM1"                 magic
    uint32  version (1)
    uint32  count, window_cells, cell, bins
    float64 score_floor, pyramid_step
    uint32  max_levels, nms_radius
    float64 colour_weight (0: HOG only; else 3 colour channels follow the bins)
    uint32  n, then n bytes UTF-8 affordance name
    count x element record:
        float64[window_cells^2 * channels]  w (row, col, channel order)
        float64                         bias
        float64[window_cells^2]         F (row-major)
        float64[3]                      Weibull shape, scale, location
        uint32                          number of members at training time
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage, signal, stats
from sklearn.cluster import KMeans
from sklearn.exceptions import ConvergenceWarning
from sklearn.svm import LinearSVC

from .errors import ClusterCollapsed, DegenerateFit, ImageTooSmall, NoQualifyingPatches
from .hog import BINS, CELL, PyramidLevel, pyramid
from .labeler import AffordanceMap, Label


@dataclass(frozen=True)
class MidlevelConfig:
    window_cells: int = 10          # canonical patch side in HOG cells
    cell: int = CELL                # HOG cell side in pixels
    min_coverage: float = 0.25
    samples_per_image: int = 60
    balance_levels: bool = True     # draw windows evenly across pyramid levels
    negatives_per_image: int = 60
    k: int = 20
    restarts: int = 5
    consistency: float = 0.75       # mean pairwise Jaccard to freeze a cluster
    cardinality: int = 100
    min_members: int = 3
    max_elements: int = 40
    C: float = 0.1
    rounds: int = 3
    delta_bound: float = 0.25
    mining_folds: int = 2
    max_negatives: int = 3000
    tail_fraction: float = 0.1
    min_tail: int = 50
    score_floor: float = 0.1        # calibrated score needed to transfer a form
    nms_radius: int = 4             # keep local maxima within this many cells (0 disables)
    colour_weight: float = 0.0      # > 0 appends weighted mean cell colour to HOG
    pyramid_step: float = 2 ** 0.5
    max_levels: int = 8
    seed: int = 0


# 160x120 synthetic renders are a quarter of the usual image width, so the
# window keeps 10x10 cells of 4 px; colour separates the flat-shaded surfaces
# that HOG alone cannot tell apart.
SYNTH_MIDLEVEL = MidlevelConfig(cell=4, samples_per_image=40, negatives_per_image=30, k=150,
                                max_elements=250, C=1.0, colour_weight=2.0)


def _pyramid(image, config) -> List[PyramidLevel]:
    return pyramid(image, config.window_cells, config.pyramid_step, config.max_levels,
                   cell=config.cell, colour_weight=config.colour_weight)


# -- patches -------------------------------------------------------------------

@dataclass(frozen=True)
class Patch:
    appearance: np.ndarray     # (g, g, bins)
    label_grid: np.ndarray     # (g, g) int8: 1 supports, 0 not, -1 unknown
    source: Tuple[int, int, int, int]   # image index, pyramid level, cell row, cell col
    box: Tuple[float, float, float]     # top, left, side in image pixels


@dataclass
class PatchSet:
    """Column store of patches; indexing yields :class:`Patch`."""
    features: np.ndarray       # (n, g*g*bins)
    labels: np.ndarray         # (n, g, g) int8
    sources: np.ndarray        # (n, 4) int
    boxes: np.ndarray          # (n, 3) float
    window_cells: int

    def __len__(self) -> int:
        return len(self.features)

    def __getitem__(self, i) -> Patch:
        g = self.window_cells
        return Patch(self.features[i].reshape(g, g, -1), self.labels[i],
                     tuple(int(v) for v in self.sources[i]), tuple(float(v) for v in self.boxes[i]))

    @classmethod
    def empty(cls, window_cells: int, bins: int = BINS) -> "PatchSet":
        g = window_cells
        return cls(np.zeros((0, g * g * bins)), np.zeros((0, g, g), np.int8),
                   np.zeros((0, 4), np.int64), np.zeros((0, 3)), g)

    @classmethod
    def concat(cls, parts: Sequence["PatchSet"], window_cells: int) -> "PatchSet":
        parts = [p for p in parts if len(p)]
        if not parts:
            return cls.empty(window_cells)
        return cls(np.concatenate([p.features for p in parts]),
                   np.concatenate([p.labels for p in parts]),
                   np.concatenate([p.sources for p in parts]),
                   np.concatenate([p.boxes for p in parts]), window_cells)


def _integral(mask: np.ndarray) -> np.ndarray:
    out = np.zeros((mask.shape[0] + 1, mask.shape[1] + 1))
    out[1:, 1:] = np.cumsum(np.cumsum(mask, axis=0), axis=1)
    return out


def _box_sum(ii: np.ndarray, r0, c0, r1, c1) -> np.ndarray:
    return ii[r1, c1] - ii[r0, c1] - ii[r1, c0] + ii[r0, c0]


class _LabelCounts:
    """Integral images of SUPPORTS / NOT pixels for window statistics."""

    def __init__(self, labels: np.ndarray):
        lab = np.asarray(labels)
        self.shape = lab.shape
        self.sup = _integral(lab == Label.SUPPORTS)
        self.neg = _integral(lab == Label.NOT)

    def counts(self, top, left, side):
        h, w = self.shape
        r0 = np.clip(np.rint(top).astype(int), 0, h)
        c0 = np.clip(np.rint(left).astype(int), 0, w)
        r1 = np.clip(np.rint(top + side).astype(int), 0, h)
        c1 = np.clip(np.rint(left + side).astype(int), 0, w)
        area = (r1 - r0) * (c1 - c0)
        return _box_sum(self.sup, r0, c0, r1, c1), _box_sum(self.neg, r0, c0, r1, c1), area


def window_positions(level: PyramidLevel, g: int) -> Tuple[np.ndarray, np.ndarray]:
    nr, nc = level.cells.shape[:2]
    rr, cc = np.mgrid[0:nr - g + 1, 0:nc - g + 1]
    return rr.ravel(), cc.ravel()


def label_grid(counts: _LabelCounts, top: float, left: float, side: float, g: int) -> np.ndarray:
    """Majority-vote label per window cell; UNKNOWN when more than half the pixels are unknown."""
    step = side / g
    a = np.arange(g)
    tt = top + step * a[:, None] + np.zeros((1, g))
    ll = left + step * a[None, :] + np.zeros((g, 1))
    sup, neg, area = counts.counts(tt, ll, step)
    known = sup + neg
    out = np.where(sup > neg, 1, 0).astype(np.int8)
    out[(known * 2 <= area) | (known == 0)] = -1
    return out


def _features(level: PyramidLevel, rows, cols, g: int) -> np.ndarray:
    win = np.lib.stride_tricks.sliding_window_view(level.cells, (g, g), axis=(0, 1))
    # win: (nr-g+1, nc-g+1, bins, g, g) -> (n, g, g, bins)
    return np.moveaxis(win[rows, cols], 1, -1).reshape(len(rows), -1)


def sample_patches(images: Sequence[np.ndarray], labels: Sequence[AffordanceMap], affordance: str,
                   min_coverage: float = 0.25, *, config: MidlevelConfig = MidlevelConfig(),
                   rng: Optional[np.random.Generator] = None, negatives: bool = False,
                   min_patches: int = 0, pyramids: Optional[List[List[PyramidLevel]]] = None) -> PatchSet:
    """Random multi-scale windows whose SUPPORTS fraction is at least ``min_coverage``.

    Coverage counts only known pixels.  With ``negatives`` the windows are
    instead drawn from those with no SUPPORTS pixel and at least half of
    their pixels known (the background set).  Up to
    ``config.samples_per_image`` (or ``negatives_per_image``) windows are
    drawn per image, uniformly among the qualifying ones over all levels.
    """
    if not 0 < min_coverage <= 1:
        raise ValueError("min_coverage must be in (0, 1]")
    rng = np.random.default_rng(config.seed) if rng is None else rng
    g = config.window_cells
    per_image = config.negatives_per_image if negatives else config.samples_per_image
    parts = []
    for i, (img, amap) in enumerate(zip(images, labels)):
        if amap.affordance and amap.affordance != affordance:
            raise ValueError(f"label map is for {amap.affordance}, not {affordance}")
        if amap.shape != np.shape(img)[:2]:
            raise ValueError("image and label map sizes differ")
        levels = pyramids[i] if pyramids is not None else _pyramid(img, config)
        counts = _LabelCounts(amap.labels)
        cand, weight = [], []
        for li, lev in enumerate(levels):
            rows, cols = window_positions(lev, g)
            top, left, side = lev.window_box(rows, cols, g, config.cell)
            sup, neg, area = counts.counts(top, left, side)
            known = sup + neg
            if negatives:
                ok = (sup == 0) & (known * 2 >= area)
            else:
                ok = (known > 0) & (sup >= min_coverage * np.maximum(known, 1))
            for r, c in zip(rows[ok], cols[ok]):
                cand.append((li, r, c))
            # every level with a qualifying window gets the same total probability
            weight += [1.0 / max(ok.sum(), 1)] * int(ok.sum())
        if not cand:
            continue
        prob = np.asarray(weight) / np.sum(weight) if config.balance_levels else None
        pick = rng.choice(len(cand), size=min(per_image, len(cand)), replace=False, p=prob)
        pick.sort()
        feats, grids, srcs, boxes = [], [], [], []
        for j in pick:
            li, r, c = cand[j]
            lev = levels[li]
            top, left, side = lev.window_box(r, c, g, config.cell)
            feats.append(_features(lev, np.array([r]), np.array([c]), g)[0])
            grids.append(label_grid(counts, top, left, side, g))
            srcs.append((i, li, r, c))
            boxes.append((top, left, side))
        parts.append(PatchSet(np.array(feats), np.array(grids, np.int8), np.array(srcs, np.int64),
                              np.array(boxes, float), g))
    out = PatchSet.concat(parts, g)
    if len(out) < min_patches:
        raise NoQualifyingPatches(f"{affordance}: only {len(out)} qualifying windows "
                                  f"(need {min_patches})")
    return out


# -- clustering ----------------------------------------------------------------

def pairwise_jaccard(grids: np.ndarray) -> np.ndarray:
    """Jaccard of positive cells over cells known in both grids (1 when neither has positives)."""
    n = len(grids)
    flat = np.asarray(grids).reshape(n, -1)
    pos = (flat == 1).astype(float)
    known = (flat >= 0).astype(float)
    inter = pos @ pos.T
    union = pos @ known.T + known @ pos.T - inter
    return np.where(union > 0, inter / np.where(union > 0, union, 1), 1.0)


def cluster_consistency(grids: np.ndarray) -> float:
    n = len(grids)
    if n < 2:
        return 1.0
    j = pairwise_jaccard(grids)
    return float((j.sum() - np.trace(j)) / (n * (n - 1)))


@dataclass
class Element:
    affordance: str
    w: np.ndarray                  # (g*g*bins,)
    bias: float
    F: np.ndarray                  # (g, g) in [0, 1]
    members: np.ndarray            # indices into the training PatchSet
    calibration: Tuple[float, float, float] = (1.0, 1.0, 0.0)   # Weibull shape, scale, loc
    history: List[Tuple[str, float]] = field(default_factory=list)

    @property
    def y(self) -> np.ndarray:
        return self.members

    def raw_score(self, features: np.ndarray) -> np.ndarray:
        return np.asarray(features) @ self.w + self.bias

    def calibrated(self, raw) -> np.ndarray:
        shape, scale, loc = self.calibration
        return stats.weibull_min.cdf(np.asarray(raw, float), shape, loc=loc, scale=scale)


def init_clusters(patches: PatchSet, k: int, restarts: int, *, consistency: float = 0.75,
                  min_members: int = 1, seed: int = 0, affordance: str = "") -> List[Element]:
    """Multi-restart k-means on appearance, freezing label-consistent clusters after each restart.

    Frozen clusters leave the pool; the last restart returns all of its
    clusters.  With ``restarts == 1`` this is plain k-means.
    """
    if len(patches) < k:
        raise ValueError(f"need at least k={k} patches, got {len(patches)}")
    g = patches.window_cells
    pool = np.arange(len(patches))
    groups: List[np.ndarray] = []
    for r in range(restarts):
        if len(pool) == 0:
            break
        X = patches.features[pool]
        n_distinct = len(np.unique(X, axis=0))
        kk = min(k, n_distinct)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            km = KMeans(n_clusters=kk, n_init=1, random_state=seed + r).fit(X)
        last = r == restarts - 1
        keep = np.ones(len(pool), bool)
        for c in range(kk):
            idx = np.flatnonzero(km.labels_ == c)
            if len(idx) == 0:
                continue
            members = pool[idx]
            frozen = len(idx) >= min_members and \
                cluster_consistency(patches.labels[members]) >= consistency
            if frozen or last:
                if len(idx) >= min_members:
                    groups.append(members)
                keep[idx] = False
        pool = pool[keep]
    elements = []
    for members in groups:
        el = Element(affordance, np.zeros(patches.features.shape[1]), 0.0, np.full((g, g), 0.5),
                     np.sort(members))
        elements.append(form_step(el, patches))
    return elements


# -- alternating optimisation ----------------------------------------------------

def delta(F: np.ndarray, grids: np.ndarray) -> np.ndarray:
    """Mean squared difference between ``F`` and each label grid over its known cells."""
    g = np.asarray(grids, float).reshape(len(grids), -1)
    known = g >= 0
    diff = np.where(known, (F.ravel()[None] - g) ** 2, 0.0)
    n = known.sum(axis=1)
    return np.where(n > 0, diff.sum(axis=1) / np.maximum(n, 1), 0.0)


def form_step(element: Element, patches: PatchSet) -> Element:
    """F minimising the summed ``delta`` over members: per-cell mean weighted by 1 / known cells."""
    grids = patches.labels[element.members].reshape(len(element.members), -1).astype(float)
    known = grids >= 0
    wt = 1.0 / np.maximum(known.sum(axis=1), 1)
    num = (np.where(known, grids, 0.0) * wt[:, None]).sum(axis=0)
    den = (known * wt[:, None]).sum(axis=0)
    F = np.where(den > 0, num / np.where(den > 0, den, 1), element.F.ravel())
    return replace(element, F=F.reshape(element.F.shape))


def hinge(margins: np.ndarray) -> np.ndarray:
    return np.maximum(0.0, 1.0 - margins)


def objective(element: Element, patches: PatchSet, negatives: np.ndarray, C: float) -> float:
    """Regulariser + member and negative hinge losses + member form disagreement."""
    w, b = element.w, element.bias
    pos = element.raw_score(patches.features[element.members])
    neg = negatives @ w + b
    return float(0.5 * (w @ w + b * b) + C * hinge(pos).sum() + C * hinge(-neg).sum()
                 + delta(element.F, patches.labels[element.members]).sum())


def svm_objective(w, b, X, y, C) -> float:
    return float(0.5 * (w @ w + b * b) + C * hinge(y * (X @ w + b)).sum())


def _fit_svm(Xp, Xn, C, seed):
    X = np.vstack([Xp, Xn])
    y = np.r_[np.ones(len(Xp)), -np.ones(len(Xn))]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        clf = LinearSVC(C=C, loss="hinge", dual=True, max_iter=20000, random_state=seed).fit(X, y)
    return clf.coef_.ravel().copy(), float(clf.intercept_[0])


def svm_step(element: Element, patches: PatchSet, background: np.ndarray, config: MidlevelConfig,
             rng: np.random.Generator) -> Tuple[Element, np.ndarray]:
    """Train the detector: members positive, background negative, with hard-negative mining.

    The background is split into folds; after an initial fit on a random
    subset, each fold is scanned for margin violators which join the
    negative set before refitting.  Returns the element and the final
    negative set.
    """
    Xp = patches.features[element.members]
    order = rng.permutation(len(background))
    folds = np.array_split(order, max(1, config.mining_folds))
    neg_idx = folds[0][: config.max_negatives // 2]
    w, b = _fit_svm(Xp, background[neg_idx], config.C, config.seed)
    for fold in folds[1:] + folds[:1]:
        s = background[fold] @ w + b
        hard = fold[s > -1.0]
        if len(hard) == 0:
            continue
        hard = hard[np.argsort(-s[s > -1.0], kind="stable")]
        neg_idx = np.union1d(neg_idx, hard)[: config.max_negatives]
        w, b = _fit_svm(Xp, background[neg_idx], config.C, config.seed)
    return replace(element, w=w, bias=b), background[neg_idx]


def member_step(element: Element, patches: PatchSet, config: MidlevelConfig) -> Element:
    """Keep |y| fixed and choose the members of lowest hinge + form cost.

    Candidates are patches whose ``delta`` to the current form is within
    ``config.delta_bound`` plus the current members, so the current set is
    always feasible and the objective cannot increase.
    """
    d = delta(element.F, patches.labels)
    cost = config.C * hinge(element.raw_score(patches.features)) + d
    eligible = d <= config.delta_bound
    eligible[element.members] = True
    cand = np.flatnonzero(eligible)
    m = min(len(element.members), config.cardinality)
    chosen = cand[np.argsort(cost[cand], kind="stable")[:m]]
    if len(chosen) == 0:
        raise ClusterCollapsed("element lost all its members")
    return replace(element, members=np.sort(chosen))


def optimize_element(element: Element, patches: PatchSet, background: np.ndarray,
                     config: MidlevelConfig = MidlevelConfig(),
                     rng: Optional[np.random.Generator] = None) -> Element:
    """Alternate detector, membership and form updates for ``config.rounds`` rounds.

    The objective after every step is appended to ``history`` as
    (step name, value).  Values logged after the member and form steps
    are evaluated on the negative set of the preceding detector step.
    """
    if len(element.members) == 0:
        raise ClusterCollapsed("element has no members")
    rng = np.random.default_rng(config.seed) if rng is None else rng
    if len(element.members) > config.cardinality:
        element = replace(element, members=element.members[: config.cardinality])
    el = form_step(element, patches)
    hist = list(el.history)
    for _ in range(config.rounds):
        el, negs = svm_step(el, patches, background, config, rng)
        hist.append(("svm", objective(el, patches, negs, config.C)))
        el = member_step(el, patches, config)
        hist.append(("members", objective(el, patches, negs, config.C)))
        el = form_step(el, patches)
        hist.append(("form", objective(el, patches, negs, config.C)))
    return replace(el, history=hist)


# -- calibration ---------------------------------------------------------------

def fit_weibull(samples: np.ndarray, loc: Optional[float] = None) -> Tuple[float, float, float]:
    """Maximum-likelihood Weibull (shape, scale, loc).

    Without ``loc`` the location is placed just below the smallest sample
    so every sample lies in the support.
    """
    x = np.asarray(samples, float).ravel()
    if len(x) < 2 or np.ptp(x) == 0:
        raise DegenerateFit("scores are constant")
    if loc is None:
        loc = float(x.min() - 1e-6 * np.ptp(x))
    c, _, scale = stats.weibull_min.fit(x, floc=loc)
    if not (np.isfinite(c) and np.isfinite(scale) and c > 0 and scale > 0):
        raise DegenerateFit("Weibull fit did not converge")
    return float(c), float(scale), float(loc)


def calibrate(element: Element, negative_features: np.ndarray,
              config: MidlevelConfig = MidlevelConfig()) -> Element:
    """Fit a Weibull to the upper tail of the element's scores on negative windows.

    The calibrated score is the fitted CDF at the raw score: near 0 for
    scores typical of negatives, approaching 1 above the negative tail.
    """
    raw = element.raw_score(negative_features)
    if len(raw) < config.min_tail:
        raise ValueError(f"need at least {config.min_tail} negative scores, got {len(raw)}")
    n_tail = max(config.min_tail, int(round(config.tail_fraction * len(raw))))
    tail = np.sort(raw)[-n_tail:]
    return replace(element, calibration=fit_weibull(tail))


# -- banks, training and inference ---------------------------------------------

@dataclass
class ElementBank:
    affordance: str
    elements: List[Element]
    window_cells: int = 10
    cell: int = CELL
    bins: int = BINS
    score_floor: float = 0.1
    pyramid_step: float = 2 ** 0.5
    max_levels: int = 8
    nms_radius: int = 4
    colour_weight: float = 0.0

    def __len__(self) -> int:
        return len(self.elements)

    @property
    def channels(self) -> int:
        return self.bins + (3 if self.colour_weight > 0 else 0)

    def config(self) -> MidlevelConfig:
        return MidlevelConfig(window_cells=self.window_cells, cell=self.cell, score_floor=self.score_floor,
                              pyramid_step=self.pyramid_step, max_levels=self.max_levels,
                              nms_radius=self.nms_radius, colour_weight=self.colour_weight)


def train_elements(images: Sequence[np.ndarray], labels: Sequence[AffordanceMap], affordance: str,
                   config: MidlevelConfig = MidlevelConfig()) -> ElementBank:
    """Sample, cluster, optimise and calibrate elements for one affordance.

    Background windows from every other image train the detectors; those
    from the remaining images calibrate them.
    """
    rng = np.random.default_rng(config.seed)
    g = config.window_cells
    pyrs = [_pyramid(img, config) for img in images]
    pos = sample_patches(images, labels, affordance, config.min_coverage, config=config, rng=rng,
                         min_patches=max(config.k, 2 * config.min_members), pyramids=pyrs)
    neg = sample_patches(images, labels, affordance, config.min_coverage, config=config, rng=rng,
                         negatives=True, pyramids=pyrs)
    if len(neg) < 2 * config.min_tail:
        raise NoQualifyingPatches(f"{affordance}: only {len(neg)} background windows")
    even = neg.sources[:, 0] % 2 == 0
    if even.sum() < config.min_tail or (~even).sum() < config.min_tail:
        even = np.arange(len(neg)) % 2 == 0
    train_neg, calib_neg = neg.features[even], neg.features[~even]
    elements = init_clusters(pos, config.k, config.restarts, consistency=config.consistency,
                             min_members=config.min_members, seed=config.seed, affordance=affordance)
    # most consistent, then largest, clusters first
    elements.sort(key=lambda e: (-cluster_consistency(pos.labels[e.members]), -len(e.members),
                                 int(e.members[0])))
    elements = elements[: config.max_elements]
    out = []
    for el in elements:
        el = optimize_element(el, pos, train_neg, config, rng)
        try:
            out.append(calibrate(el, calib_neg, config))
        except DegenerateFit:
            continue
    return ElementBank(affordance, out, g, config.cell, BINS, config.score_floor, config.pyramid_step,
                       config.max_levels, config.nms_radius, config.colour_weight)


def score_maps(levels: Sequence[PyramidLevel], element: Element, g: int) -> List[np.ndarray]:
    """Raw detector score for every window position at every level."""
    W = element.w.reshape(g, g, -1)
    out = []
    for lev in levels:
        s = sum(signal.correlate(lev.cells[..., k], W[..., k], mode="valid")
                for k in range(W.shape[2]))
        out.append(s + element.bias)
    return out


def detections(levels: Sequence[PyramidLevel], element: Element, g: int, floor: float,
               nms_radius: int = 1) -> List[np.ndarray]:
    """Per-level transfer weights: calibrated score at detections, zero elsewhere.

    A detection is a window whose calibrated score reaches ``floor`` and,
    when ``nms_radius > 0``, whose raw score is the maximum of its
    (2r+1)^2-cell neighbourhood.
    """
    out = []
    for raw in score_maps(levels, element, g):
        keep = element.calibrated(raw) >= floor
        if nms_radius > 0:
            size = 2 * nms_radius + 1
            keep &= raw >= ndimage.maximum_filter(raw, size=size, mode="constant", cval=-np.inf)
        out.append(np.where(keep, element.calibrated(raw), 0.0))
    return out


def transfer(image_shape: Tuple[int, int], levels: Sequence[PyramidLevel],
             detections: Sequence[Tuple[Element, List[np.ndarray]]], g: int,
             cell: int = CELL) -> np.ndarray:
    """Weighted mean of pasted canonical forms; 0.5 where nothing was pasted.

    ``detections`` pairs each element with per-level maps of transfer
    weights (calibrated scores, zero where below the floor).
    """
    h, w = image_shape
    num = np.zeros((h, w))
    den = np.zeros((h, w))
    ones = np.ones((g, g))
    for li, lev in enumerate(levels):
        nr, nc = lev.cells.shape[:2]
        rows = np.floor((np.arange(h) + 0.5) * lev.scale).astype(int) // cell
        cols = np.floor((np.arange(w) + 0.5) * lev.scale).astype(int) // cell
        rin, cin = rows < nr, cols < nc
        n_cell = np.zeros((nr, nc))
        d_cell = np.zeros((nr, nc))
        for el, maps in detections:
            S = maps[li]
            if not S.any():
                continue
            n_cell += signal.convolve2d(S, el.F, mode="full")
            d_cell += signal.convolve2d(S, ones, mode="full")
        sub = np.ix_(np.flatnonzero(rin), np.flatnonzero(cin))
        num[sub] += n_cell[np.ix_(rows[rin], cols[cin])]
        den[sub] += d_cell[np.ix_(rows[rin], cols[cin])]
    out = np.full((h, w), 0.5)
    m = den > 1e-12
    out[m] = num[m] / den[m]
    return np.clip(out, 0.0, 1.0)


def infer(image: np.ndarray, bank: ElementBank) -> AffordanceMap:
    """Soft per-pixel affordance map from calibrated multi-scale detections."""
    if len(bank) == 0:
        raise ValueError("element bank is empty")
    g = bank.window_cells
    h, w = np.shape(image)[:2]
    if h < g * bank.cell or w < g * bank.cell:
        raise ImageTooSmall(f"image {h}x{w} smaller than one {g * bank.cell}px window")
    levels = _pyramid(image, bank.config())
    dets = [(el, detections(levels, el, g, bank.score_floor, bank.nms_radius))
            for el in bank.elements]
    scores = transfer((h, w), levels, dets, g, bank.cell)
    return AffordanceMap.from_scores(scores, bank.affordance)


# -- serialisation -------------------------------------------------------------

BANK_MAGIC = b"AFFELEM1"
_BANK_HEAD = struct.Struct("<8sIIIIIddIIdI")


def bank_to_bytes(bank: ElementBank) -> bytes:
    name = bank.affordance.encode("utf-8")
    out = [_BANK_HEAD.pack(BANK_MAGIC, 1, len(bank), bank.window_cells, bank.cell, bank.bins,
                           bank.score_floor, bank.pyramid_step, bank.max_levels, bank.nms_radius,
                           bank.colour_weight, len(name)), name]
    d = bank.window_cells ** 2 * bank.channels
    for el in bank.elements:
        if el.w.size != d or el.F.size != bank.window_cells ** 2:
            raise ValueError("element does not match the bank geometry")
        out.append(np.asarray(el.w, "<f8").tobytes())
        out.append(struct.pack("<d", el.bias))
        out.append(np.asarray(el.F, "<f8").ravel().tobytes())
        out.append(struct.pack("<3dI", *el.calibration, len(el.members)))
    return b"".join(out)


def bank_from_bytes(data: bytes) -> ElementBank:
    if data[:8] != BANK_MAGIC:
        raise ValueError("not an element bank file")
    (_, version, count, g, cell, bins, floor, step, levels, nms, colour,
     n) = _BANK_HEAD.unpack_from(data)
    if version != 1:
        raise ValueError(f"unsupported element bank version {version}")
    pos = _BANK_HEAD.size
    affordance = data[pos:pos + n].decode("utf-8")
    pos += n
    bank = ElementBank(affordance, [], g, cell, bins, floor, step, levels, nms, colour)
    d = g * g * bank.channels
    expected = pos + count * (8 * d + 8 + 8 * g * g + struct.calcsize("<3dI"))
    if len(data) != expected:
        raise ValueError(f"element bank file has {len(data)} bytes, expected {expected}")
    elements = []
    for _ in range(count):
        w = np.frombuffer(data, "<f8", d, pos).astype(float)
        pos += 8 * d
        (bias,) = struct.unpack_from("<d", data, pos)
        pos += 8
        F = np.frombuffer(data, "<f8", g * g, pos).astype(float).reshape(g, g)
        pos += 8 * g * g
        shape, scale, loc, nm = struct.unpack_from("<3dI", data, pos)
        pos += struct.calcsize("<3dI")
        elements.append(Element(affordance, w, bias, F, np.arange(nm), (shape, scale, loc)))
    bank.elements = elements
    return bank


def save_bank(path, bank: ElementBank) -> None:
    Path(path).write_bytes(bank_to_bytes(bank))


def load_bank(path) -> ElementBank:
    return bank_from_bytes(Path(path).read_bytes())
