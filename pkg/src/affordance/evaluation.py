"""Precision-recall evaluation of soft affordance maps against tri-state labels.

Pixels whose reference label is UNKNOWN are ignored unless the caller asks
for them to be counted as negatives.  Average precision is the
non-interpolated sum over score thresholds of (recall gain) x (precision),
with tied scores forming a single threshold.
"""

from __future__ import annotations

import csv
import io as _io
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from sklearn.metrics import average_precision_score, precision_recall_curve

from .errors import DimensionMismatch, NoPositives
from .labeler import AffordanceMap, Label

# Published NYUv2 per-pixel AP (percent) for the direct-perception models,
# kept for context only; they are not reproducible on the synthetic suite.
REFERENCE_AP_NYUV2 = {
    "standing": {"cnn": 88.55, "midlevel": 83.81},
    "sitting_upright": {"cnn": 37.34, "midlevel": 31.95},
}


@dataclass(frozen=True)
class PRCurve:
    recall: np.ndarray       # non-decreasing
    precision: np.ndarray
    thresholds: np.ndarray   # descending; point i uses score >= thresholds[i]
    ap: float
    n_known: int
    n_positive: int

    @property
    def points(self) -> List[Tuple[float, float]]:
        return list(zip(self.recall.tolist(), self.precision.tolist()))


def _known_pixels(scores, truth, include_unknown_as_negative: bool):
    s = np.asarray(scores, float)
    lab = np.asarray(truth.labels if isinstance(truth, AffordanceMap) else truth)
    if s.shape != lab.shape:
        raise DimensionMismatch(f"scores {s.shape} vs labels {lab.shape}")
    keep = np.ones(lab.shape, bool) if include_unknown_as_negative else lab != Label.UNKNOWN
    return s[keep].ravel(), (lab[keep] == Label.SUPPORTS).ravel()


def pr_curve(scores, truth, *, include_unknown_as_negative: bool = False) -> PRCurve:
    """PR curve and average precision of ``scores`` against tri-state ``truth``.

    ``scores`` and ``truth`` may also be lists of aligned arrays, which are
    pooled.  Raises ``NoPositives`` if no known pixel is SUPPORTS.
    """
    s, y = _pool(scores, truth, include_unknown_as_negative)
    if not y.any():
        raise NoPositives("reference has no SUPPORTS pixels")
    precision, recall, thr = precision_recall_curve(y, s)
    # sklearn lists thresholds ascending and appends the (recall 0, precision 1) end point
    order = slice(None, -1)
    recall, precision = recall[order][::-1], precision[order][::-1]
    return PRCurve(recall.copy(), precision.copy(), thr[::-1].copy(),
                   float(average_precision_score(y, s)), int(len(y)), int(y.sum()))


def average_precision(scores, truth, *, include_unknown_as_negative: bool = False) -> float:
    return pr_curve(scores, truth, include_unknown_as_negative=include_unknown_as_negative).ap


def _pool(scores, truth, include_unknown_as_negative):
    if isinstance(scores, (list, tuple)):
        if len(scores) != len(truth):
            raise DimensionMismatch("different numbers of score and label maps")
        parts = [_known_pixels(a, b, include_unknown_as_negative) for a, b in zip(scores, truth)]
        if not parts:
            return np.zeros(0), np.zeros(0, bool)
        return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])
    return _known_pixels(scores, truth, include_unknown_as_negative)


def jaccard_sweep(scores, truth, *, include_unknown_as_negative: bool = False
                  ) -> Tuple[np.ndarray, np.ndarray]:
    """(thresholds ascending, Jaccard of ``score >= threshold``) over observed scores."""
    s, y = _pool(scores, truth, include_unknown_as_negative)
    if not y.any():
        raise NoPositives("reference has no SUPPORTS pixels")
    thr, inv = np.unique(s, return_inverse=True)
    # counts of pixels (and positives) at or above each distinct score
    n_at = np.bincount(inv, minlength=len(thr))
    pos_at = np.bincount(inv, weights=y, minlength=len(thr))
    n_pred = np.cumsum(n_at[::-1])[::-1]
    tp = np.cumsum(pos_at[::-1])[::-1]
    jac = tp / (n_pred + y.sum() - tp)
    return thr, jac


def select_threshold_jaccard(scores, truth, *, include_unknown_as_negative: bool = False) -> float:
    """Observed score maximising the Jaccard index of ``score >= t``; ties go to the lowest."""
    thr, jac = jaccard_sweep(scores, truth, include_unknown_as_negative=include_unknown_as_negative)
    return float(thr[int(np.argmax(jac))])


# -- reports -------------------------------------------------------------------

@dataclass(frozen=True)
class EvalRow:
    affordance: str
    ap: float
    n_known: int
    n_positive: int


def evaluate(predictions: Dict[str, Sequence[np.ndarray]], truths: Dict[str, Sequence[AffordanceMap]],
             *, include_unknown_as_negative: bool = False) -> Tuple[List[EvalRow], Dict[str, PRCurve]]:
    """Pooled per-affordance AP.  Affordances without positives get ap = nan."""
    rows, curves = [], {}
    for name in predictions:
        preds, refs = list(predictions[name]), list(truths.get(name, []))
        try:
            c = pr_curve(preds, refs, include_unknown_as_negative=include_unknown_as_negative)
        except NoPositives:
            s, y = _pool(preds, refs, include_unknown_as_negative)
            rows.append(EvalRow(name, float("nan"), int(len(y)), 0))
            continue
        curves[name] = c
        rows.append(EvalRow(name, c.ap, c.n_known, c.n_positive))
    return rows, curves


def report_csv(rows: Iterable[EvalRow]) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["affordance", "ap", "n_known", "n_positive"])
    for r in rows:
        w.writerow([r.affordance, f"{r.ap:.6f}", r.n_known, r.n_positive])
    return buf.getvalue()


def curve_csv(curve: PRCurve) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["threshold", "recall", "precision"])
    for t, r, p in zip(curve.thresholds, curve.recall, curve.precision):
        w.writerow([f"{t:.9g}", f"{r:.9g}", f"{p:.9g}"])
    return buf.getvalue()


def plot_curves_svg(curves: Dict[str, PRCurve], path, title: Optional[str] = None) -> None:
    """Write the PR curves as a deterministic SVG."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with matplotlib.rc_context({"svg.hashsalt": "affordance", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(4.5, 4.0))
        for name, c in curves.items():
            ax.step(np.r_[0.0, c.recall], np.r_[c.precision[:1], c.precision], where="post",
                    label=f"{name} (AP {c.ap:.3f})")
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1.02)
        ax.set_xlabel("recall")
        ax.set_ylabel("precision")
        if title:
            ax.set_title(title)
        ax.legend(loc="lower left", fontsize=8)
        fig.tight_layout()
        fig.savefig(Path(path), format="svg", metadata={"Date": None})
        plt.close(fig)
