import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from affordance import evaluation as ev
from affordance.errors import DimensionMismatch, NoPositives
from affordance.labeler import AffordanceMap, Label
from oracles import brute_force_ap, brute_force_jaccard_threshold, brute_force_pr


def tri_state(rng, shape, p_unknown=0.2):
    lab = np.where(rng.random(shape) < 0.4, Label.SUPPORTS, Label.NOT).astype(np.int8)
    lab[rng.random(shape) < p_unknown] = Label.UNKNOWN
    return lab


def test_perfect_scores_give_unit_ap():
    rng = np.random.default_rng(0)
    lab = tri_state(rng, (10, 10))
    scores = (lab == Label.SUPPORTS).astype(float)
    assert ev.average_precision(scores, lab) == pytest.approx(1.0)


def test_constant_scores_give_prevalence():
    rng = np.random.default_rng(1)
    lab = tri_state(rng, (12, 12))
    known = lab != Label.UNKNOWN
    prevalence = np.mean(lab[known] == Label.SUPPORTS)
    assert ev.average_precision(np.full(lab.shape, 0.3), lab) == pytest.approx(prevalence)


def test_unknown_pixels_ignored_or_counted():
    lab = np.array([[1, 0, -1, -1]], np.int8)
    s = np.array([[0.9, 0.1, 0.95, 0.2]])
    assert ev.average_precision(s, lab) == 1.0
    c = ev.pr_curve(s, lab, include_unknown_as_negative=True)
    assert c.n_known == 4 and c.n_positive == 1
    assert c.ap == pytest.approx(0.5)


@given(st.integers(0, 10 ** 6))
def test_curve_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    lab = tri_state(rng, (6, 7))
    if not np.any(lab == Label.SUPPORTS):
        return
    scores = np.round(rng.random((6, 7)), 1)
    c = ev.pr_curve(scores, lab)
    known = lab != Label.UNKNOWN
    t, r, p = brute_force_pr(scores[known], lab[known] == Label.SUPPORTS)
    assert np.allclose(c.thresholds, t) and np.allclose(c.recall, r) and np.allclose(c.precision, p)
    assert c.ap == pytest.approx(brute_force_ap(scores[known], lab[known] == Label.SUPPORTS), abs=1e-12)
    assert np.all(np.diff(c.recall) >= 0)


def test_pooling_equals_concatenation():
    rng = np.random.default_rng(2)
    labs = [tri_state(rng, (5, 5)), tri_state(rng, (3, 8))]
    scores = [rng.random(l.shape) for l in labs]
    pooled = ev.average_precision(scores, labs)
    flat_s = np.concatenate([s.ravel() for s in scores])[None]
    flat_l = np.concatenate([l.ravel() for l in labs])[None]
    assert pooled == ev.average_precision(flat_s, flat_l)


def test_errors():
    with pytest.raises(NoPositives):
        ev.pr_curve(np.zeros((2, 2)), np.zeros((2, 2), np.int8))
    with pytest.raises(DimensionMismatch):
        ev.pr_curve(np.zeros((2, 2)), np.ones((2, 3), np.int8))
    with pytest.raises(DimensionMismatch):
        ev.pr_curve([np.zeros((2, 2))], [])


# -- Jaccard threshold ---------------------------------------------------------

def test_jaccard_picks_exact_separator():
    lab = np.array([[1, 1, 0, 0, -1]], np.int8)
    s = np.array([[0.8, 0.6, 0.4, 0.2, 0.9]])
    assert ev.select_threshold_jaccard(s, lab) == 0.6


def test_jaccard_ties_go_to_lowest_threshold():
    lab = np.array([[1, 0, 1, 0]], np.int8)
    s = np.array([[0.9, 0.5, 0.3, 0.1]])
    thr, jac = ev.jaccard_sweep(s, lab)
    assert thr.tolist() == [0.1, 0.3, 0.5, 0.9]
    assert np.allclose(jac, [0.5, 2 / 3, 1 / 3, 0.5])
    lab = np.array([[1, 0, 0, 1]], np.int8)
    s = np.array([[0.9, 0.7, 0.5, 0.1]])
    _, jac = ev.jaccard_sweep(s, lab)
    # the lowest and highest thresholds tie at 1/2
    assert jac[0] == jac[-1] == 0.5
    assert ev.select_threshold_jaccard(s, lab) == 0.1


@given(st.integers(0, 10 ** 6))
def test_jaccard_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    lab = tri_state(rng, (5, 5))
    if not np.any(lab == Label.SUPPORTS):
        return
    s = np.round(rng.random((5, 5)), 1)
    known = lab != Label.UNKNOWN
    t, j = brute_force_jaccard_threshold(s[known], lab[known] == Label.SUPPORTS)
    assert ev.select_threshold_jaccard(s, lab) == t
    assert ev.jaccard_sweep(s, lab)[1].max() == pytest.approx(j)


# -- reports -------------------------------------------------------------------

def test_evaluate_and_report_csv():
    rng = np.random.default_rng(3)
    lab = tri_state(rng, (6, 6))
    preds = {"standing": [rng.random((6, 6))], "lying": [rng.random((6, 6))]}
    truths = {"standing": [AffordanceMap(lab, "standing")],
              "lying": [AffordanceMap(np.zeros((6, 6), np.int8), "lying")]}
    rows, curves = ev.evaluate(preds, truths)
    assert set(curves) == {"standing"}
    assert rows[0].ap == pytest.approx(curves["standing"].ap)
    assert math.isnan(rows[1].ap) and rows[1].n_positive == 0 and rows[1].n_known == 36
    text = ev.report_csv(rows).splitlines()
    assert text[0] == "affordance,ap,n_known,n_positive"
    assert text[2] == "lying,nan,36,0"
    lines = ev.curve_csv(curves["standing"]).splitlines()
    assert lines[0] == "threshold,recall,precision"
    assert len(lines) == len(curves["standing"].thresholds) + 1


def test_svg_is_written_deterministically(tmp_path):
    rng = np.random.default_rng(4)
    lab = tri_state(rng, (8, 8))
    curves = {"standing": ev.pr_curve(rng.random((8, 8)), lab)}
    ev.plot_curves_svg(curves, tmp_path / "a.svg", title="PR")
    ev.plot_curves_svg(curves, tmp_path / "b.svg", title="PR")
    a = (tmp_path / "a.svg").read_bytes()
    assert a.startswith(b"<?xml") and b"<svg" in a
    assert a == (tmp_path / "b.svg").read_bytes()
