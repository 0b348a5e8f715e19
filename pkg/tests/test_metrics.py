import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from guidance_lab.errors import DimensionError, ParameterError, UndefinedMetricError
from guidance_lab.metrics import (
    MetricsReport,
    build_report,
    mean_distance,
    preference_score,
    suppression_rate,
    w2_exact,
)
from oracles import w2_bruteforce

NEG = np.array([2.0, 0.0])
POS = np.array([-2.0, 0.0])


def test_suppression_extremes():
    at_pos = np.tile(POS, (10, 1))
    at_neg = np.tile(NEG, (10, 1))
    assert suppression_rate(at_pos, NEG, POS) == 0.0
    assert suppression_rate(at_neg, NEG, POS) == 1.0


def test_suppression_tie_counts_as_positive_side():
    midpoint = np.array([[0.0, 3.7]])  # equidistant from both centers
    assert suppression_rate(midpoint, NEG, POS) == 0.0


def test_suppression_errors():
    with pytest.raises(UndefinedMetricError):
        suppression_rate(np.zeros((0, 2)), NEG, POS)
    with pytest.raises(ParameterError):
        suppression_rate(np.zeros((3, 2)), NEG, NEG)


@given(st.floats(0, 2 * np.pi), st.floats(-5, 5), st.floats(-5, 5), st.integers(0, 2**31))
def test_suppression_rigid_transform_invariance(angle, tx, ty, seed):
    rng = np.random.default_rng(seed)
    samples = rng.standard_normal((40, 2)) * 1.5
    rot = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
    shift = np.array([tx, ty])
    base = suppression_rate(samples, NEG, POS)
    moved = suppression_rate(samples @ rot.T + shift, NEG @ rot.T + shift, POS @ rot.T + shift)
    assert moved == base


def test_mean_distance():
    pts = np.array([[0.0, 0.0], [0.0, 2.0]])
    assert mean_distance(pts, np.array([0.0, 1.0])) == pytest.approx(1.0)


# --- transport distance --------------------------------------------------------


def test_w2_identical_sets_zero():
    pts = np.random.default_rng(0).standard_normal((12, 2))
    assert w2_exact(pts, pts.copy()) == 0.0


def test_w2_two_points():
    a = np.array([[0.0, 0.0]])
    b = np.array([[3.0, 4.0]])
    assert w2_exact(a, b) == pytest.approx(5.0)


def test_w2_permutation_is_zero_and_matches_bruteforce():
    rng = np.random.default_rng(1)
    a = rng.standard_normal((8, 2))
    b = a[rng.permutation(8)]
    assert w2_exact(a, b) == pytest.approx(0.0, abs=1e-12)
    assert w2_bruteforce(a, b) == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("n", [1, 2, 3, 4, 5, 6, 7, 8])
def test_w2_matches_bruteforce(n):
    rng = np.random.default_rng(n)
    a, b = rng.standard_normal((n, 2)), rng.standard_normal((n, 2))
    assert w2_exact(a, b) == pytest.approx(w2_bruteforce(a, b), abs=1e-9)


def test_w2_metric_properties():
    rng = np.random.default_rng(2)
    for _ in range(10):
        a, b, c = (rng.standard_normal((6, 2)) for _ in range(3))
        dab, dba = w2_exact(a, b), w2_exact(b, a)
        assert dab == pytest.approx(dba, abs=1e-12)
        assert w2_exact(a, b) + w2_exact(b, c) >= w2_exact(a, c) - 1e-9


def test_w2_validation():
    with pytest.raises(DimensionError):
        w2_exact(np.zeros((3, 2)), np.zeros((4, 2)))
    with pytest.raises(ParameterError):
        w2_exact(np.zeros((257, 2)), np.zeros((257, 2)))
    with pytest.raises(UndefinedMetricError):
        w2_exact(np.zeros((0, 2)), np.zeros((0, 2)))


# --- preference score -----------------------------------------------------------


def test_preference_symmetry_and_extremes():
    assert preference_score(5, 5, 3) == 0.0
    assert preference_score(7, 0, 0) == 1.0
    assert preference_score(0, 7, 0) == -1.0


def test_preference_reported_value():
    # counts engineered to land on the +33.9% headline figure
    assert preference_score(600, 261, 139) == pytest.approx(0.339, abs=1e-12)
    assert round(100 * preference_score(600, 261, 139), 1) == 33.9


@given(st.integers(0, 500), st.integers(0, 500), st.integers(0, 500))
def test_preference_antisymmetry(p, n, s):
    if p + n + s == 0:
        return
    assert preference_score(p, n, s) == -preference_score(n, p, s)
    assert -1.0 <= preference_score(p, n, s) <= 1.0


def test_preference_errors():
    with pytest.raises(UndefinedMetricError):
        preference_score(0, 0, 0)
    with pytest.raises(ParameterError):
        preference_score(-1, 2, 3)


# --- report ---------------------------------------------------------------------


def test_report_json_field_names():
    rng = np.random.default_rng(3)
    samples = rng.standard_normal((30, 2)) + POS
    target = rng.standard_normal((30, 2)) + POS
    report = build_report(samples, NEG, POS, target)
    doc = json.loads(report.to_json())
    assert set(doc) == {
        "suppression_rate",
        "mean_neg_mode_distance",
        "w2_to_target",
        "n_samples",
    }
    assert doc["n_samples"] == 30
    assert 0.0 <= doc["suppression_rate"] <= 1.0


def test_report_validation():
    with pytest.raises(ParameterError):
        MetricsReport(suppression_rate=1.5, mean_neg_mode_distance=0.0,
                      w2_to_target=0.0, n_samples=1)
