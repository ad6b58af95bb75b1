from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from baroslip import metrics
from baroslip.data import CURVATURES, MOTIONS, WindowSet
from baroslip.errors import DataError
from baroslip.metrics import ConfusionMatrix, breakdown, confusion, evaluate, parse_csv, pct, render

GOLDEN = Path(__file__).parent / "golden"


def brute_force(preds, labels):
    """Per-class precision/recall/F1 straight from the pairs."""
    out = {}
    for c in (0, 1):
        tp = sum(1 for p, y in zip(preds, labels) if p == c and y == c)
        fp = sum(1 for p, y in zip(preds, labels) if p == c and y != c)
        fn = sum(1 for p, y in zip(preds, labels) if p != c and y == c)
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        out[c] = (prec, rec, f1, tp + fn)
    n = len(labels)
    acc = sum(p == y for p, y in zip(preds, labels)) / n
    w = {c: out[c][3] / n for c in (0, 1)}
    return out, acc, tuple(sum(w[c] * out[c][i] for c in (0, 1)) for i in range(3))


def test_hand_computed_example():
    r = metrics.metrics(ConfusionMatrix([[9, 1], [2, 8]]))
    assert r.accuracy == pytest.approx(0.85)
    np.testing.assert_allclose(r.f1, [0.857142857, 0.842105263], atol=1e-9)
    assert r.weighted_f1 == pytest.approx(0.8496, abs=1e-4)
    assert not r.degenerate


def test_trivial_cases():
    y = np.array([0, 1, 1, 0, 1])
    cm = confusion(y, y)
    assert cm.counts[0, 1] == cm.counts[1, 0] == 0
    assert np.all(np.diag(confusion(1 - y, y).counts) == 0)
    r = evaluate(y, y)
    assert r.accuracy == r.weighted_f1 == r.weighted_precision == 1.0
    with pytest.raises(DataError):
        confusion([], [])
    with pytest.raises(DataError):
        confusion([0, 1], [0])


def test_all_static_predictor_on_balanced_data():
    y = np.array([0, 1] * 50)
    r = evaluate(np.zeros(100, dtype=int), y)
    assert r.accuracy == 0.5 and r.recall[1] == 0.0
    assert r.degenerate  # slip precision has a zero denominator


@given(seed=st.integers(0, 2**31 - 1), n=st.integers(1, 60))
@settings(max_examples=100, deadline=None)
def test_matches_brute_force(seed, n):
    rng = np.random.default_rng(seed)
    preds, labels = rng.integers(0, 2, n), rng.integers(0, 2, n)
    r = evaluate(preds, labels)
    per, acc, (wp, wr, wf) = brute_force(preds.tolist(), labels.tolist())
    assert abs(r.accuracy - acc) <= 1e-12
    assert abs(r.weighted_precision - wp) <= 1e-12
    assert abs(r.weighted_recall - wr) <= 1e-12
    assert abs(r.weighted_f1 - wf) <= 1e-12
    assert abs(r.weighted_recall - r.accuracy) <= 1e-12
    for c in (0, 1):
        assert abs(r.f1[c] - per[c][2]) <= 1e-12


@given(seed=st.integers(0, 2**31 - 1))
@settings(max_examples=50, deadline=None)
def test_relabel_symmetry_and_balanced_macro(seed):
    rng = np.random.default_rng(seed)
    preds, labels = rng.integers(0, 2, 40), rng.integers(0, 2, 40)
    a, b = evaluate(preds, labels), evaluate(1 - preds, 1 - labels)
    assert a.accuracy == pytest.approx(b.accuracy)
    assert a.weighted_f1 == pytest.approx(b.weighted_f1)
    np.testing.assert_allclose(a.f1, b.f1[::-1])
    balanced = np.repeat([0, 1], 20)
    r = evaluate(preds, balanced)
    assert r.weighted_f1 == pytest.approx(r.macro_f1)


def test_confusion_additive():
    rng = np.random.default_rng(0)
    p, y = rng.integers(0, 2, 100), rng.integers(0, 2, 100)
    merged = confusion(p[:40], y[:40]) + confusion(p[40:], y[40:])
    np.testing.assert_array_equal(merged.counts, confusion(p, y).counts)


# -- breakdown --------------------------------------------------------------------

def _windows(rows):
    """rows: list of (motion, speed, direction, curvature, label)."""
    n = len(rows)
    return WindowSet(
        np.zeros((n, 6, 100)),
        np.array([r[4] for r in rows]),
        np.array([r[1] for r in rows], dtype=float),
        np.array([r[2] for r in rows], dtype=float),
        np.array([CURVATURES.index(r[3]) for r in rows]),
        np.array([MOTIONS.index(r[0]) for r in rows]),
        np.arange(n),
        np.arange(n),
        [],
    )


def test_single_cell_equals_overall():
    rng = np.random.default_rng(1)
    y = rng.integers(0, 2, 30)
    p = rng.integers(0, 2, 30)
    ws = _windows([("translation", 0.05, 90.0, "spherical", int(v)) for v in y])
    bd = breakdown(p, y, ws)
    overall = evaluate(p, y).weighted_f1
    key = ("translation_primary", "5 cm/s")
    assert bd.rows == [key]
    assert bd.cells[key + ("spherical",)] == pytest.approx(overall)
    assert bd.row_marginal[key] == pytest.approx(overall)
    assert bd.column_marginal["spherical"] == pytest.approx(overall)
    assert bd.cells[key + ("planar",)] is None


def test_pooled_marginal_differs_from_mean():
    # cell A: 8 windows, every slip missed; cell B: 2 windows, perfect
    rows = [("translation", 0.1, 45.0, "planar", v) for v in [0, 0, 0, 0, 1, 1, 1, 1]]
    rows += [("translation", 0.1, 45.0, "cyl_x", v) for v in [0, 1]]
    preds = np.array([0, 0, 0, 0, 0, 0, 0, 0, 0, 1])
    ws = _windows(rows)
    y = np.array([r[4] for r in rows])
    bd = breakdown(preds, y, ws)
    key = ("translation_oblique", "10 cm/s")
    a, b = bd.cells[key + ("planar",)], bd.cells[key + ("cyl_x",)]
    pooled = bd.row_marginal[key]
    assert pooled == pytest.approx(evaluate(preds, y).weighted_f1)
    assert abs(pooled - (a + b) / 2) > 0.05


def test_breakdown_groups_and_static_excluded():
    rows = [("translation", 0.05, d, "planar", 1) for d in (0.0, 45.0, 270.0, 315.0)]
    rows += [("rotation", 0.0, -1.0, "cyl_y", 1), ("static", 0.0, -1.0, "planar", 0)]
    ws = _windows(rows)
    bd = breakdown(np.ones(6, dtype=int), ws.y, ws)
    assert bd.rows == [("translation_primary", "5 cm/s"), ("translation_oblique", "5 cm/s"), ("rotation", "1 rad/s")]
    assert sum(bd.counts.values()) == 5


# -- rendering ---------------------------------------------------------------------

def test_pct():
    assert pct(0.914) == "91.4%"
    assert pct(1.0) == "100.0%"
    assert pct(None) == ""


def _golden_inputs():
    rng = np.random.default_rng(42)
    rows = []
    for speed in (0.05, 0.075, 0.1):
        for d in (0.0, 45.0):
            for curv in CURVATURES:
                rows += [("translation", speed, d, curv, int(v)) for v in rng.integers(0, 2, 12)]
    rows += [("rotation", 0.0, -1.0, c, int(v)) for c in CURVATURES for v in rng.integers(0, 2, 12)]
    ws = _windows(rows)
    flip = rng.random(len(rows)) < 0.15
    preds = np.where(flip, 1 - ws.y, ws.y)
    return preds, ws


@pytest.mark.parametrize("kind,fmt,ext", [("metrics", "csv", "csv"), ("metrics", "markdown", "md"),
                                          ("breakdown", "csv", "csv"), ("breakdown", "markdown", "md")])
def test_golden_files(kind, fmt, ext):
    preds, ws = _golden_inputs()
    report = evaluate(preds, ws.y) if kind == "metrics" else breakdown(preds, ws.y, ws)
    assert render(report, fmt) == (GOLDEN / f"{kind}.{ext}").read_text()


def test_markdown_one_row_per_motion_speed():
    preds, ws = _golden_inputs()
    md = render(breakdown(preds, ws.y, ws), "markdown").splitlines()
    body = [line for line in md[2:] if not line.startswith("| motion_independent")]
    assert len(body) == 3 + 3 + 1


def test_csv_render_parse_fixpoint():
    preds, ws = _golden_inputs()
    for report in (evaluate(preds, ws.y), breakdown(preds, ws.y, ws)):
        text = render(report, "csv")
        assert render(parse_csv(text), "csv") == text


def test_comparison_table():
    y = np.array([0, 1, 0, 1])
    text = render({"psd": evaluate([0, 0, 0, 1], y), "tcn": evaluate(y, y)}, "csv")
    assert text.splitlines()[2] == "tcn,100.0%,100.0%,100.0%,100.0%"
    with pytest.raises(ValueError):
        render(evaluate(y, y), "html")
