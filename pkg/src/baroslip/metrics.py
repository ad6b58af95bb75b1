"""Confusion-matrix metrics, class-weighted averages and condition breakdowns."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .data import CURVATURES, MOTIONS, WindowSet
from .errors import DataError

CLASS_NAMES = ("static", "slip")

PRIMARY_AXES = (0, 90, 180, 270)
OBLIQUE_AXES = (45, 135, 225, 315)
# column order follows the published sensitivity table
BREAKDOWN_COLUMNS = ("planar", "spherical", "cyl_y", "cyl_x")


@dataclass
class ConfusionMatrix:
    """Rows are true classes, columns predicted classes."""

    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64).reshape(2, 2)
        if np.any(self.counts < 0):
            raise DataError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts)


def confusion(preds, labels) -> ConfusionMatrix:
    preds, labels = np.asarray(preds).astype(int), np.asarray(labels).astype(int)
    if preds.shape != labels.shape:
        raise DataError(f"preds and labels differ in length ({len(preds)} vs {len(labels)})")
    if len(labels) == 0:
        raise DataError("cannot build a confusion matrix from zero samples")
    counts = np.bincount(2 * labels + preds, minlength=4).reshape(2, 2)
    return ConfusionMatrix(counts)


@dataclass
class MetricsReport:
    precision: np.ndarray          # per class
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    accuracy: float
    weighted_precision: float
    weighted_recall: float
    weighted_f1: float
    degenerate: bool = False       # some zero denominator was defined as 0
    confusion: ConfusionMatrix | None = None

    @property
    def weighted_accuracy(self) -> float:
        return self.accuracy

    @property
    def macro_f1(self) -> float:
        return float(np.mean(self.f1))


def _safe_div(num, den):
    num, den = np.asarray(num, dtype=np.float64), np.asarray(den, dtype=np.float64)
    out = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    return out, bool(np.any(den == 0))


def metrics(cm: ConfusionMatrix) -> MetricsReport:
    """Per-class and support-weighted precision, recall and F1."""
    c = cm.counts.astype(np.float64)
    total = c.sum()
    if total <= 0:
        raise DataError("metrics need at least one sample")
    tp = np.diag(c)
    support = c.sum(axis=1)
    predicted = c.sum(axis=0)
    precision, d1 = _safe_div(tp, predicted)
    recall, d2 = _safe_div(tp, support)
    f1, d3 = _safe_div(2 * precision * recall, precision + recall)
    w = support / total
    return MetricsReport(
        precision=precision, recall=recall, f1=f1, support=support.astype(np.int64),
        accuracy=float(tp.sum() / total),
        weighted_precision=float(np.sum(w * precision)),
        weighted_recall=float(np.sum(w * recall)),
        weighted_f1=float(np.sum(w * f1)),
        degenerate=d1 or d2 or d3,
        confusion=cm,
    )


def evaluate(preds, labels) -> MetricsReport:
    return metrics(confusion(preds, labels))


# ---------------------------------------------------------------------------
# Breakdown by condition
# ---------------------------------------------------------------------------


@dataclass
class BreakdownReport:
    """Weighted F1 per (motion row, curvature) cell with pooled marginals.

    ``cells[row][column]`` is ``None`` when no window falls in the cell.
    """

    rows: list                      # (motion group, speed label)
    cells: dict = field(default_factory=dict)
    row_marginal: dict = field(default_factory=dict)      # curvature independent
    column_marginal: dict = field(default_factory=dict)   # motion independent
    counts: dict = field(default_factory=dict)


def _motion_group(motion: str, direction: float) -> str | None:
    if motion == "rotation":
        return "rotation"
    if motion == "translation":
        d = int(round(direction)) % 360
        if d in PRIMARY_AXES:
            return "translation_primary"
        if d in OBLIQUE_AXES:
            return "translation_oblique"
    return None


def _speed_label(group: str, speed: float) -> str:
    return "1 rad/s" if group == "rotation" else f"{speed * 100:g} cm/s"


def _f1_or_none(preds, labels):
    if len(labels) == 0:
        return None
    return metrics(confusion(preds, labels)).weighted_f1


def breakdown(preds, labels, windows: WindowSet) -> BreakdownReport:
    """F1 per motion/speed row and curvature column.

    Marginals pool the underlying predictions.  Windows from static
    recordings belong to no row and are left out.
    """
    preds, labels = np.asarray(preds), np.asarray(labels)
    if not (len(preds) == len(labels) == len(windows)):
        raise DataError("preds, labels and windows must align")
    groups = np.array([_motion_group(MOTIONS[m], d) or "" for m, d in zip(windows.motion, windows.direction)])
    row_keys = np.array([(_speed_label(g, s) if g else "") for g, s in zip(groups, windows.speed)])
    curv = np.array([CURVATURES[c] for c in windows.curvature])

    order = {"translation_primary": 0, "translation_oblique": 1, "rotation": 2}
    present = sorted({(g, r) for g, r in zip(groups, row_keys) if g},
                     key=lambda gr: (order[gr[0]], float(gr[1].split()[0])))
    report = BreakdownReport(rows=present)
    for g, r in present:
        in_row = (groups == g) & (row_keys == r)
        report.row_marginal[(g, r)] = _f1_or_none(preds[in_row], labels[in_row])
        for col in BREAKDOWN_COLUMNS:
            sel = in_row & (curv == col)
            report.cells[(g, r, col)] = _f1_or_none(preds[sel], labels[sel])
            report.counts[(g, r, col)] = int(sel.sum())
    in_any = groups != ""
    for col in BREAKDOWN_COLUMNS:
        sel = in_any & (curv == col)
        report.column_marginal[col] = _f1_or_none(preds[sel], labels[sel])
    return report


def pooled_f1(preds, labels, windows: WindowSet, motion: str = "translation", speed: float | None = None) -> float | None:
    """Weighted F1 over all windows of a motion type (and speed, if given)."""
    sel = windows.motion == MOTIONS.index(motion)
    if speed is not None:
        sel &= np.isclose(windows.speed, speed)
    return _f1_or_none(np.asarray(preds)[sel], np.asarray(labels)[sel])


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------


def pct(v: float | None) -> str:
    return "" if v is None else f"{100.0 * v:.1f}%"


def _metrics_rows(report: MetricsReport):
    header = ["row", "accuracy", "precision", "recall", "f1", "support"]
    rows = []
    for i, name in enumerate(CLASS_NAMES):
        rows.append([name, "", pct(report.precision[i]), pct(report.recall[i]), pct(report.f1[i]),
                     str(int(report.support[i]))])
    rows.append(["weighted", pct(report.accuracy), pct(report.weighted_precision), pct(report.weighted_recall),
                 pct(report.weighted_f1), str(int(np.sum(report.support)))])
    return header, rows


_GROUP_TITLES = {
    "translation_primary": "Translation (primary axes)",
    "translation_oblique": "Translation (oblique axes)",
    "rotation": "Rotation",
}


def _breakdown_rows(report: BreakdownReport):
    header = ["motion", "speed", *BREAKDOWN_COLUMNS, "curvature_independent"]
    rows = []
    for g, r in report.rows:
        rows.append([g, r] + [pct(report.cells[(g, r, c)]) for c in BREAKDOWN_COLUMNS]
                    + [pct(report.row_marginal[(g, r)])])
    rows.append(["motion_independent", ""] + [pct(report.column_marginal[c]) for c in BREAKDOWN_COLUMNS] + [""])
    return header, rows


def _comparison_rows(reports: dict):
    header = ["method", "accuracy", "precision", "recall", "f1"]
    rows = [[name, pct(r.accuracy), pct(r.weighted_precision), pct(r.weighted_recall), pct(r.weighted_f1)]
            for name, r in reports.items()]
    return header, rows


def table_rows(report):
    if isinstance(report, MetricsReport):
        return _metrics_rows(report)
    if isinstance(report, BreakdownReport):
        return _breakdown_rows(report)
    if isinstance(report, dict):
        return _comparison_rows(report)
    if isinstance(report, tuple) and len(report) == 2:
        return report
    raise TypeError(f"cannot render {type(report).__name__}")


def render(report, fmt: str = "csv") -> str:
    """CSV or markdown text for a metrics, breakdown or comparison report.

    A ``{name: MetricsReport}`` dict renders as a method comparison table;
    a ``(header, rows)`` tuple (as returned by :func:`parse_csv`) renders
    verbatim.
    """
    header, rows = table_rows(report)
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
        return buf.getvalue()
    if fmt == "markdown":
        titles = [_GROUP_TITLES.get(c, c) for c in header]
        lines = ["| " + " | ".join(titles) + " |", "|" + "|".join("---" for _ in header) + "|"]
        for row in rows:
            cells = [_GROUP_TITLES.get(c, c) for c in row]
            lines.append("| " + " | ".join(cells) + " |")
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown format {fmt!r}")


def parse_csv(text: str) -> tuple[list, list]:
    rows = list(csv.reader(io.StringIO(text)))
    return rows[0], rows[1:]
