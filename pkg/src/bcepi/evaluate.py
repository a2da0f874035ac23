"""Confusion matrix, Table-II-style classification report, permutation importance."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dataset import FEATURE_NAMES
from .errors import LengthMismatch
from .seeding import PERMUTATION, rng_for

CLASS_LABELS = ("Covid_Negative", "Covid_Positive")
REPORT_FORMATS = ("text", "csv")
METRICS = ("accuracy", "f1_positive")


@dataclass(frozen=True)
class ConfusionMatrix:
    tn: int
    fp: int
    fn: int
    tp: int

    @property
    def total(self) -> int:
        return self.tn + self.fp + self.fn + self.tp

    def transposed(self) -> "ConfusionMatrix":
        """Same counts with the positive and negative labels swapped."""
        return ConfusionMatrix(tn=self.tp, fp=self.fn, fn=self.fp, tp=self.tn)


def confusion(labels: Sequence[int], predictions: Sequence[int]) -> ConfusionMatrix:
    y = np.asarray(labels, dtype=np.int64).ravel()
    p = np.asarray(predictions, dtype=np.int64).ravel()
    if len(y) != len(p):
        raise LengthMismatch(f"{len(y)} labels vs {len(p)} predictions")
    if len(y) == 0:
        raise LengthMismatch("cannot build a confusion matrix from empty inputs")
    return ConfusionMatrix(tn=int(np.sum((y == 0) & (p == 0))), fp=int(np.sum((y == 0) & (p == 1))),
                           fn=int(np.sum((y == 1) & (p == 0))), tp=int(np.sum((y == 1) & (p == 1))))


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class ClassReport:
    negative: ClassMetrics
    positive: ClassMetrics
    accuracy: float
    macro_avg: tuple[float, float, float]
    weighted_avg: tuple[float, float, float]
    zero_division: list[str] = field(default_factory=list, compare=False)

    @property
    def total(self) -> int:
        return self.negative.support + self.positive.support


def _ratio(num: int, den: int, flag: str, flags: list[str]) -> float:
    if den == 0:
        flags.append(flag)
        return 0.0
    return num / den


def _f1(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def classification_report(cm: ConfusionMatrix) -> ClassReport:
    """Per-class precision/recall/F1, accuracy, macro and support-weighted averages.

    A zero denominator yields 0 and is recorded in ``zero_division``.
    """
    if cm.total <= 0:
        raise ValueError("confusion matrix is empty")
    flags: list[str] = []
    neg_p = _ratio(cm.tn, cm.tn + cm.fn, "negative precision", flags)
    neg_r = _ratio(cm.tn, cm.tn + cm.fp, "negative recall", flags)
    pos_p = _ratio(cm.tp, cm.tp + cm.fp, "positive precision", flags)
    pos_r = _ratio(cm.tp, cm.tp + cm.fn, "positive recall", flags)
    neg = ClassMetrics(neg_p, neg_r, _f1(neg_p, neg_r), cm.tn + cm.fp)
    pos = ClassMetrics(pos_p, pos_r, _f1(pos_p, pos_r), cm.tp + cm.fn)
    total = cm.total
    macro = tuple((getattr(neg, k) + getattr(pos, k)) / 2 for k in ("precision", "recall", "f1"))
    weighted = tuple((getattr(neg, k) * neg.support + getattr(pos, k) * pos.support) / total
                     for k in ("precision", "recall", "f1"))
    return ClassReport(neg, pos, (cm.tn + cm.tp) / total, macro, weighted, flags)


def report_text(report: ClassReport, digits: int = 2) -> str:
    """Fixed-width table laid out like scikit-learn's classification_report."""
    width = max(len(s) for s in (*CLASS_LABELS, "weighted avg"))
    head = f"{'':>{width}} {'precision':>9} {'recall':>9} {'f1-score':>9} {'support':>9}"
    lines = [head, ""]
    for label, m in zip(CLASS_LABELS, (report.negative, report.positive)):
        lines.append(f"{label:>{width}} {m.precision:>9.{digits}f} {m.recall:>9.{digits}f} "
                     f"{m.f1:>9.{digits}f} {m.support:>9d}")
    lines.append("")
    lines.append(f"{'accuracy':>{width}} {'':>9} {'':>9} {report.accuracy:>9.{digits}f} {report.total:>9d}")
    for label, (p, r, f) in (("macro avg", report.macro_avg), ("weighted avg", report.weighted_avg)):
        lines.append(f"{label:>{width}} {p:>9.{digits}f} {r:>9.{digits}f} {f:>9.{digits}f} {report.total:>9d}")
    return "\n".join(lines) + "\n"


def report_csv(report: ClassReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["class", "precision", "recall", "f1", "support"])
    for label, m in zip(CLASS_LABELS, (report.negative, report.positive)):
        w.writerow([label, repr(m.precision), repr(m.recall), repr(m.f1), m.support])
    w.writerow(["accuracy", "", "", repr(report.accuracy), report.total])
    for label, trio in (("macro avg", report.macro_avg), ("weighted avg", report.weighted_avg)):
        w.writerow([label, *(repr(v) for v in trio), report.total])
    return buf.getvalue()


def parse_report_csv(text: str) -> ClassReport:
    rows = {r["class"]: r for r in csv.DictReader(io.StringIO(text))}

    def metrics(label):
        r = rows[label]
        return ClassMetrics(float(r["precision"]), float(r["recall"]), float(r["f1"]), int(r["support"]))

    def trio(label):
        r = rows[label]
        return (float(r["precision"]), float(r["recall"]), float(r["f1"]))

    return ClassReport(metrics(CLASS_LABELS[0]), metrics(CLASS_LABELS[1]),
                       float(rows["accuracy"]["f1"]), trio("macro avg"), trio("weighted avg"))


def confusion_csv(cm: ConfusionMatrix) -> str:
    """2x2 matrix, rows = true class, columns = predicted class."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["true\\predicted", *CLASS_LABELS])
    w.writerow([CLASS_LABELS[0], cm.tn, cm.fp])
    w.writerow([CLASS_LABELS[1], cm.fn, cm.tp])
    return buf.getvalue()


# --- permutation importance ------------------------------------------------------

@dataclass
class ImportanceReport:
    features: tuple[str, ...]
    means: np.ndarray
    stds: np.ndarray
    metric: str
    repeats: int
    seed: int
    baseline: float
    scores: np.ndarray  # (n_features, repeats) metric drops

    def ranked(self) -> list[tuple[str, float, float]]:
        """(feature, mean, std) by descending mean; ties keep feature order."""
        order = sorted(range(len(self.features)), key=lambda k: (-self.means[k], k))
        return [(self.features[k], float(self.means[k]), float(self.stds[k])) for k in order]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["feature", "importance_mean", "importance_std"])
        for name, m, s in self.ranked():
            w.writerow([name, repr(m), repr(s)])
        return buf.getvalue()

    def group_means(self, groups: dict[str, Sequence[str]]) -> dict[str, float]:
        idx = {n: k for k, n in enumerate(self.features)}
        return {g: float(np.mean([self.means[idx[n]] for n in names])) for g, names in groups.items()}


def score(metric: str, labels, predictions) -> float:
    if metric == "accuracy":
        return float(np.mean(np.asarray(labels) == np.asarray(predictions)))
    if metric == "f1_positive":
        return classification_report(confusion(labels, predictions)).positive.f1
    raise ValueError(f"unknown metric {metric!r}; expected one of {METRICS}")


def permutation_importance(model, X, y, metric: str = "accuracy", repeats: int = 10,
                           seed: int = 0, feature_names: Sequence[str] = FEATURE_NAMES
                           ) -> ImportanceReport:
    """Mean drop in ``metric`` when one raw feature column is shuffled.

    ``model`` needs a ``predict_label(X)`` method taking raw (unstandardized)
    features. Repeat ``r`` of feature ``k`` shuffles with its own stream
    derived from ``(seed, k, r)``, so the result does not depend on the order
    the repeats are evaluated in.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(X) == 0:
        raise ValueError("evaluation set is empty")
    baseline = score(metric, y, model.predict_label(X))
    n_features = X.shape[1]
    drops = np.zeros((n_features, repeats))
    for k in range(n_features):
        for r in range(repeats):
            Xp = X.copy()
            Xp[:, k] = rng_for(seed, PERMUTATION, k, r).permutation(X[:, k])
            drops[k, r] = baseline - score(metric, y, model.predict_label(Xp))
    return ImportanceReport(tuple(feature_names), drops.mean(axis=1), drops.std(axis=1),
                            metric, repeats, seed, baseline, drops)


def export_report(report, fmt: str) -> str:
    """Serialize a ClassReport (text or csv) or ImportanceReport (csv)."""
    if fmt not in REPORT_FORMATS:
        raise ValueError(f"unknown report format {fmt!r}; valid formats: {', '.join(REPORT_FORMATS)}")
    if isinstance(report, ImportanceReport):
        if fmt == "csv":
            return report.to_csv()
        width = max(len(n) for n in report.features)
        lines = [f"{'feature':<{width}}  importance_mean  importance_std"]
        lines += [f"{n:<{width}}  {m:15.4f}  {s:14.4f}" for n, m, s in report.ranked()]
        return "\n".join(lines) + "\n"
    return report_text(report) if fmt == "text" else report_csv(report)

