"""Classification metrics and ROC analysis."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class MetricError(ValueError):
    pass


@dataclass
class MetricsReport:
    accuracy: float
    precision: list[float]
    sensitivity: list[float]
    f1: list[float]
    confusion: list[list[int]]
    auc: float | None = None
    roc_points: list[tuple[float, float, float]] = field(default_factory=list)
    loss_history: list[dict[str, float]] = field(default_factory=list)
    zero_division: list[str] = field(default_factory=list)

    @property
    def macro_f1(self) -> float:
        return float(np.mean(self.f1))

    @property
    def n_evaluated(self) -> int:
        return int(np.sum(self.confusion))

    def to_dict(self, include_history: bool = False) -> dict:
        d = {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "sensitivity": self.sensitivity,
            "f1": self.f1,
            "macro_f1": self.macro_f1,
            "confusion": self.confusion,
            "auc": self.auc,
            "zero_division": self.zero_division,
        }
        if include_history:
            d["loss_history"] = self.loss_history
        return d


def roc_auc(scores, labels) -> tuple[float, list[tuple[float, float, float]]]:
    """ROC points from a descending sweep over unique scores, and trapezoidal AUC.

    ``labels`` is 1 for the positive class. Points are (fpr, tpr, threshold),
    starting at (0, 0, inf); a score >= threshold counts as positive. Tied
    scores move the curve diagonally, so the area matches the Mann-Whitney
    statistic with ties counted one half.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    if s.shape != y.shape or s.ndim != 1:
        raise MetricError(f"scores {s.shape} and labels {y.shape} must be matching vectors")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC is undefined when only one class is present")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    # last index of each run of equal scores
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tp = np.cumsum(y)[ends]
    fp = np.cumsum(~y)[ends]
    tpr = np.r_[0, tp] / n_pos
    fpr = np.r_[0, fp] / n_neg
    thresholds = np.r_[np.inf, s[ends]]
    auc = float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2.0))
    points = [(float(a), float(b), float(c)) for a, b, c in zip(fpr, tpr, thresholds)]
    return auc, points


def mann_whitney_auc(scores, labels) -> float:
    """O(n_pos * n_neg) pairwise reference for the AUC."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    pos, neg = s[y], s[~y]
    if pos.size == 0 or neg.size == 0:
        raise MetricError("AUC is undefined when only one class is present")
    wins = 0.0
    for p in pos:
        for q in neg:
            wins += 1.0 if p > q else 0.5 if p == q else 0.0
    return wins / (pos.size * neg.size)


def _safe_div(num: float, den: float, name: str, flags: list[str]) -> float:
    if den == 0:
        flags.append(name)
        return 0.0
    return float(num / den)


def evaluate(probabilities, labels, positive_class: int = 1) -> MetricsReport:
    """Argmax predictions scored against one-hot or index labels.

    Ties in argmax resolve to the lower class index. Zero denominators yield 0
    and are listed in ``zero_division``. For two classes the ROC uses the
    probability of ``positive_class`` as the score.
    """
    P = np.asarray(probabilities, dtype=np.float64)
    y = np.asarray(labels)
    if y.ndim == 2:
        y = y.argmax(axis=1)
    y = y.astype(int)
    if P.ndim != 2 or P.shape[0] != y.shape[0]:
        raise MetricError(f"probabilities {P.shape} do not match {y.shape[0]} labels")
    if not np.allclose(P.sum(axis=1), 1.0, atol=1e-6):
        raise MetricError("probability rows must sum to 1")
    C = P.shape[1]
    pred = P.argmax(axis=1)
    conf = np.zeros((C, C), dtype=int)
    np.add.at(conf, (y, pred), 1)
    flags: list[str] = []
    prec, sens, f1 = [], [], []
    for c in range(C):
        tp = conf[c, c]
        p = _safe_div(tp, conf[:, c].sum(), f"precision[{c}]", flags)
        r = _safe_div(tp, conf[c, :].sum(), f"sensitivity[{c}]", flags)
        prec.append(p)
        sens.append(r)
        f1.append(_safe_div(2 * p * r, p + r, f"f1[{c}]", flags))
    acc = float(np.trace(conf) / conf.sum()) if conf.sum() else 0.0
    report = MetricsReport(acc, prec, sens, f1, conf.tolist(), zero_division=flags)
    if C == 2 and len(np.unique(y)) == 2:
        report.auc, report.roc_points = roc_auc(P[:, positive_class], y == positive_class)
    return report
