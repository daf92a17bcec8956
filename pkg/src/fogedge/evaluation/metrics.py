"""Classification metrics, ROC AUC and bootstrap confidence intervals."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

from ..errors import DataError

METRIC_NAMES = ("sensitivity", "specificity", "precision", "f1", "accuracy", "auc")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def _checked(scores, labels):
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise DataError(f"scores {s.shape} and labels {y.shape} must be equal-length vectors")
    if len(s) == 0:
        raise DataError("need at least one score")
    if not np.isin(y, (0, 1)).all():
        raise DataError("labels must be 0/1")
    return s, y.astype(np.int64)


def confusion(scores, labels, threshold: float = 0.5) -> ConfusionCounts:
    s, y = _checked(scores, labels)
    pred = s >= threshold
    return ConfusionCounts(tp=int(np.sum(pred & (y == 1))), fp=int(np.sum(pred & (y == 0))),
                           tn=int(np.sum(~pred & (y == 0))), fn=int(np.sum(~pred & (y == 1))))


def _ratio(num, den):
    return num / den if den > 0 else None


def metrics_from_confusion(c: ConfusionCounts) -> dict:
    """Sensitivity, specificity, precision, F1, accuracy; ``None`` marks an undefined metric."""
    sens = _ratio(c.tp, c.tp + c.fn)
    spec = _ratio(c.tn, c.tn + c.fp)
    prec = _ratio(c.tp, c.tp + c.fp)
    if sens is None or prec is None or prec + sens == 0:
        f1 = None if sens is None or prec is None else 0.0
    else:
        f1 = 2 * prec * sens / (prec + sens)
    return {"sensitivity": sens, "specificity": spec, "precision": prec, "f1": f1,
            "accuracy": _ratio(c.tp + c.tn, c.total)}


def roc_curve(scores, labels):
    """(fpr, tpr) traced over all distinct thresholds, from (0,0) to (1,1)."""
    s, y = _checked(scores, labels)
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    distinct = np.r_[np.nonzero(np.diff(s))[0], len(s) - 1]
    tps = np.cumsum(y)[distinct]
    fps = (distinct + 1) - tps
    n_pos, n_neg = int(y.sum()), int(len(y) - y.sum())
    if n_pos == 0 or n_neg == 0:
        raise DataError("ROC needs both classes")
    return np.r_[0.0, fps / n_neg], np.r_[0.0, tps / n_pos]


def roc_auc(scores, labels) -> float:
    """Trapezoidal area under the ROC; tied scores contribute one half."""
    fpr, tpr = roc_curve(scores, labels)
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2))


def rank_auc(scores, labels) -> float:
    """Mann-Whitney form of the AUC (average ranks for ties)."""
    s, y = _checked(scores, labels)
    n_pos, n_neg = int(y.sum()), int(len(y) - y.sum())
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUC needs both classes")
    ranks = rankdata(s)
    return float((ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def youden_threshold(scores, labels) -> float:
    """Score threshold maximizing sensitivity + specificity - 1 (ties -> the higher threshold)."""
    s, y = _checked(scores, labels)
    if y.min() == y.max():
        return 0.5
    cand = np.unique(s)
    best_t, best_j = 0.5, -math.inf
    pos, neg = s[y == 1], s[y == 0]
    for t in cand[::-1]:
        j = np.mean(pos >= t) + np.mean(neg < t) - 1
        if j > best_j:
            best_t, best_j = float(t), j
    return best_t


def bootstrap_ci(outcomes, metric_fn, n_boot: int = 1000, seed: int = 0,
                 level: float = 0.95) -> tuple[float, float]:
    """Percentile bootstrap over rows of ``outcomes``; resamples yielding undefined metrics are skipped."""
    data = np.asarray(outcomes)
    n = len(data)
    if n < 10:
        raise DataError(f"bootstrap needs at least 10 outcomes, got {n}")
    rng = np.random.default_rng(seed)
    stats = []
    for _ in range(n_boot):
        try:
            v = metric_fn(data[rng.integers(0, n, size=n)])
        except DataError:
            continue
        if v is not None and math.isfinite(v):
            stats.append(v)
    if not stats:
        return (math.nan, math.nan)
    alpha = (1 - level) / 2
    lo, hi = np.quantile(stats, [alpha, 1 - alpha])
    return float(lo), float(hi)


def _metric_on_pairs(name: str, threshold: float):
    def fn(pairs):
        if name == "auc":
            return roc_auc(pairs[:, 0], pairs[:, 1].astype(int))
        return metrics_from_confusion(confusion(pairs[:, 0], pairs[:, 1].astype(int), threshold))[name]
    return fn


@dataclass
class MetricReport:
    sensitivity: float | None = None
    specificity: float | None = None
    precision: float | None = None
    f1: float | None = None
    accuracy: float | None = None
    auc: float | None = None
    n_windows: int = 0
    threshold: float | None = None
    ci95: dict = field(default_factory=dict)
    per_subject: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def metric(self, name: str):
        return getattr(self, name)


def report_from_scores(scores, labels, thresholds, n_boot: int = 1000, seed: int = 0) -> MetricReport:
    """Point metrics on pooled scores; ``thresholds`` is one value or one per window."""
    s, y = _checked(scores, labels)
    th = np.broadcast_to(np.asarray(thresholds, dtype=np.float64), s.shape)
    pred = (s >= th).astype(np.float64)
    c = confusion(pred, y, 0.5)
    m = metrics_from_confusion(c)
    try:
        m["auc"] = roc_auc(s, y)
    except DataError:
        m["auc"] = None
    rep = MetricReport(**m, n_windows=len(s),
                       threshold=float(th[0]) if np.all(th == th[0]) else None)
    if n_boot and len(s) >= 10:
        pairs = np.column_stack([s, y])
        decisions = np.column_stack([pred, y])
        for name in METRIC_NAMES:
            if name == "auc":
                rep.ci95[name] = bootstrap_ci(pairs, _metric_on_pairs("auc", 0.5), n_boot, seed)
            else:
                rep.ci95[name] = bootstrap_ci(decisions, _metric_on_pairs(name, 0.5), n_boot, seed)
    return rep
