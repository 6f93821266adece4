"""Time-series cross-validation and precision-recall metrics."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class CVSplit:
    index: int
    train: np.ndarray
    test: np.ndarray


def _fold_boundaries(group_ends: list[int], n: int, k: int) -> list[int]:
    """Pick k cut points from ``group_ends`` closest to equal-count fold edges.

    Remainder records go to the earliest folds, so nominal fold sizes are
    ``ceil`` for the first ``n % (k+1)`` folds and ``floor`` after.
    """
    n_folds = k + 1
    base, rem = divmod(n, n_folds)
    nominal, acc = [], 0
    for f in range(k):
        acc += base + (1 if f < rem else 0)
        nominal.append(acc)
    cuts = []
    lo = 0
    for j, target in enumerate(nominal):
        # leave enough group ends for the remaining cuts and a non-empty last fold
        hi = len(group_ends) - (k - j)
        candidates = group_ends[lo:hi]
        best = min(range(len(candidates)), key=lambda c: (abs(candidates[c] - target), c))
        cuts.append(candidates[best])
        lo = lo + best + 1
    return cuts


def time_series_splits(dates: Sequence, k: int = 3) -> list[CVSplit]:
    """Expanding-window splits over records ordered by ``dates``.

    Records are stably sorted by date and cut into ``k + 1`` folds of (as
    near as possible) equal size; split ``i`` trains on folds ``1..i`` and
    tests on fold ``i + 1``.  Records sharing a date are never separated, so
    every training date strictly precedes every test date.  Indices refer to
    positions in ``dates``.
    """
    n = len(dates)
    if k < 1:
        raise ValueError("k must be >= 1")
    if n < k + 1:
        raise ValueError(f"need at least {k + 1} records for {k} splits, got {n}")
    order = sorted(range(n), key=lambda i: dates[i])
    group_ends = [i + 1 for i in range(n - 1) if dates[order[i]] != dates[order[i + 1]]] + [n]
    if len(group_ends) < k + 1:
        raise ValueError(f"need at least {k + 1} distinct dates for {k} splits, got {len(group_ends)}")
    cuts = _fold_boundaries(group_ends, n, k) + [n]
    order = np.asarray(order, dtype=np.int64)
    return [CVSplit(i + 1, order[: cuts[i]], order[cuts[i] : cuts[i + 1]]) for i in range(k)]


@dataclass(frozen=True)
class PRPoint:
    threshold: float
    precision: float
    recall: float
    tp: int
    fp: int
    fn: int


def pr_curve(scores: Sequence[float], labels: Sequence[int]) -> list[PRPoint]:
    """One point per distinct score, thresholds descending; positive iff ``score >= threshold``."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError(f"scores and labels must be equal-length vectors, got {s.shape} and {y.shape}")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    n_pos = int(y.sum())
    if n_pos == 0:
        raise ValueError("pr_curve needs at least one positive label")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    tps = np.cumsum(y)
    last = np.r_[np.flatnonzero(s[1:] != s[:-1]), len(s) - 1]
    points = []
    for i in last:
        tp = int(tps[i])
        fp = int(i + 1 - tp)
        points.append(PRPoint(float(s[i]), tp / (tp + fp), tp / n_pos, tp, fp, n_pos - tp))
    return points


def recall_at_precision(curve: Sequence[PRPoint], target: float = 0.95) -> float:
    """Highest recall among points with precision >= ``target`` (0 if none)."""
    return max((p.recall for p in curve if p.precision >= target), default=0.0)


def pr_auc(curve: Sequence[PRPoint]) -> float:
    """Non-interpolated average precision: sum of precision times recall increments."""
    if not curve:
        raise ValueError("empty curve")
    n_pos = curve[0].tp + curve[0].fn
    area, prev_tp = 0.0, 0
    for p in curve:
        area += (p.tp - prev_tp) / n_pos * p.precision
        prev_tp = p.tp
    return area


def mae(preds: Sequence[float], truths: Sequence[float]) -> float:
    p = np.asarray(preds, float)
    t = np.asarray(truths, float)
    if p.size == 0 or p.shape != t.shape:
        raise ValueError("mae needs non-empty, equal-length inputs")
    return float(np.mean(np.abs(p - t)))


def average_baseline_mae(train_truths: Sequence[float], test_truths: Sequence[float]) -> float:
    """MAE of always predicting the training mean."""
    if len(train_truths) == 0:
        raise ValueError("empty training truths")
    mean = float(np.mean(train_truths))
    return mae(np.full(len(test_truths), mean), test_truths)


def relative_gain(candidate: float, baseline: float) -> float:
    """Percent change of ``candidate`` over ``baseline``."""
    if baseline <= 0:
        raise ValueError(f"baseline must be positive, got {baseline}")
    return 100.0 * (candidate - baseline) / baseline


def relative_reduction(candidate: float, baseline: float) -> float:
    """Percent by which ``candidate`` is below ``baseline`` (e.g. for errors)."""
    return -relative_gain(candidate, baseline)


# ---------------------------------------------------------------------------
# reports

METRICS = ("recall95", "pr_auc", "mae", "baseline_mae")


@dataclass
class SplitMetrics:
    split: int
    recall95: float
    pr_auc: float
    mae: float
    baseline_mae: float
    denial_rate: float
    n_train: int
    n_test: int


def split_metrics(split: int, p_denial, y0, days_pred, days_true, days_train, n_train: int) -> SplitMetrics:
    curve = pr_curve(p_denial, y0)
    return SplitMetrics(
        split=split,
        recall95=recall_at_precision(curve, 0.95),
        pr_auc=pr_auc(curve),
        mae=mae(days_pred, days_true),
        baseline_mae=average_baseline_mae(days_train, days_true),
        denial_rate=float(np.mean(y0)),
        n_train=n_train,
        n_test=len(y0),
    )


def _mean_sd(values: Sequence[float]) -> tuple[float, float]:
    v = np.asarray(values, float)
    sd = float(v.std(ddof=1)) if len(v) > 1 else 0.0
    return float(v.mean()), sd


@dataclass
class MetricsReport:
    model: str
    splits: list[SplitMetrics] = field(default_factory=list)

    def summary(self) -> dict[str, tuple[float, float]]:
        return {m: _mean_sd([getattr(s, m) for s in self.splits]) for m in METRICS + ("denial_rate",)}

    def to_json(self) -> dict:
        summ = self.summary()
        return {
            "model": self.model,
            "splits": [vars(s) for s in self.splits],
            "mean": {m: summ[m][0] for m in summ},
            "sd": {m: summ[m][1] for m in summ},
        }

    def rows(self) -> list[list]:
        out = [[self.model, s.split] + [_fmt(getattr(s, m)) for m in METRICS] for s in self.splits]
        summ = self.summary()
        out.append([self.model, "mean"] + [_fmt(summ[m][0]) for m in METRICS])
        out.append([self.model, "sd"] + [_fmt(summ[m][1]) for m in METRICS])
        return out


CSV_HEADER = ["model", "split", "recall95", "pr_auc", "mae", "baseline_mae"]


def _fmt(x: float) -> str:
    if math.isnan(x):
        return "nan"
    return f"{x:.6f}"


def write_reports(reports: Sequence[MetricsReport], json_path=None, csv_path=None) -> None:
    if json_path is not None:
        with open(json_path, "w", encoding="utf-8") as fh:
            json.dump([r.to_json() for r in reports], fh, indent=1, sort_keys=True)
    if csv_path is not None:
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            for r in reports:
                w.writerows(r.rows())
