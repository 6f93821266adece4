"""Per-field suspiciousness scores from input gradients of the denial probability."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import diffkit as dk
from .model import ModelConfig, ModelParams, forward

CATEGORY_TAGS = ("c", "d", "o")


@dataclass
class SuspiciousnessReport:
    field_names: list[str]
    categories: list[str]
    raw: np.ndarray
    scores: np.ndarray
    threshold: float
    p_denial: float

    @property
    def flagged(self) -> np.ndarray:
        return np.flatnonzero(self.scores >= self.threshold) if self.scores.max(initial=0) > 0 else np.array([], int)

    def top_k(self, k: int) -> list[tuple[int, str, float]]:
        return top_k(self, k)

    def rows(self):
        for j, (name, cat, s) in enumerate(zip(self.field_names, self.categories, self.scores)):
            yield j, name, cat, float(s)

    def to_json(self) -> dict:
        return {
            "p_denial": self.p_denial,
            "threshold": self.threshold,
            "flagged": [
                {"index": int(j), "field": self.field_names[j], "category": self.categories[j], "score": float(self.scores[j])}
                for j in self.flagged
            ],
        }


def _categories(config: ModelConfig) -> list[str]:
    return [tag for tag, n in zip(CATEGORY_TAGS, config.segments) for _ in range(n)]


def input_gradients(params: ModelParams, X, config: ModelConfig) -> tuple[np.ndarray, np.ndarray]:
    """``d p_denial / d x`` for every row of ``X`` (evaluation mode).

    Rows are independent in evaluation mode, so one backward pass through
    the summed probabilities yields all per-claim gradients.
    Returns ``(grads (B, D), p_denial (B,))``.
    """
    if any(s.n_updates == 0 for s in params.bn.values()):
        raise RuntimeError("model has untrained batch-norm statistics; train it before explaining")
    if sp.issparse(X):
        X = X.toarray()
    fwd = forward(params, np.atleast_2d(X), config, training=False, input_grad=True)
    dk.backward(dk.total(fwd.p_denial), wrt=fwd.inputs)
    grads = np.hstack([leaf.grad for leaf in fwd.inputs])
    return grads, fwd.p_denial.value.copy()


def normalize(raw: np.ndarray) -> np.ndarray:
    """``|g| / max|g|``; all zeros when every gradient vanishes."""
    mag = np.abs(raw)
    top = mag.max(initial=0.0)
    return mag / top if top > 0 else np.zeros_like(mag)


def suspiciousness(
    params: ModelParams,
    config: ModelConfig,
    x,
    threshold: float = 0.8,
    field_names=None,
) -> SuspiciousnessReport:
    """Suspiciousness report for a single claim vector ``x`` (``(D,)`` or ``(1, D)``)."""
    if hasattr(x, "dense") and hasattr(x, "field_names"):
        field_names = field_names or list(x.field_names)
        x = x.dense()
    grads, p = input_gradients(params, np.atleast_2d(x), config)
    return report_from_gradient(grads[0], float(p[0]), config, threshold, field_names)


def report_from_gradient(raw, p_denial: float, config: ModelConfig, threshold: float = 0.8, field_names=None):
    raw = np.asarray(raw, float)
    names = list(field_names) if field_names is not None else [f"x{j}" for j in range(raw.size)]
    if len(names) != raw.size:
        raise ValueError(f"{len(names)} field names for {raw.size} inputs")
    return SuspiciousnessReport(names, _categories(config), np.abs(raw), normalize(raw), threshold, p_denial)


def top_k(report: SuspiciousnessReport, k: int) -> list[tuple[int, str, float]]:
    """``(index, field, score)`` by descending score, ties by ascending index."""
    if k < 1:
        raise ValueError("k must be >= 1")
    order = np.lexsort((np.arange(report.scores.size), -report.scores))[:k]
    return [(int(j), report.field_names[j], float(report.scores[j])) for j in order]


def write_report_csv(path, report: SuspiciousnessReport) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "field_name", "category", "score"])
        for j, name, cat, s in report.rows():
            w.writerow([j, name, cat, f"{s:.6g}"])


def write_report_json(path, report: SuspiciousnessReport) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_json(), fh, indent=1)
