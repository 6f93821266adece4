"""End-to-end helpers: labeled-corpus files and time-series cross-validation."""

from __future__ import annotations

import datetime as dt
import json
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .estimator import DeepClaimClassifier
from .evaluation import MetricsReport, split_metrics, time_series_splits
from .featurize import ClaimVectorizer
from .ingest import ClaimRecord, LabeledClaim, TargetVector, parse_claims
from .model import Targets, VARIANT_LABELS

logger = logging.getLogger(__name__)


@dataclass
class ExperimentConfig:
    """Everything a cross-validated run needs besides the data."""

    variant: str = "deepclaim2"
    k_splits: int = 3
    min_counts: tuple[int, int, int] = (5, 5, 5)
    context_dim: int = 96
    embed_dim: int = 94
    lambdas: tuple[float, float, float] = (1.0, 1.0, 0.01)
    learning_rate: float = 0.001
    batch_size: int = 64
    epochs: int = 30
    seed: int = 0
    only_last_split: bool = False
    extra: dict = field(default_factory=dict)

    def vectorizer(self) -> ClaimVectorizer:
        c, d, o = self.min_counts
        return ClaimVectorizer(procedure_min_count=c, diagnosis_min_count=d, other_min_count=o)

    def classifier(self, segments, variant: str | None = None) -> DeepClaimClassifier:
        return DeepClaimClassifier(
            variant=variant or self.variant,
            segments=tuple(segments),
            context_dim=self.context_dim,
            embed_dim=self.embed_dim,
            lambdas=tuple(self.lambdas),
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            epochs=self.epochs,
            random_state=self.seed,
        )


def targets_of(labeled: Sequence[LabeledClaim]) -> Targets:
    return Targets.from_vectors([l.target for l in labeled])


@dataclass
class FoldResult:
    split: int
    vectorizer: ClaimVectorizer
    model: DeepClaimClassifier
    train: list[LabeledClaim]
    test: list[LabeledClaim]


def fit_fold(train: Sequence[LabeledClaim], cfg: ExperimentConfig, variant: str | None = None):
    vec = cfg.vectorizer().fit([l.claim for l in train])
    X = vec.transform([l.claim for l in train])
    clf = cfg.classifier(vec.segments_, variant).fit(X, targets_of(train))
    return vec, clf


def cross_validate(
    labeled: Sequence[LabeledClaim],
    cfg: ExperimentConfig,
    variant: str | None = None,
    keep_models: bool = False,
) -> tuple[MetricsReport, list[FoldResult]]:
    """Expanding-window CV; the vocabulary is rebuilt on each training window."""
    variant = variant or cfg.variant
    splits = time_series_splits([l.claim.submission_date for l in labeled], cfg.k_splits)
    if cfg.only_last_split:
        splits = splits[-1:]
    report = MetricsReport(VARIANT_LABELS.get(variant, variant))
    folds = []
    for sp in splits:
        train = [labeled[i] for i in sp.train]
        test = [labeled[i] for i in sp.test]
        vec, clf = fit_fold(train, cfg, variant)
        Xte = vec.transform([l.claim for l in test])
        yte, ytr = targets_of(test), targets_of(train)
        p = clf.predict_proba(Xte)[:, 1]
        days = clf.predict_response_days(Xte)
        if yte.y0.sum() == 0:
            logger.warning("split %d has no denied test claims; skipping", sp.index)
            continue
        report.splits.append(split_metrics(sp.index, p, yte.y0, days, yte.y3, ytr.y3, len(train)))
        logger.info("%s split %d: %s", variant, sp.index, report.splits[-1])
        if keep_models:
            folds.append(FoldResult(sp.index, vec, clf, train, test))
    return report, folds


# ---------------------------------------------------------------------------
# labeled.jsonl: one labeled claim per line


def labeled_to_json(l: LabeledClaim) -> dict:
    t = l.target
    return {
        "claim": l.claim.to_json(),
        "remit_date": l.remit_date.isoformat(),
        "y0": t.y0,
        "y1": [float(v) for v in t.y1],
        "y2": [float(v) for v in t.y2],
        "y3": t.y3,
    }


def write_labeled(path, labeled: Sequence[LabeledClaim], classes: Sequence[str]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"classes": list(classes)}) + "\n")
        for l in labeled:
            fh.write(json.dumps(labeled_to_json(l)) + "\n")


def read_labeled(path) -> tuple[list[LabeledClaim], list[str]]:
    with open(path, encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        lines = [json.loads(line) for line in fh if line.strip()]
    claims: list[ClaimRecord] = parse_claims([json.dumps(o["claim"]) for o in lines])
    out = []
    for claim, o in zip(claims, lines):
        target = TargetVector(int(o["y0"]), np.asarray(o["y1"], float), np.asarray(o["y2"], float), int(o["y3"]))
        out.append(LabeledClaim(claim, target, dt.date.fromisoformat(o["remit_date"])))
    return out, header["classes"]
