"""Claim tokenization, vocabularies and sparse claim vectors.

A claim becomes three sub-vectors:

* ``x_c``  procedure relative frequencies
* ``x_d``  diagnosis relative frequencies
* ``x_o``  binary indicators over every other single-valued token

Rare tokens fold into a per-category OOV slot.
"""

from __future__ import annotations

import hashlib
import itertools
import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .ingest import ClaimRecord

CATEGORIES = ("procedure", "diagnosis", "other")
SEGMENT_TAGS = {"procedure": "c", "diagnosis": "d", "other": "o"}
OOV = "<OOV>"

# procedure / diagnosis thresholds reported for the larger health system
DEFAULT_THRESHOLDS = {"procedure": 500, "diagnosis": 400, "other": 1}


def quantize_charge(amount_cents: int) -> list[str]:
    """Split a charge into thousands / hundreds / tens / ones dollar tokens."""
    if amount_cents < 0:
        raise ValueError(f"charge must be non-negative, got {amount_cents}")
    dollars = amount_cents // 100
    return [
        f"charge_th={dollars // 1000}",
        f"charge_hu={dollars // 100 % 10}",
        f"charge_te={dollars // 10 % 10}",
        f"charge_on={dollars % 10}",
    ]


def tokenize_other(claim: ClaimRecord) -> list[str]:
    """Tokens for every single-valued claim field, ordered by field name."""
    svc = claim.service_start_date
    sub = claim.submission_date
    by_field = {
        "charge": quantize_charge(claim.total_charge),
        "gender": [f"gender={claim.subscriber_gender}"],
        "patient_age": [f"patient_age={claim.patient_age}"],
        "payer_id": [f"payer_id={claim.payer_id}"],
        "payer_state": [f"payer_state={claim.payer_state}"],
        "relationship": [f"relationship={claim.relationship_code}"],
        "sub_date": [f"sub_y={sub.year:04d}", f"sub_m={sub.month:02d}", f"sub_d={sub.day:02d}"],
        "subscriber_age": [f"subscriber_age={claim.subscriber_age}"],
        "svc_date": [f"svc_y={svc.year:04d}", f"svc_m={svc.month:02d}", f"svc_d={svc.day:02d}"],
        "svc_dur": [f"svc_dur_days={(claim.service_end_date - svc).days}"],
    }
    return [tok for name in sorted(by_field) for tok in by_field[name]]


def claim_tokens(claim: ClaimRecord) -> dict[str, list[str]]:
    return {
        "procedure": list(claim.procedures),
        "diagnosis": list(claim.diagnoses),
        "other": tokenize_other(claim),
    }


@dataclass
class Vocabulary:
    """Per-category token -> index maps.

    Index 0 of every category is the OOV slot.
    """

    tokens: dict[str, list[str]]
    thresholds: dict[str, int]
    frozen: bool = True
    index: dict[str, dict[str, int]] = field(init=False, repr=False)

    def __post_init__(self):
        for cat in CATEGORIES:
            toks = self.tokens[cat]
            if not toks or toks[0] != OOV:
                raise ValueError(f"category {cat!r} must start with the OOV token")
        self.index = {cat: {t: i for i, t in enumerate(self.tokens[cat])} for cat in CATEGORIES}

    def size(self, category: str) -> int:
        return len(self.tokens[category])

    @property
    def segments(self) -> tuple[int, int, int]:
        return tuple(self.size(cat) for cat in CATEGORIES)

    def lookup(self, category: str, token: str) -> int:
        return self.index[category].get(token, 0)

    def add(self, category: str, token: str) -> int:
        if self.frozen:
            raise RuntimeError("vocabulary is frozen")
        idx = self.index[category].setdefault(token, len(self.tokens[category]))
        if idx == len(self.tokens[category]):
            self.tokens[category].append(token)
        return idx

    def field_names(self) -> list[str]:
        return [f"{SEGMENT_TAGS[cat]}:{tok}" for cat in CATEGORIES for tok in self.tokens[cat]]

    def to_json(self) -> dict:
        return {cat: {"tokens": self.tokens[cat], "min_count": self.thresholds[cat]} for cat in CATEGORIES}

    @classmethod
    def from_json(cls, obj: Mapping) -> "Vocabulary":
        return cls(
            tokens={cat: list(obj[cat]["tokens"]) for cat in CATEGORIES},
            thresholds={cat: int(obj[cat]["min_count"]) for cat in CATEGORIES},
        )

    def digest(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=1)

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def build_vocab(claims: Sequence[ClaimRecord], thresholds: Mapping[str, int] | None = None) -> Vocabulary:
    """Keep tokens seen at least ``thresholds[category]`` times.

    Kept tokens are ordered by descending count, then lexically.
    """
    if not claims:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    th = dict(DEFAULT_THRESHOLDS)
    th.update(thresholds or {})
    for cat, v in th.items():
        if v < 1:
            raise ValueError(f"threshold for {cat!r} must be >= 1, got {v}")
    counts = {cat: Counter() for cat in CATEGORIES}
    for claim in claims:
        for cat, toks in claim_tokens(claim).items():
            counts[cat].update(toks)
    tokens = {}
    for cat in CATEGORIES:
        kept = [t for t, n in counts[cat].items() if n >= th[cat] and t != OOV]
        kept.sort(key=lambda t: (-counts[cat][t], t))
        tokens[cat] = [OOV] + kept
    return Vocabulary(tokens=tokens, thresholds={cat: th[cat] for cat in CATEGORIES})


@dataclass(frozen=True)
class ClaimVector:
    """Sparse ``(x_c, x_d, x_o)``; each segment is ``(indices, values)``."""

    x_c: tuple[np.ndarray, np.ndarray]
    x_d: tuple[np.ndarray, np.ndarray]
    x_o: tuple[np.ndarray, np.ndarray]
    segments: tuple[int, int, int]
    field_names: Sequence[str] = ()

    @property
    def dim(self) -> int:
        return sum(self.segments)

    def nnz(self) -> int:
        return sum(len(seg[0]) for seg in (self.x_c, self.x_d, self.x_o))

    def segment_dense(self, k: int) -> np.ndarray:
        idx, val = (self.x_c, self.x_d, self.x_o)[k]
        out = np.zeros(self.segments[k])
        out[idx] = val
        return out

    def dense(self) -> np.ndarray:
        return np.concatenate([self.segment_dense(k) for k in range(3)])

    def to_json(self) -> dict:
        return {
            tag: [[int(i), float(v)] for i, v in zip(*seg)]
            for tag, seg in zip("cdo", (self.x_c, self.x_d, self.x_o))
        }


def _relative(indices: list[int]) -> tuple[np.ndarray, np.ndarray]:
    if not indices:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    counts = Counter(indices)
    idx = np.array(sorted(counts), dtype=np.int64)
    val = np.array([counts[i] for i in idx], dtype=float)
    return idx, val / val.sum()


def _binary(indices: list[int]) -> tuple[np.ndarray, np.ndarray]:
    idx = np.array(sorted(set(indices)), dtype=np.int64)
    return idx, np.ones(len(idx))


def vectorize(claim: ClaimRecord, vocab: Vocabulary) -> ClaimVector:
    if not vocab.frozen:
        raise RuntimeError("vectorize requires a frozen vocabulary")
    toks = claim_tokens(claim)
    look = {cat: [vocab.lookup(cat, t) for t in toks[cat]] for cat in CATEGORIES}
    return ClaimVector(
        x_c=_relative(look["procedure"]),
        x_d=_relative(look["diagnosis"]),
        x_o=_binary(look["other"]),
        segments=vocab.segments,
        field_names=vocab.field_names(),
    )


def stack(vectors: Sequence[ClaimVector]) -> sp.csr_matrix:
    """Stack claim vectors into one CSR matrix with columns ``[x_c | x_d | x_o]``."""
    if not vectors:
        raise ValueError("nothing to stack")
    segs = vectors[0].segments
    offsets = np.cumsum((0,) + segs[:-1])
    rows, cols, vals = [], [], []
    for r, v in enumerate(vectors):
        if v.segments != segs:
            raise ValueError(f"segment sizes differ: {v.segments} vs {segs}")
        for k, (idx, val) in enumerate((v.x_c, v.x_d, v.x_o)):
            rows.append(np.full(len(idx), r))
            cols.append(idx + offsets[k])
            vals.append(val)
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(len(vectors), sum(segs)),
    )


def split_segments(X, segments: Sequence[int]) -> list:
    """Column-slice ``X`` into its three segment blocks."""
    bounds = np.cumsum((0,) + tuple(segments))
    if X.shape[1] != bounds[-1]:
        raise ValueError(f"X has {X.shape[1]} columns, segments {tuple(segments)} sum to {bounds[-1]}")
    if sp.issparse(X):
        X = X.tocsc()
        return [X[:, bounds[k] : bounds[k + 1]].tocsr() for k in range(3)]
    return [X[:, bounds[k] : bounds[k + 1]] for k in range(3)]


def write_vectors_jsonl(path, vectors: Iterable[ClaimVector], extras: Iterable[dict] | None = None) -> None:
    """One JSON object per claim: ``{"c": [[i, v], ...], "d": ..., "o": ..., **extra}``."""
    extras = extras if extras is not None else itertools.repeat({})
    with open(path, "w", encoding="utf-8") as fh:
        for v, extra in zip(vectors, extras):
            obj = v.to_json()
            obj.update(extra)
            fh.write(json.dumps(obj) + "\n")


def read_vectors_jsonl(path, vocab: Vocabulary) -> tuple[list[ClaimVector], list[dict]]:
    vectors, extras = [], []
    names = vocab.field_names()
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            segs = []
            for tag in "cdo":
                pairs = obj.pop(tag)
                segs.append(
                    (np.array([p[0] for p in pairs], dtype=np.int64), np.array([p[1] for p in pairs], dtype=float))
                )
            vectors.append(ClaimVector(*segs, segments=vocab.segments, field_names=names))
            extras.append(obj)
    return vectors, extras


class ClaimVectorizer(TransformerMixin, BaseEstimator):
    """Learn a claim vocabulary and map claims to a sparse design matrix.

    Parameters
    ----------
    procedure_min_count, diagnosis_min_count, other_min_count : int
        Tokens seen fewer times than this in ``fit`` fold into the OOV slot
        of their category.

    Attributes
    ----------
    vocabulary_ : Vocabulary
    segments_ : tuple of int
        Column counts of the procedure, diagnosis and other blocks.
    """

    def __init__(self, procedure_min_count=500, diagnosis_min_count=400, other_min_count=1):
        self.procedure_min_count = procedure_min_count
        self.diagnosis_min_count = diagnosis_min_count
        self.other_min_count = other_min_count

    def fit(self, claims, y=None):
        self.vocabulary_ = build_vocab(
            list(claims),
            {
                "procedure": self.procedure_min_count,
                "diagnosis": self.diagnosis_min_count,
                "other": self.other_min_count,
            },
        )
        self.segments_ = self.vocabulary_.segments
        self.n_features_out_ = sum(self.segments_)
        return self

    def transform(self, claims) -> sp.csr_matrix:
        check_is_fitted(self, "vocabulary_")
        return stack([vectorize(c, self.vocabulary_) for c in claims])

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "vocabulary_")
        return np.asarray(self.vocabulary_.field_names(), dtype=object)
