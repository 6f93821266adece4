"""Claim / remittance ingestion and target construction.

Claims and remittances arrive as line-delimited JSON (one object per line).
They are joined on the patient control number and turned into supervised
targets ``(y0, y1, y2, y3)``:

* ``y0``  denial flag, 1 iff any claim- or service-level CARC is a denial code
* ``y1``  claim-level reason-code distribution over ``codes + [no-denial]``
* ``y2``  service-level distribution, same layout
* ``y3``  whole days between submission and the first remittance
"""

from __future__ import annotations

import datetime as dt
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

NO_DENIAL = "no-denial"

CLAIM_KEYS = (
    "pcn",
    "payer_id",
    "payer_state",
    "subscriber_gender",
    "relationship_code",
    "subscriber_age",
    "patient_age",
    "service_start",
    "service_end",
    "submitted",
    "total_charge_cents",
    "procedures",
    "diagnoses",
)
REMIT_KEYS = ("pcn", "remit_date", "claim_carcs", "service_carcs")


class IngestError(ValueError):
    """A record could not be parsed or violates a field invariant."""

    def __init__(self, message: str, *, line: int | None = None, field: str | None = None):
        self.message = message
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        prefix = ", ".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)


@dataclass(frozen=True)
class ClaimRecord:
    patient_control_number: str
    payer_id: str
    payer_state: str
    subscriber_gender: str
    relationship_code: str
    subscriber_age: int
    patient_age: int
    service_start_date: dt.date
    service_end_date: dt.date
    submission_date: dt.date
    total_charge: int
    procedures: tuple[str, ...] = ()
    diagnoses: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.patient_control_number:
            raise IngestError("must be non-empty", field="pcn")
        if self.service_end_date < self.service_start_date:
            raise IngestError("earlier than service_start_date", field="service_end_date")
        if self.submission_date < self.service_start_date:
            raise IngestError("earlier than service_start_date", field="submitted")
        if self.total_charge < 0:
            raise IngestError("must be >= 0", field="total_charge_cents")

    def to_json(self) -> dict:
        return {
            "pcn": self.patient_control_number,
            "payer_id": self.payer_id,
            "payer_state": self.payer_state,
            "subscriber_gender": self.subscriber_gender,
            "relationship_code": self.relationship_code,
            "subscriber_age": self.subscriber_age,
            "patient_age": self.patient_age,
            "service_start": self.service_start_date.isoformat(),
            "service_end": self.service_end_date.isoformat(),
            "submitted": self.submission_date.isoformat(),
            "total_charge_cents": self.total_charge,
            "procedures": list(self.procedures),
            "diagnoses": list(self.diagnoses),
        }


@dataclass(frozen=True)
class RemittanceRecord:
    patient_control_number: str
    remit_date: dt.date
    claim_level_carcs: tuple[str, ...] = ()
    service_level_carcs: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.patient_control_number:
            raise IngestError("must be non-empty", field="pcn")

    def to_json(self) -> dict:
        return {
            "pcn": self.patient_control_number,
            "remit_date": self.remit_date.isoformat(),
            "claim_carcs": list(self.claim_level_carcs),
            "service_carcs": list(self.service_level_carcs),
        }


@dataclass(frozen=True)
class DenialCodeSet:
    """Ordered set of CARC codes that constitute a denial.

    Order defines the class index of each code in ``y1``/``y2``; the
    ``no-denial`` class always comes last.
    """

    codes: tuple[str, ...]
    label: str = "default"

    def __post_init__(self):
        if not self.codes:
            raise ValueError("denial code set must be non-empty")
        if len(set(self.codes)) != len(self.codes):
            raise ValueError("denial code set contains duplicates")

    @classmethod
    def from_codes(cls, codes: Iterable[str], label: str = "default") -> "DenialCodeSet":
        seen = dict.fromkeys(str(c).strip() for c in codes)
        return cls(tuple(c for c in seen if c), label)

    @property
    def classes(self) -> tuple[str, ...]:
        return self.codes + (NO_DENIAL,)

    @property
    def n_classes(self) -> int:
        return len(self.codes) + 1

    def __contains__(self, code: str) -> bool:
        return code in self.codes

    def __len__(self) -> int:
        return len(self.codes)


@dataclass(frozen=True)
class TargetVector:
    y0: int
    y1: np.ndarray
    y2: np.ndarray
    y3: int

    def __post_init__(self):
        if self.y0 not in (0, 1):
            raise ValueError(f"y0 must be 0 or 1, got {self.y0}")
        if self.y3 < 0:
            raise ValueError(f"y3 must be >= 0, got {self.y3}")
        for name in ("y1", "y2"):
            dist = getattr(self, name)
            if np.any(dist < 0) or abs(dist.sum() - 1.0) > 1e-9:
                raise ValueError(f"{name} is not a distribution: {dist}")


@dataclass(frozen=True)
class LabeledClaim:
    claim: ClaimRecord
    target: TargetVector
    remit_date: dt.date


@dataclass
class JoinResult:
    """Labeled claims plus the exclusion tally."""

    labeled: list[LabeledClaim]
    unmatched: int = 0
    rejected: list[tuple[str, str]] = field(default_factory=list)

    def __iter__(self):
        return iter(self.labeled)

    def __len__(self):
        return len(self.labeled)

    def __getitem__(self, i):
        return self.labeled[i]


def _parse_date(obj: dict, key: str, line: int) -> dt.date:
    raw = _require(obj, key, line)
    try:
        return dt.date.fromisoformat(raw)
    except (TypeError, ValueError):
        raise IngestError(f"not an ISO date: {raw!r}", line=line, field=key) from None


def _parse_int(obj: dict, key: str, line: int) -> int:
    raw = _require(obj, key, line)
    if isinstance(raw, bool) or not isinstance(raw, int):
        raise IngestError(f"expected integer, got {raw!r}", line=line, field=key)
    return raw


def _parse_str(obj: dict, key: str, line: int) -> str:
    raw = _require(obj, key, line)
    if not isinstance(raw, (str, int)) or isinstance(raw, bool):
        raise IngestError(f"expected string, got {raw!r}", line=line, field=key)
    return str(raw)


def _parse_codes(obj: dict, key: str, line: int) -> tuple[str, ...]:
    raw = _require(obj, key, line)
    if not isinstance(raw, list):
        raise IngestError("expected an array of strings", line=line, field=key)
    return tuple(str(c) for c in raw)


def _require(obj: dict, key: str, line: int):
    if key not in obj or obj[key] is None:
        raise IngestError("missing", line=line, field=key)
    return obj[key]


def _iter_objects(stream: Iterable[str]):
    if isinstance(stream, str):
        stream = stream.splitlines()
    for lineno, text in enumerate(stream, start=1):
        text = text.strip()
        if not text:
            continue
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise IngestError(f"invalid JSON ({exc.msg})", line=lineno) from None
        if not isinstance(obj, dict):
            raise IngestError("expected a JSON object", line=lineno)
        yield lineno, obj


def parse_claims(stream: Iterable[str]) -> list[ClaimRecord]:
    """Parse ``claims.jsonl`` content (a string or an iterable of lines)."""
    records = []
    for lineno, obj in _iter_objects(stream):
        try:
            rec = ClaimRecord(
                patient_control_number=_parse_str(obj, "pcn", lineno),
                payer_id=_parse_str(obj, "payer_id", lineno),
                payer_state=_parse_str(obj, "payer_state", lineno),
                subscriber_gender=_parse_str(obj, "subscriber_gender", lineno),
                relationship_code=_parse_str(obj, "relationship_code", lineno),
                subscriber_age=_parse_int(obj, "subscriber_age", lineno),
                patient_age=_parse_int(obj, "patient_age", lineno),
                service_start_date=_parse_date(obj, "service_start", lineno),
                service_end_date=_parse_date(obj, "service_end", lineno),
                submission_date=_parse_date(obj, "submitted", lineno),
                total_charge=_parse_int(obj, "total_charge_cents", lineno),
                procedures=_parse_codes(obj, "procedures", lineno),
                diagnoses=_parse_codes(obj, "diagnoses", lineno),
            )
        except IngestError as exc:
            if exc.line is None:
                raise IngestError(exc.message, line=lineno, field=exc.field) from None
            raise
        records.append(rec)
    return records


def parse_remits(stream: Iterable[str]) -> list[RemittanceRecord]:
    """Parse ``remits.jsonl`` content."""
    records = []
    for lineno, obj in _iter_objects(stream):
        pcn = _parse_str(obj, "pcn", lineno)
        if not pcn:
            raise IngestError("must be non-empty", line=lineno, field="pcn")
        records.append(
            RemittanceRecord(
                patient_control_number=pcn,
                remit_date=_parse_date(obj, "remit_date", lineno),
                claim_level_carcs=_parse_codes(obj, "claim_carcs", lineno),
                service_level_carcs=_parse_codes(obj, "service_carcs", lineno),
            )
        )
    return records


def parse_denial_set(stream: Iterable[str], label: str = "default") -> DenialCodeSet:
    """One CARC code per line; ``#`` starts a comment."""
    if isinstance(stream, str):
        stream = stream.splitlines()
    codes = []
    for text in stream:
        text = text.split("#", 1)[0].strip()
        if text:
            codes.append(text)
    return DenialCodeSet.from_codes(codes, label)


def code_distribution(codes: Sequence[str], denial_set: DenialCodeSet) -> np.ndarray:
    """Relative frequency of in-set codes, or one-hot on ``no-denial``."""
    dist = np.zeros(denial_set.n_classes)
    counts = Counter(c for c in codes if c in denial_set)
    total = sum(counts.values())
    if total == 0:
        dist[-1] = 1.0
        return dist
    for i, code in enumerate(denial_set.codes):
        dist[i] = counts[code] / total
    return dist


def make_target(remit: RemittanceRecord, submitted: dt.date, denial_set: DenialCodeSet) -> TargetVector:
    denied = any(c in denial_set for c in remit.claim_level_carcs + remit.service_level_carcs)
    return TargetVector(
        y0=int(denied),
        y1=code_distribution(remit.claim_level_carcs, denial_set),
        y2=code_distribution(remit.service_level_carcs, denial_set),
        y3=(remit.remit_date - submitted).days,
    )


def _remit_order(r: RemittanceRecord) -> tuple:
    return (r.remit_date, r.claim_level_carcs, r.service_level_carcs)


def join_and_label(
    claims: Sequence[ClaimRecord],
    remits: Sequence[RemittanceRecord],
    denial_set: DenialCodeSet,
) -> JoinResult:
    """Attach each claim's first remittance and derive its targets.

    Claims without a remittance are dropped and counted in ``unmatched``;
    claims whose first remittance predates submission are dropped and
    listed in ``rejected`` as ``(pcn, reason)``.
    """
    first: dict[str, RemittanceRecord] = {}
    for r in remits:
        cur = first.get(r.patient_control_number)
        # ties on date resolve by content so the result ignores input order
        if cur is None or _remit_order(r) < _remit_order(cur):
            first[r.patient_control_number] = r

    result = JoinResult(labeled=[])
    for claim in claims:
        remit = first.get(claim.patient_control_number)
        if remit is None:
            result.unmatched += 1
            continue
        if remit.remit_date < claim.submission_date:
            reason = f"remit_date {remit.remit_date} precedes submission {claim.submission_date}"
            logger.warning("rejecting claim %s: %s", claim.patient_control_number, reason)
            result.rejected.append((claim.patient_control_number, reason))
            continue
        target = make_target(remit, claim.submission_date, denial_set)
        result.labeled.append(LabeledClaim(claim, target, remit.remit_date))
    if result.unmatched:
        logger.info("%d claims had no remittance and were excluded", result.unmatched)
    return result


def read_claims(path) -> list[ClaimRecord]:
    with open(path, encoding="utf-8") as fh:
        return parse_claims(fh)


def read_remits(path) -> list[RemittanceRecord]:
    with open(path, encoding="utf-8") as fh:
        return parse_remits(fh)


def read_denial_set(path, label: str | None = None) -> DenialCodeSet:
    with open(path, encoding="utf-8") as fh:
        return parse_denial_set(fh, label or str(path))


def dumps_jsonl(records: Iterable) -> str:
    return "".join(json.dumps(r.to_json(), sort_keys=False) + "\n" for r in records)
