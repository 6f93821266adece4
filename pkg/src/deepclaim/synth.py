"""Seeded synthetic claim / remittance corpora with planted denial rules.

Each :class:`PlantedRule` names a conjunction of claim tokens.  Trigger
procedure / diagnosis codes never occur by chance: they are injected into a
``prevalence`` fraction of claims, so the expected denial rate is known in
closed form (:meth:`SynthConfig.expected_denial_rate`).  Multi-token rules
also get decoys (the trigger minus one token) so that no single token is
sufficient on its own.
"""

from __future__ import annotations

import datetime as dt
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ingest import ClaimRecord, RemittanceRecord

TRIGGER_FIELDS = ("procedure", "diagnosis", "payer_id", "payer_state", "subscriber_gender")
_BAG_FIELDS = ("procedure", "diagnosis")

DENIAL_CODES = ("50", "197", "16", "96", "97", "29", "18", "109", "22", "27", "31", "204", "B7", "119")
# adjustment codes that appear on paid claims and are not denials
ROUTINE_CODES = ("45", "2", "3", "1", "253")

GENDERS = ("F", "M", "U")
RELATIONSHIPS = ("18", "01", "19", "G8")


@dataclass(frozen=True)
class PlantedRule:
    """Deny with ``carc`` at ``level`` when every ``field=value`` trigger holds."""

    trigger: tuple[str, ...]
    carc: str
    level: str = "claim"
    probability: float = 1.0
    prevalence: float = 0.078

    def __post_init__(self):
        if not self.trigger:
            raise ValueError("trigger must be non-empty")
        for tok in self.trigger:
            name, _, value = tok.partition("=")
            if name not in TRIGGER_FIELDS or not value:
                raise ValueError(f"bad trigger token {tok!r}; expected one of {TRIGGER_FIELDS} as field=value")
        if not any(t.split("=")[0] in _BAG_FIELDS for t in self.trigger):
            raise ValueError("a trigger needs at least one procedure or diagnosis token")
        if self.level not in ("claim", "service"):
            raise ValueError(f"level must be 'claim' or 'service', got {self.level!r}")
        if not 0 < self.probability <= 1:
            raise ValueError("probability must lie in (0, 1]")
        if not 0 < self.prevalence < 1:
            raise ValueError("prevalence must lie in (0, 1)")

    def parts(self) -> list[tuple[str, str]]:
        return [tuple(t.split("=", 1)) for t in self.trigger]

    def field_names(self) -> list[str]:
        """Trigger tokens spelled as vectorizer feature names."""
        out = []
        for name, value in self.parts():
            if name == "procedure":
                out.append(f"c:{value}")
            elif name == "diagnosis":
                out.append(f"d:{value}")
            elif name == "subscriber_gender":
                out.append(f"o:gender={value}")
            else:
                out.append(f"o:{name}={value}")
        return out


def default_rules() -> tuple[PlantedRule, ...]:
    return (
        PlantedRule(("procedure=P0007",), "50", "claim"),
        PlantedRule(("diagnosis=D0011", "payer_id=PY02"), "197", "service"),
    )


@dataclass(frozen=True)
class SynthConfig:
    n_claims: int = 5000
    n_procedures: int = 60
    n_diagnoses: int = 80
    n_payers: int = 8
    n_states: int = 5
    start_date: dt.date = dt.date(2018, 1, 1)
    end_date: dt.date = dt.date(2019, 12, 31)
    rules: tuple[PlantedRule, ...] = field(default_factory=default_rules)
    noise_rate: float = 0.0
    response_base_days: int = 7
    response_offset_max: int = 21
    response_noise_sd: float = 2.0
    missing_remit_rate: float = 0.01
    second_remit_rate: float = 0.05
    zipf_exponent: float = 1.1
    denial_codes: tuple[str, ...] = DENIAL_CODES
    seed: int = 0

    def __post_init__(self):
        if self.n_claims < 1:
            raise ValueError("n_claims must be >= 1")
        if min(self.n_procedures, self.n_diagnoses, self.n_payers, self.n_states) < 1:
            raise ValueError("vocabulary sizes must be >= 1")
        for name in ("noise_rate", "missing_remit_rate", "second_remit_rate"):
            if not 0 <= getattr(self, name) < 1:
                raise ValueError(f"{name} must lie in [0, 1)")
        if self.end_date < self.start_date:
            raise ValueError("end_date precedes start_date")
        for r in self.rules:
            if r.carc not in self.denial_codes:
                raise ValueError(f"rule code {r.carc} is not in the denial code set")

    def expected_denial_rate(self) -> float:
        """Probability that a labeled claim is denied."""
        keep = 1.0 - self.noise_rate
        for r in self.rules:
            keep *= 1.0 - r.prevalence * r.probability
        return 1.0 - keep

    def procedure_codes(self) -> list[str]:
        return [f"P{i:04d}" for i in range(self.n_procedures)]

    def diagnosis_codes(self) -> list[str]:
        return [f"D{i:04d}" for i in range(self.n_diagnoses)]

    def payer_ids(self) -> list[str]:
        return [f"PY{i:02d}" for i in range(self.n_payers)]

    def states(self) -> list[str]:
        return ["CA", "NY", "TX", "WA", "FL", "IL", "OH", "GA", "NC", "MI"][: self.n_states] + [
            f"S{i}" for i in range(max(0, self.n_states - 10))
        ]


@dataclass
class SynthCorpus:
    claims: list[ClaimRecord]
    remits: list[RemittanceRecord]
    truth: list[dict]
    config: SynthConfig
    payer_offsets: dict[str, int]

    def claims_jsonl(self) -> str:
        return "".join(json.dumps(c.to_json()) + "\n" for c in self.claims)

    def remits_jsonl(self) -> str:
        return "".join(json.dumps(r.to_json()) + "\n" for r in self.remits)

    def truth_jsonl(self) -> str:
        return "".join(json.dumps(t) + "\n" for t in self.truth)

    def denial_set_text(self) -> str:
        return "# denial CARC codes, one per line\n" + "".join(c + "\n" for c in self.config.denial_codes)

    def write(self, out_dir) -> dict[str, Path]:
        out = Path(out_dir)
        os.makedirs(out, exist_ok=True)
        files = {
            "claims": (out / "claims.jsonl", self.claims_jsonl()),
            "remits": (out / "remits.jsonl", self.remits_jsonl()),
            "truth": (out / "truth.jsonl", self.truth_jsonl()),
            "denial_set": (out / "denial_set.txt", self.denial_set_text()),
        }
        for path, text in files.values():
            path.write_text(text, encoding="utf-8")
        return {k: v[0] for k, v in files.items()}


def _zipf_weights(n: int, s: float) -> np.ndarray:
    w = 1.0 / np.arange(1, n + 1) ** s
    return w / w.sum()


def generate(config: SynthConfig = SynthConfig()) -> SynthCorpus:
    rng = np.random.default_rng(config.seed)
    procs = config.procedure_codes()
    diags = config.diagnosis_codes()
    payers = config.payer_ids()
    states = config.states()

    planted = {f: set() for f in _BAG_FIELDS}
    for r in config.rules:
        for name, value in r.parts():
            if name in planted:
                planted[name].add(value)
    for name, pool in (("procedure", procs), ("diagnosis", diags)):
        missing = planted[name] - set(pool)
        if missing:
            raise ValueError(f"trigger {name} codes {sorted(missing)} are outside the generated vocabulary")
    bg_procs = [p for p in procs if p not in planted["procedure"]]
    bg_diags = [d for d in diags if d not in planted["diagnosis"]]
    if not bg_procs or not bg_diags:
        raise ValueError("empty background vocabulary")
    # shuffle so frequency rank is unrelated to code number
    bg_procs = list(rng.permutation(bg_procs))
    bg_diags = list(rng.permutation(bg_diags))
    w_proc = _zipf_weights(len(bg_procs), config.zipf_exponent)
    w_diag = _zipf_weights(len(bg_diags), config.zipf_exponent)
    w_payer = _zipf_weights(len(payers), 0.5)
    offsets = dict(zip(payers, rng.permutation(np.linspace(0, config.response_offset_max, len(payers)).round().astype(int)).tolist()))

    span = (config.end_date - config.start_date).days
    claims, remits, truth = [], [], []
    for i in range(config.n_claims):
        pcn = f"C{config.seed:04d}{i:07d}"
        fields = {
            "procedure": list(rng.choice(bg_procs, size=1 + min(rng.poisson(1.5), 5), p=w_proc)),
            "diagnosis": list(rng.choice(bg_diags, size=1 + min(rng.poisson(2.0), 6), p=w_diag)),
            "payer_id": str(rng.choice(payers, p=w_payer)),
            "payer_state": str(rng.choice(states)),
            "subscriber_gender": str(rng.choice(GENDERS, p=(0.5, 0.47, 0.03))),
        }
        injected, decoys = [], []
        for k, rule in enumerate(config.rules):
            u = rng.random()
            parts = rule.parts()
            if u < rule.prevalence:
                injected.append(k)
                for name, value in parts:
                    _set_token(fields, name, value)
            elif len(parts) > 1 and u < 2 * rule.prevalence:
                decoys.append(k)
                drop = int(rng.integers(len(parts)))
                for j, (name, value) in enumerate(parts):
                    if j != drop:
                        _set_token(fields, name, value)
                _clear_token(fields, parts[drop], rng, {
                    "payer_id": payers, "payer_state": states, "subscriber_gender": GENDERS,
                })
        rng.shuffle(fields["procedure"])
        rng.shuffle(fields["diagnosis"])

        rel = str(rng.choice(RELATIONSHIPS, p=(0.6, 0.2, 0.17, 0.03)))
        sub_age = int(rng.integers(18, 86))
        pat_age = sub_age if rel == "18" else int(rng.integers(0, 18)) if rel == "19" else int(rng.integers(18, 86))
        start = config.start_date + dt.timedelta(days=int(rng.integers(0, span + 1)))
        dur = 0 if rng.random() < 0.7 else int(rng.integers(1, 6))
        end = start + dt.timedelta(days=dur)
        submitted = end + dt.timedelta(days=int(rng.integers(0, 15)))
        charge = int(round(float(rng.lognormal(6.0, 1.0)) * 100))

        claim = ClaimRecord(
            patient_control_number=pcn,
            payer_id=fields["payer_id"],
            payer_state=fields["payer_state"],
            subscriber_gender=fields["subscriber_gender"],
            relationship_code=rel,
            subscriber_age=sub_age,
            patient_age=pat_age,
            service_start_date=start,
            service_end_date=end,
            submission_date=submitted,
            total_charge=charge,
            procedures=tuple(fields["procedure"]),
            diagnoses=tuple(fields["diagnosis"]),
        )
        claims.append(claim)

        claim_codes, service_codes, fired = [], [], []
        for k, rule in enumerate(config.rules):
            present = all(_has_token(claim, name, value) for name, value in rule.parts())
            if present and rng.random() < rule.probability:
                (claim_codes if rule.level == "claim" else service_codes).append(rule.carc)
                fired.append({"rule": k, "carc": rule.carc, "level": rule.level, "fields": rule.field_names()})
        noise = []
        if rng.random() < config.noise_rate:
            code = str(rng.choice(config.denial_codes))
            (claim_codes if rng.random() < 0.5 else service_codes).append(code)
            noise.append(code)
        if rng.random() < 0.6:
            claim_codes.append("45")
        for code in ROUTINE_CODES[1:]:
            if rng.random() < 0.1:
                service_codes.append(code)

        days = config.response_base_days + offsets[claim.payer_id] + int(round(rng.normal(0, config.response_noise_sd)))
        remit_date = submitted + dt.timedelta(days=max(days, 1))
        has_remit = rng.random() >= config.missing_remit_rate
        second = rng.random() < config.second_remit_rate
        if has_remit:
            remits.append(RemittanceRecord(pcn, remit_date, tuple(claim_codes), tuple(service_codes)))
            if second:
                later = remit_date + dt.timedelta(days=int(rng.integers(10, 40)))
                remits.append(RemittanceRecord(pcn, later, ("45",), ()))
        truth.append({
            "pcn": pcn,
            "injected": injected,
            "decoys": decoys,
            "fired": fired,
            "noise": noise,
            "has_remit": bool(has_remit),
        })

    # remittances arrive in date order, not claim order
    order = sorted(range(len(remits)), key=lambda j: (remits[j].remit_date, remits[j].patient_control_number, j))
    remits = [remits[j] for j in order]
    return SynthCorpus(claims, remits, truth, config, offsets)


def _set_token(fields: dict, name: str, value: str) -> None:
    if name in _BAG_FIELDS:
        if value not in fields[name]:
            fields[name].append(value)
    else:
        fields[name] = value


def _clear_token(fields: dict, part: tuple[str, str], rng, pools: dict) -> None:
    name, value = part
    if name in _BAG_FIELDS:
        fields[name] = [v for v in fields[name] if v != value]
    elif fields[name] == value:
        others = [v for v in pools[name] if v != value]
        fields[name] = str(rng.choice(others))


def _has_token(claim: ClaimRecord, name: str, value: str) -> bool:
    if name == "procedure":
        return value in claim.procedures
    if name == "diagnosis":
        return value in claim.diagnoses
    return getattr(claim, name) == value
