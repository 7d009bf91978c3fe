"""Patient records, cohorts, cohort files and deterministic splits.

A cohort file is UTF-8 JSON lines.  Line 1 is a header::

    {"prediction_day": 730, "vocab": ["c000", "c001", ...]}

and every following line is one patient::

    {"patient_id": "p0", "label": 0, "subgroups": ["sg1"],
     "visits": [{"day": 12, "codes": ["c003", "c017"]}, ...]}
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class CohortError(ValueError):
    """Raised when a cohort (or cohort file) violates its invariants."""


@dataclass(frozen=True)
class CodeVocab:
    codes: tuple

    def __post_init__(self):
        object.__setattr__(self, "codes", tuple(self.codes))
        if len(set(self.codes)) != len(self.codes):
            raise CohortError("vocabulary contains duplicate codes")
        object.__setattr__(self, "_index", {c: i for i, c in enumerate(self.codes)})

    @property
    def index(self):
        return self._index

    def __len__(self):
        return len(self.codes)

    def __contains__(self, code):
        return code in self._index

    def indices(self, codes):
        return [self._index[c] for c in codes]


@dataclass(frozen=True)
class Visit:
    day: int
    codes: frozenset

    def __post_init__(self):
        object.__setattr__(self, "codes", frozenset(self.codes))
        if not self.codes:
            raise CohortError(f"visit on day {self.day} has no codes")


@dataclass(frozen=True)
class PatientRecord:
    patient_id: str
    visits: tuple
    label: int
    subgroups: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "visits", tuple(self.visits))
        object.__setattr__(self, "subgroups", tuple(self.subgroups))
        if self.label not in (0, 1):
            raise CohortError(f"patient {self.patient_id}: label must be 0 or 1")
        days = [v.day for v in self.visits]
        if any(a > b for a, b in zip(days, days[1:])):
            raise CohortError(f"patient {self.patient_id}: visits not sorted by day")


@dataclass(frozen=True)
class Cohort:
    prediction_day: int
    records: tuple
    vocab: CodeVocab
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        for rec in self.records:
            validate_record(rec, self.vocab, self.prediction_day)

    def __len__(self):
        return len(self.records)

    @property
    def labels(self):
        return np.array([r.label for r in self.records], dtype=np.int64)

    def subset(self, indices):
        return Cohort(self.prediction_day, [self.records[i] for i in indices], self.vocab)


def validate_record(rec, vocab, prediction_day):
    for v in rec.visits:
        if v.day > prediction_day:
            raise CohortError(
                f"patient {rec.patient_id}: visit day {v.day} after prediction day {prediction_day}"
            )
        unknown = [c for c in v.codes if c not in vocab]
        if unknown:
            raise CohortError(f"patient {rec.patient_id}: codes not in vocabulary: {sorted(unknown)}")


def _record_to_json(rec):
    return {
        "patient_id": rec.patient_id,
        "label": rec.label,
        "subgroups": list(rec.subgroups),
        "visits": [{"day": v.day, "codes": sorted(v.codes)} for v in rec.visits],
    }


def _record_from_json(obj):
    visits = [Visit(int(v["day"]), v["codes"]) for v in obj["visits"]]
    return PatientRecord(str(obj["patient_id"]), visits, int(obj["label"]), obj.get("subgroups", []))


def save_cohort(cohort, path):
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        header = {"prediction_day": cohort.prediction_day, "vocab": list(cohort.vocab.codes)}
        fh.write(json.dumps(header) + "\n")
        for rec in cohort.records:
            fh.write(json.dumps(_record_to_json(rec)) + "\n")
    return path


def load_cohort(path):
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        lines = fh.readlines()
    if not lines:
        raise CohortError(f"{path}: empty cohort file")
    try:
        header = json.loads(lines[0])
        prediction_day = int(header["prediction_day"])
        vocab = CodeVocab(header["vocab"])
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise CohortError(f"{path}:1: bad header ({exc})") from exc

    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            rec = _record_from_json(json.loads(line))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise CohortError(f"{path}:{lineno}: parse error ({exc})") from exc
        except CohortError as exc:
            raise CohortError(f"{path}:{lineno}: {exc}") from exc
        try:
            validate_record(rec, vocab, prediction_day)
        except CohortError as exc:
            raise CohortError(f"{path}:{lineno}: {exc}") from exc
        records.append(rec)
    return Cohort(prediction_day, records, vocab)


def split_cohort(cohort, fractions, seed):
    """Shuffle and cut into (train, val, test); rounding remainder goes to train."""
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or min(fractions) <= 0 or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must be three positive numbers summing to 1, got {fractions}")
    n = len(cohort)
    n_val = int(round(fractions[1] * n))
    n_test = int(round(fractions[2] * n))
    n_train = n - n_val - n_test
    if n_train < 0:
        raise ValueError("split sizes exceed cohort size")
    perm = np.random.default_rng(seed).permutation(n)
    parts = (perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:])
    return tuple(cohort.subset(sorted(p.tolist())) for p in parts)


def class_weight(labels):
    """Ratio of negative to positive labels."""
    labels = np.asarray(labels)
    pos = int((labels == 1).sum())
    neg = int((labels == 0).sum())
    if pos + neg != labels.size:
        raise ValueError("labels must be binary")
    if pos == 0 or neg == 0:
        raise ValueError("class_weight needs at least one positive and one negative label")
    return neg / pos
