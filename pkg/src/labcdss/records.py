"""Patient records, feature-vector construction, and the ingest CSV format.

A patient is demographics plus time-stamped canonical lab observations.
Feature vectors are fixed-order: [age, gender, <labs in catalog order>],
with NaN marking missing slots so the model's sparsity handling can route
them natively.
"""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, TextIO

import numpy as np

from .catalog import Catalog

__all__ = [
    "GENDERS",
    "LabObservation",
    "DiagnosisEvent",
    "PatientRecord",
    "FeatureVector",
    "IngestResult",
    "feature_names",
    "build_feature_vector",
    "encode_gender",
    "parse_gender",
    "read_ingest_csv",
    "INGEST_COLUMNS",
]

GENDERS = ("female", "male", "unknown")

INGEST_COLUMNS = (
    "patient_id",
    "age",
    "gender",
    "lab_name",
    "lab_unit",
    "value",
    "observed_at",
    "icd10_code",
    "diagnosis_date",
)


@dataclass(frozen=True)
class LabObservation:
    lab_key: str
    value: float  # already in the catalog's canonical unit
    observed_at: dt.date


@dataclass(frozen=True)
class DiagnosisEvent:
    icd10_code: str
    diagnosed_at: dt.date


@dataclass
class PatientRecord:
    patient_id: str
    age: int | None
    gender: str  # one of GENDERS
    observations: list[LabObservation] = field(default_factory=list)
    diagnoses: list[DiagnosisEvent] = field(default_factory=list)
    label: str | None = None  # disease-group name once cohorted
    reference_date: dt.date | None = None

    def __post_init__(self):
        if self.gender not in GENDERS:
            raise ValueError(f"gender must be one of {GENDERS}, got {self.gender!r}")
        if self.age is not None and self.age < 0:
            raise ValueError(f"age must be >= 0, got {self.age}")


def parse_gender(raw: str) -> str:
    s = raw.strip().lower()
    if s in ("f", "female"):
        return "female"
    if s in ("m", "male"):
        return "male"
    return "unknown"


def encode_gender(gender: str) -> float:
    """female=0, male=1, unknown=NaN so it flows through missing-value routing."""
    if gender == "female":
        return 0.0
    if gender == "male":
        return 1.0
    return float("nan")


def feature_names(catalog: Catalog) -> list[str]:
    return ["age", "gender", *catalog.lab_keys]


@dataclass
class FeatureVector:
    values: np.ndarray  # float64, NaN = missing
    feature_names: list[str]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (len(self.feature_names),):
            raise ValueError("feature vector length does not match feature names")

    def as_dict(self) -> dict[str, float | None]:
        return {
            name: (None if np.isnan(v) else float(v))
            for name, v in zip(self.feature_names, self.values)
        }


def build_feature_vector(
    patient: PatientRecord, catalog: Catalog, window_days: int = 365
) -> FeatureVector:
    """Assemble the model input for one patient.

    Per lab, the most recent observation dated in
    (reference_date - window_days, reference_date] wins; same-date ties go
    to the later entry in input order.  Labs with no in-window observation
    stay NaN.
    """
    if patient.reference_date is None:
        raise ValueError(f"patient {patient.patient_id}: reference_date required")
    if window_days <= 0:
        raise ValueError("window_days must be positive")
    ref = patient.reference_date
    lower = ref - dt.timedelta(days=window_days)

    latest: dict[str, tuple[dt.date, float]] = {}
    for obs in patient.observations:
        if not (lower < obs.observed_at <= ref):
            continue
        prev = latest.get(obs.lab_key)
        if prev is None or obs.observed_at >= prev[0]:
            latest[obs.lab_key] = (obs.observed_at, obs.value)

    names = feature_names(catalog)
    values = np.full(len(names), np.nan)
    values[0] = float(patient.age) if patient.age is not None else np.nan
    values[1] = encode_gender(patient.gender)
    for i, key in enumerate(catalog.lab_keys):
        if key in latest:
            values[2 + i] = latest[key][1]
    return FeatureVector(values, names)


# -- ingest ------------------------------------------------------------------


@dataclass
class IngestResult:
    patients: list[PatientRecord]
    rejected_labs: list[tuple[str, str, str]]  # (patient_id, raw_name, reason)

    @property
    def rejection_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for _, _, reason in self.rejected_labs:
            counts[reason] = counts.get(reason, 0) + 1
        return counts


def read_ingest_csv(source: Path | TextIO, catalog: Catalog) -> IngestResult:
    """Read the ingest CSV into patient records, canonicalizing lab rows.

    One row is one lab observation and/or one diagnosis event for a patient;
    lab rows that fail canonicalization are collected, not fatal.
    """
    close = False
    if isinstance(source, (str, Path)):
        fh = open(source, newline="", encoding="utf-8")
        close = True
    else:
        fh = source
    try:
        reader = csv.DictReader(fh)
        missing = set(INGEST_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"ingest CSV missing columns: {sorted(missing)}")

        patients: dict[str, PatientRecord] = {}
        rejected: list[tuple[str, str, str]] = []
        for row in reader:
            pid = row["patient_id"].strip()
            if pid not in patients:
                age_raw = row["age"].strip()
                patients[pid] = PatientRecord(
                    patient_id=pid,
                    age=int(age_raw) if age_raw else None,
                    gender=parse_gender(row["gender"]),
                )
            patient = patients[pid]

            name = row["lab_name"].strip()
            if name:
                result = catalog.canonicalize(name, row["lab_unit"], float(row["value"]))
                if result.ok:
                    patient.observations.append(
                        LabObservation(
                            result.key,
                            result.value,
                            dt.date.fromisoformat(row["observed_at"].strip()),
                        )
                    )
                else:
                    rejected.append((pid, name, result.reason))

            code = row["icd10_code"].strip()
            if code:
                patient.diagnoses.append(
                    DiagnosisEvent(code, dt.date.fromisoformat(row["diagnosis_date"].strip()))
                )
        return IngestResult(list(patients.values()), rejected)
    finally:
        if close:
            fh.close()


def write_ingest_csv(rows: Iterable[dict], dest: Path | TextIO) -> None:
    close = False
    if isinstance(dest, (str, Path)):
        fh = open(dest, "w", newline="", encoding="utf-8")
        close = True
    else:
        fh = dest
    try:
        writer = csv.DictWriter(fh, fieldnames=INGEST_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    finally:
        if close:
            fh.close()
