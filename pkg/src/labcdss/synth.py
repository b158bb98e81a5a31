"""Synthetic EMR generator standing in for real EMR extracts.

Each disease group plants signature shifts (in baseline-SD units) on a
few labs; everything else draws from the baseline distribution.  Rows
come out in the ingest CSV schema with diagnosis dates anchoring a
one-year lab window, per-lab missingness, and a sprinkle of stale
out-of-window labs drawn from baseline so window bugs cost accuracy.
"""

from __future__ import annotations

import datetime as dt
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .catalog import Catalog
from .records import write_ingest_csv

__all__ = ["LabSignature", "SynthConfig", "generate_rows", "generate_csv", "load_synth_config"]


@dataclass(frozen=True)
class LabSignature:
    lab: str
    shift: float  # in baseline SD units
    spread: float = 1.0  # SD multiplier


@dataclass
class SynthConfig:
    n_patients: int
    seed: int
    prevalence: dict[str, float]  # group -> relative weight, normalized at validation
    lab_baselines: dict[str, tuple[float, float]]  # lab -> (mean, sd)
    signatures: dict[str, list[LabSignature]]
    missingness: dict[str, float] = field(default_factory=dict)
    default_missingness: float = 0.3
    stale_fraction: float = 0.05
    age_mean: float = 52.0
    age_sd: float = 18.0
    age_min: int = 18
    age_max: int = 95
    p_female: float = 0.55
    anchor_start: dt.date = dt.date(2023, 1, 1)

    def validate(self, catalog: Catalog) -> None:
        problems = []
        if self.n_patients < 1:
            problems.append("n_patients must be >= 1")
        group_names = set(catalog.group_names())
        if set(self.prevalence) != group_names:
            problems.append(
                f"prevalence must cover exactly the catalog groups; "
                f"missing={sorted(group_names - set(self.prevalence))} "
                f"extra={sorted(set(self.prevalence) - group_names)}"
            )
        if any(v < 0 for v in self.prevalence.values()) or sum(self.prevalence.values()) <= 0:
            problems.append("prevalence weights must be non-negative with a positive sum")
        for lab in catalog.lab_keys:
            if lab not in self.lab_baselines:
                problems.append(f"lab_baselines missing {lab!r}")
            elif self.lab_baselines[lab][1] <= 0:
                problems.append(f"lab_baselines[{lab!r}] sd must be positive")
        for name, sigs in self.signatures.items():
            if name not in group_names:
                problems.append(f"signatures for unknown group {name!r}")
            for sig in sigs:
                if sig.lab not in catalog.labs:
                    problems.append(f"signature lab {sig.lab!r} not in catalog ({name})")
                if sig.spread <= 0:
                    problems.append(f"signature spread must be positive ({name}/{sig.lab})")
        for lab, rate in self.missingness.items():
            if lab not in catalog.labs:
                problems.append(f"missingness for unknown lab {lab!r}")
            if not 0.0 <= rate <= 1.0:
                problems.append(f"missingness[{lab!r}] must be in [0, 1]")
        if not 0.0 <= self.default_missingness <= 1.0:
            problems.append("default_missingness must be in [0, 1]")
        if not 0.0 <= self.stale_fraction <= 1.0:
            problems.append("stale_fraction must be in [0, 1]")
        if not 0.0 <= self.p_female <= 1.0:
            problems.append("p_female must be in [0, 1]")
        if problems:
            raise ValueError("invalid synthetic config: " + "; ".join(problems))

    def normalized_prevalence(self, group_names: list[str]) -> np.ndarray:
        weights = np.array([self.prevalence[g] for g in group_names], dtype=np.float64)
        return weights / weights.sum()


def load_synth_config(path: Path) -> SynthConfig:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    age = doc.get("age", {})
    return SynthConfig(
        n_patients=doc["n_patients"],
        seed=doc["seed"],
        prevalence={k: float(v) for k, v in doc["prevalence"].items()},
        lab_baselines={k: (float(v[0]), float(v[1])) for k, v in doc["lab_baselines"].items()},
        signatures={
            group: [
                LabSignature(s["lab"], float(s["shift"]), float(s.get("spread", 1.0)))
                for s in sigs
            ]
            for group, sigs in doc["signatures"].items()
        },
        missingness={k: float(v) for k, v in doc.get("missingness", {}).items()},
        default_missingness=float(doc.get("default_missingness", 0.3)),
        stale_fraction=float(doc.get("stale_fraction", 0.05)),
        age_mean=float(age.get("mean", 52.0)),
        age_sd=float(age.get("sd", 18.0)),
        age_min=int(age.get("min", 18)),
        age_max=int(age.get("max", 95)),
        p_female=float(doc.get("p_female", 0.55)),
        anchor_start=dt.date.fromisoformat(doc.get("anchor_start", "2023-01-01")),
    )


def _fmt(value: float) -> str:
    return format(float(value), ".6g")


def generate_rows(config: SynthConfig, catalog: Catalog) -> Iterator[dict]:
    """Yield ingest-CSV rows; a fixed seed yields a byte-identical stream."""
    config.validate(catalog)
    rng = np.random.default_rng(config.seed)
    group_names = catalog.group_names()
    n = config.n_patients
    labs = catalog.lab_keys
    n_labs = len(labs)

    groups = rng.choice(len(group_names), size=n, p=config.normalized_prevalence(group_names))
    ages = np.clip(
        np.round(rng.normal(config.age_mean, config.age_sd, size=n)),
        config.age_min,
        config.age_max,
    ).astype(int)
    female = rng.random(n) < config.p_female
    anchor_offsets = rng.integers(0, 365, size=n)

    # per-lab (group -> shift/spread) lookup tables
    shift = np.zeros((len(group_names), n_labs))
    spread = np.ones((len(group_names), n_labs))
    lab_index = {lab: i for i, lab in enumerate(labs)}
    for g, name in enumerate(group_names):
        for sig in config.signatures.get(name, []):
            shift[g, lab_index[sig.lab]] = sig.shift
            spread[g, lab_index[sig.lab]] = sig.spread

    mu = np.array([config.lab_baselines[lab][0] for lab in labs])
    sd = np.array([config.lab_baselines[lab][1] for lab in labs])

    # all draws happen in one fixed order so the stream is reproducible
    z = rng.normal(size=(n, n_labs))
    values = mu[None, :] + sd[None, :] * (shift[groups] + spread[groups] * z)
    values = np.maximum(values, 0.0)  # labs are non-negative quantities
    present = rng.random((n, n_labs)) >= np.array(
        [config.missingness.get(lab, config.default_missingness) for lab in labs]
    )[None, :]
    obs_offsets = rng.integers(0, 365, size=(n, n_labs))
    stale = rng.random((n, n_labs)) < config.stale_fraction
    stale_values = np.maximum(mu[None, :] + sd[None, :] * rng.normal(size=(n, n_labs)), 0.0)
    stale_offsets = 365 + rng.integers(1, 180, size=(n, n_labs))

    # diagnosis codes drawn uniformly within each patient's group
    code_pool = {g.index: sorted(g.icd10_codes) for g in catalog.groups}
    code_picks = rng.random(n)

    units = {lab: catalog.labs[lab].canonical_unit for lab in labs}
    normal_index = catalog.group_by_name("normal").index

    for i in range(n):
        pid = f"p{i:06d}"
        age = str(ages[i])
        gender = "F" if female[i] else "M"
        anchor = config.anchor_start + dt.timedelta(days=int(anchor_offsets[i]))
        base = {
            "patient_id": pid,
            "age": age,
            "gender": gender,
            "lab_name": "",
            "lab_unit": "",
            "value": "",
            "observed_at": "",
            "icd10_code": "",
            "diagnosis_date": "",
        }
        for j, lab in enumerate(labs):
            if stale[i, j]:
                yield {
                    **base,
                    "lab_name": lab,
                    "lab_unit": units[lab],
                    "value": _fmt(stale_values[i, j]),
                    "observed_at": (anchor - dt.timedelta(days=int(stale_offsets[i, j]))).isoformat(),
                }
            if present[i, j]:
                yield {
                    **base,
                    "lab_name": lab,
                    "lab_unit": units[lab],
                    "value": _fmt(values[i, j]),
                    "observed_at": (anchor - dt.timedelta(days=int(obs_offsets[i, j]))).isoformat(),
                }
        g = int(groups[i])
        if g != normal_index:
            codes = code_pool[g]
            code = codes[int(code_picks[i] * len(codes))]
            yield {**base, "icd10_code": code, "diagnosis_date": anchor.isoformat()}


def generate_csv(config: SynthConfig, catalog: Catalog, dest: Path) -> int:
    """Write the synthetic cohort CSV; returns the number of rows written."""
    count = 0

    def counted() -> Iterator[dict]:
        nonlocal count
        for row in generate_rows(config, catalog):
            count += 1
            yield row

    write_ingest_csv(counted(), dest)
    return count
