"""Cohort construction, cleaning, splitting, weighting, and grid search.

Every stage is a deterministic function of its inputs plus an explicit
seed, and nothing computed from the test split ever feeds back into a
training artifact: outlier statistics, class weights, and grid search all
see training rows only.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .catalog import Catalog
from .gbdt import ClassWeights, Dataset, ForestModel, TrainParams, top_n, train
from .records import PatientRecord, build_feature_vector, feature_names

__all__ = [
    "CohortSpec",
    "SplitSpec",
    "Cohort",
    "OutlierReport",
    "build_cohort",
    "remove_outliers",
    "apply_outlier_bounds",
    "stratified_split",
    "class_weights",
    "kfold",
    "undersample",
    "grid_search",
    "top_k_accuracy",
    "file_digest",
    "write_manifest",
]


@dataclass(frozen=True)
class CohortSpec:
    window_days: int = 365
    outlier_k: float = 4.0
    require_labs_in_window: bool = True

    def __post_init__(self):
        if self.window_days <= 0:
            raise ValueError("window_days must be positive")
        if self.outlier_k <= 0:
            raise ValueError("outlier_k must be positive")

    def to_dict(self) -> dict:
        return {
            "window_days": self.window_days,
            "outlier_k": self.outlier_k,
            "require_labs_in_window": self.require_labs_in_window,
        }


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    folds: int = 5
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must be in (0, 1)")
        if self.folds < 2:
            raise ValueError("folds must be >= 2")

    def to_dict(self) -> dict:
        return {"train_fraction": self.train_fraction, "folds": self.folds, "seed": self.seed}


@dataclass
class Cohort:
    """Labeled feature table plus bookkeeping from cohort construction."""

    X: np.ndarray
    y: np.ndarray
    patient_ids: list[str]
    feature_names: list[str]
    class_names: list[str]
    exclusions: dict[str, int] = field(default_factory=dict)

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def lab_columns(self) -> range:
        # layout: [age, gender, labs...]; outlier policy applies to labs only
        return range(2, self.X.shape[1])

    def subset(self, idx: np.ndarray) -> "Cohort":
        # patient ids are bookkeeping; cohorts loaded from arrays carry none
        ids = [self.patient_ids[i] for i in idx] if self.patient_ids else []
        return Cohort(
            X=self.X[idx].copy(),
            y=self.y[idx].copy(),
            patient_ids=ids,
            feature_names=self.feature_names,
            class_names=self.class_names,
        )

    def as_dataset(self) -> Dataset:
        return Dataset(self.X, self.y, self.feature_names, self.class_names)


def build_cohort(
    patients: Sequence[PatientRecord], catalog: Catalog, spec: CohortSpec = CohortSpec()
) -> Cohort:
    """Label and window patients into a training table.

    Diseased patients take the group of their earliest in-pool diagnosis,
    with that date as the feature-window reference; patients with no
    in-pool diagnosis are "normal", anchored at their latest lab.
    Ineligible records are dropped and counted, never raised.
    """
    exclusions = {
        "missing_age": 0,
        "missing_gender": 0,
        "no_reference_date": 0,
        "no_labs_in_window": 0,
        "malformed_icd10": 0,
    }
    names = feature_names(catalog)
    normal_index = catalog.group_by_name("normal").index
    rows, labels, kept_ids = [], [], []

    for patient in patients:
        if patient.age is None:
            exclusions["missing_age"] += 1
            continue
        if patient.gender not in ("female", "male"):
            exclusions["missing_gender"] += 1
            continue

        in_pool = []
        for diag in patient.diagnoses:
            try:
                group = catalog.icd_to_group(diag.icd10_code)
            except ValueError:
                exclusions["malformed_icd10"] += 1
                continue
            if group is not None:
                in_pool.append((diag.diagnosed_at, group))
        if in_pool:
            ref_date, group = min(in_pool, key=lambda t: t[0])
            label = group.index
        else:
            if not patient.observations:
                exclusions["no_reference_date"] += 1
                continue
            ref_date = max(obs.observed_at for obs in patient.observations)
            label = normal_index

        anchored = copy.copy(patient)
        anchored.reference_date = ref_date
        fv = build_feature_vector(anchored, catalog, spec.window_days)
        if spec.require_labs_in_window and np.isnan(fv.values[2:]).all():
            exclusions["no_labs_in_window"] += 1
            continue
        rows.append(fv.values)
        labels.append(label)
        kept_ids.append(patient.patient_id)

    X = np.vstack(rows) if rows else np.empty((0, len(names)))
    return Cohort(
        X=X,
        y=np.asarray(labels, dtype=np.int64),
        patient_ids=kept_ids,
        feature_names=names,
        class_names=catalog.group_names(),
        exclusions=exclusions,
    )


# -- outliers ------------------------------------------------------------------


@dataclass
class OutlierReport:
    bounds: dict[str, tuple[float, float]]  # feature -> (lo, hi)
    removed: dict[str, int]

    @property
    def total_removed(self) -> int:
        return sum(self.removed.values())


def remove_outliers(cohort: Cohort, k: float = 4.0) -> tuple[Cohort, OutlierReport]:
    """Null out lab values beyond k standard deviations from the column mean.

    One pass: the mean/std are computed once over present values, values
    strictly outside [mean - k*std, mean + k*std] become missing, and the
    fitted bounds come back so a held-out split can be cleaned without
    refitting (leakage discipline).
    """
    if k <= 0:
        raise ValueError("k must be positive")
    bounds: dict[str, tuple[float, float]] = {}
    X = cohort.X.copy()
    for j in cohort.lab_columns:
        col = X[:, j]
        present = ~np.isnan(col)
        if not present.any():
            continue
        mu = float(col[present].mean())
        sigma = float(col[present].std())
        bounds[cohort.feature_names[j]] = (mu - k * sigma, mu + k * sigma)
    cleaned = Cohort(
        X=X,
        y=cohort.y.copy(),
        patient_ids=list(cohort.patient_ids),
        feature_names=cohort.feature_names,
        class_names=cohort.class_names,
        exclusions=dict(cohort.exclusions),
    )
    report = _apply_bounds(cleaned, bounds)
    return cleaned, report


def apply_outlier_bounds(cohort: Cohort, bounds: dict[str, tuple[float, float]]) -> tuple[Cohort, OutlierReport]:
    """Clean a dataset with bounds fitted elsewhere (e.g. test split with train bounds)."""
    cleaned = Cohort(
        X=cohort.X.copy(),
        y=cohort.y.copy(),
        patient_ids=list(cohort.patient_ids),
        feature_names=cohort.feature_names,
        class_names=cohort.class_names,
        exclusions=dict(cohort.exclusions),
    )
    report = _apply_bounds(cleaned, bounds)
    return cleaned, report


def _apply_bounds(cohort: Cohort, bounds: dict[str, tuple[float, float]]) -> OutlierReport:
    removed: dict[str, int] = {}
    for j in cohort.lab_columns:
        name = cohort.feature_names[j]
        if name not in bounds:
            continue
        lo, hi = bounds[name]
        col = cohort.X[:, j]
        with np.errstate(invalid="ignore"):
            mask = (col < lo) | (col > hi)
        count = int(mask.sum())
        if count:
            col[mask] = np.nan
            removed[name] = count
    return OutlierReport(bounds=bounds, removed=removed)


# -- splitting -----------------------------------------------------------------


def stratified_split(cohort: Cohort, spec: SplitSpec) -> tuple[Cohort, Cohort]:
    """Seeded stratified train/test split preserving class proportions within 1."""
    rng = np.random.default_rng(spec.seed)
    train_idx, test_idx = [], []
    for c in range(len(cohort.class_names)):
        members = np.nonzero(cohort.y == c)[0]
        if members.size == 0:
            continue
        if members.size < 2:
            raise ValueError(
                f"class {cohort.class_names[c]!r} has {members.size} member(s); need >= 2"
            )
        perm = rng.permutation(members.size)
        n_train = int(np.floor(spec.train_fraction * members.size + 0.5))
        n_train = min(max(n_train, 1), members.size - 1)
        train_idx.append(members[perm[:n_train]])
        test_idx.append(members[perm[n_train:]])
    train_rows = np.sort(np.concatenate(train_idx))
    test_rows = np.sort(np.concatenate(test_idx))
    return cohort.subset(train_rows), cohort.subset(test_rows)


def class_weights(y: np.ndarray, n_classes: int) -> ClassWeights:
    """Square root of inverse class frequency, mean-normalized to 1."""
    y = np.asarray(y)
    counts = np.bincount(y, minlength=n_classes)
    if (counts == 0).any():
        absent = [i for i, c in enumerate(counts) if c == 0]
        raise ValueError(f"classes absent from training labels: {absent}")
    raw = y.shape[0] / (n_classes * counts.astype(np.float64))
    w = np.sqrt(raw)
    w /= w.mean()
    return ClassWeights(tuple(float(v) for v in w))


def kfold(y: np.ndarray, folds: int, seed: int) -> np.ndarray:
    """Stratified fold assignment; per-class fold sizes differ by at most 1."""
    y = np.asarray(y)
    if folds < 2:
        raise ValueError("folds must be >= 2")
    counts = np.bincount(y)
    smallest = counts[counts > 0].min()
    if folds > smallest:
        raise ValueError(f"folds ({folds}) exceeds the smallest class size ({smallest})")
    rng = np.random.default_rng(seed)
    assignment = np.full(y.shape[0], -1, dtype=np.int64)
    for c in np.nonzero(counts)[0]:
        members = np.nonzero(y == c)[0]
        perm = rng.permutation(members)
        assignment[perm] = np.arange(perm.size) % folds
    return assignment


def undersample(cohort: Cohort, seed: int) -> Cohort:
    """Balance classes down to the smallest class count (comparison flag only;
    this loses data and is not the default weighting strategy)."""
    rng = np.random.default_rng(seed)
    counts = np.bincount(cohort.y, minlength=len(cohort.class_names))
    target = counts[counts > 0].min()
    keep = []
    for c in range(len(cohort.class_names)):
        members = np.nonzero(cohort.y == c)[0]
        if members.size == 0:
            continue
        perm = rng.permutation(members.size)
        keep.append(members[perm[:target]])
    return cohort.subset(np.sort(np.concatenate(keep)))


# -- model selection -------------------------------------------------------------


def top_k_accuracy(model: ForestModel, X: np.ndarray, y: np.ndarray, n: int = 5) -> float:
    n = min(n, model.n_classes)
    proba = model.predict_proba_batch(X)
    hits = sum(1 for i in range(X.shape[0]) if int(y[i]) in top_n(proba[i], n))
    return hits / X.shape[0]


def grid_search(
    cohort: Cohort,
    grid: Sequence[TrainParams],
    folds: int = 5,
    seed: int = 0,
    metric: Callable[[ForestModel, np.ndarray, np.ndarray], float] | None = None,
) -> tuple[TrainParams, list[dict]]:
    """Evaluate every lattice point by mean fold score; ties keep lattice order.

    The default metric is Top-5 accuracy, the operating point the
    evaluation centers on.
    """
    if not grid:
        raise ValueError("grid must be non-empty")
    if metric is None:
        metric = top_k_accuracy
    assignment = kfold(cohort.y, folds, seed)
    table: list[dict] = []
    best_index, best_score = 0, -np.inf
    for i, params in enumerate(grid):
        fold_scores = []
        for f in range(folds):
            fit_rows = np.nonzero(assignment != f)[0]
            val_rows = np.nonzero(assignment == f)[0]
            sub = cohort.subset(fit_rows)
            try:
                weights = class_weights(sub.y, len(cohort.class_names))
                model = train(sub.as_dataset(), params, weights)
            except Exception as exc:
                raise RuntimeError(f"grid point {i} ({params}) failed in fold {f}: {exc}") from exc
            fold_scores.append(metric(model, cohort.X[val_rows], cohort.y[val_rows]))
        mean_score = float(np.mean(fold_scores))
        table.append(
            {"params": params.to_dict(), "fold_scores": fold_scores, "mean_score": mean_score}
        )
        if mean_score > best_score:
            best_index, best_score = i, mean_score
    return grid[best_index], table


# -- provenance -------------------------------------------------------------------


def file_digest(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(
    path: Path,
    input_digest: str,
    cohort_spec: CohortSpec,
    split_spec: SplitSpec,
    seeds: dict[str, int],
    artifacts: dict[str, str],
) -> None:
    doc = {
        "input_digest": input_digest,
        "cohort_spec": cohort_spec.to_dict(),
        "split_spec": split_spec.to_dict(),
        "seeds": seeds,
        "artifacts": artifacts,
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
