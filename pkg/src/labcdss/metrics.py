"""Evaluation harness: Top-N accuracy, per-disease recall, confusion, distribution.

Top-N follows the most-probable-N criterion: a hit when the true class
appears among the N highest-probability classes (deterministic tie-break
by class index).  The distribution section compares true label prevalence
against Top-1 predicted prevalence, the gap the weighting strategy is
meant to keep small.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .gbdt import ForestModel

__all__ = ["EvalReport", "evaluate_model", "report_from_proba", "render_report", "report_from_json"]


@dataclass
class EvalReport:
    class_names: list[str]
    n_test: int
    top_n_accuracy: dict[int, float]  # N -> fraction, N = 1..K
    recall_at_n: dict[str, dict[int, float]]  # class -> N -> fraction
    confusion: np.ndarray  # rows = true, cols = Top-1 predicted
    distribution: dict[str, tuple[float, float]]  # class -> (actual %, predicted %)
    max_abs_diff: float  # percentage points

    def to_dict(self) -> dict:
        return {
            "classes": list(self.class_names),
            "n_test": self.n_test,
            "top_n_accuracy": {str(n): v for n, v in self.top_n_accuracy.items()},
            "recall_at_n": {
                name: {str(n): v for n, v in per_n.items()}
                for name, per_n in self.recall_at_n.items()
            },
            "confusion": self.confusion.tolist(),
            "confusion_row_normalized": _normalize(self.confusion, axis=1).tolist(),
            "confusion_col_normalized": _normalize(self.confusion, axis=0).tolist(),
            "distribution": {
                name: {"actual_pct": a, "predicted_pct": p}
                for name, (a, p) in self.distribution.items()
            },
            "max_abs_diff": self.max_abs_diff,
        }


def _normalize(confusion: np.ndarray, axis: int) -> np.ndarray:
    sums = confusion.sum(axis=axis, keepdims=True).astype(np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = confusion / sums
    return np.nan_to_num(out, nan=0.0)


def _ranked_classes(proba_row: np.ndarray) -> np.ndarray:
    k = proba_row.shape[0]
    return np.lexsort((np.arange(k), -proba_row))


def report_from_proba(class_names: list[str], proba: np.ndarray, y: np.ndarray) -> EvalReport:
    """Score a probability table against true labels."""
    proba = np.asarray(proba, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n = proba.shape[0]
    if n == 0:
        raise ValueError("test set is empty")
    k = len(class_names)
    if proba.shape[1] != k:
        raise ValueError("probability table width does not match the class list")
    if y.min() < 0 or y.max() >= k:
        raise ValueError("test labels do not match the model's classes")

    # rank position of the true class under the deterministic ordering
    rank_of_true = np.empty(n, dtype=np.int64)
    top1 = np.empty(n, dtype=np.int64)
    for i in range(n):
        order = _ranked_classes(proba[i])
        top1[i] = order[0]
        rank_of_true[i] = int(np.nonzero(order == y[i])[0][0])

    top_n_accuracy = {m: float(np.mean(rank_of_true < m)) for m in range(1, k + 1)}

    recall_at_n: dict[str, dict[int, float]] = {}
    for c, name in enumerate(class_names):
        members = rank_of_true[y == c]
        if members.size == 0:
            recall_at_n[name] = {m: 0.0 for m in range(1, k + 1)}
        else:
            recall_at_n[name] = {m: float(np.mean(members < m)) for m in range(1, k + 1)}

    confusion = np.zeros((k, k), dtype=np.int64)
    np.add.at(confusion, (y, top1), 1)

    actual_pct = 100.0 * np.bincount(y, minlength=k) / n
    predicted_pct = 100.0 * np.bincount(top1, minlength=k) / n
    distribution = {
        name: (float(actual_pct[c]), float(predicted_pct[c]))
        for c, name in enumerate(class_names)
    }
    max_abs_diff = float(np.max(np.abs(actual_pct - predicted_pct)))

    return EvalReport(
        class_names=list(class_names),
        n_test=n,
        top_n_accuracy=top_n_accuracy,
        recall_at_n=recall_at_n,
        confusion=confusion,
        distribution=distribution,
        max_abs_diff=max_abs_diff,
    )


def evaluate_model(model: ForestModel, X: np.ndarray, y: np.ndarray) -> EvalReport:
    """Score a model on a held-out split."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] == 0:
        raise ValueError("test set is empty")
    return report_from_proba(model.classes, model.predict_proba_batch(X), y)


# -- rendering -----------------------------------------------------------------


def render_report(report: EvalReport, fmt: str) -> bytes:
    if fmt == "json":
        return (json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n").encode()
    if fmt == "tsv":
        return _render_tsv(report).encode()
    if fmt == "markdown":
        return _render_markdown(report).encode()
    raise ValueError(f"unknown report format {fmt!r} (expected json, tsv, or markdown)")


def report_from_json(data: bytes | str) -> EvalReport:
    doc = json.loads(data)
    return EvalReport(
        class_names=list(doc["classes"]),
        n_test=int(doc["n_test"]),
        top_n_accuracy={int(n): float(v) for n, v in doc["top_n_accuracy"].items()},
        recall_at_n={
            name: {int(n): float(v) for n, v in per_n.items()}
            for name, per_n in doc["recall_at_n"].items()
        },
        confusion=np.asarray(doc["confusion"], dtype=np.int64),
        distribution={
            name: (float(d["actual_pct"]), float(d["predicted_pct"]))
            for name, d in doc["distribution"].items()
        },
        max_abs_diff=float(doc["max_abs_diff"]),
    )


def _render_tsv(report: EvalReport) -> str:
    k = len(report.class_names)
    sections = []

    lines = ["top_n\taccuracy"]
    lines += [f"{n}\t{report.top_n_accuracy[n]:.6f}" for n in range(1, k + 1)]
    sections.append("\n".join(lines))

    upto = min(5, k)
    header = "disease\t" + "\t".join(f"top{n}" for n in range(1, upto + 1))
    lines = [header]
    for name in report.class_names:
        cells = "\t".join(f"{report.recall_at_n[name][n]:.6f}" for n in range(1, upto + 1))
        lines.append(f"{name}\t{cells}")
    sections.append("\n".join(lines))

    lines = ["disease\tactual_pct\tpredicted_pct"]
    for name in report.class_names:
        a, p = report.distribution[name]
        lines.append(f"{name}\t{a:.2f}\t{p:.2f}")
    sections.append("\n".join(lines))

    lines = ["confusion\t" + "\t".join(report.class_names)]
    for c, name in enumerate(report.class_names):
        lines.append(name + "\t" + "\t".join(str(v) for v in report.confusion[c]))
    sections.append("\n".join(lines))

    return "\n\n".join(sections) + "\n"


def _render_markdown(report: EvalReport) -> str:
    k = len(report.class_names)
    out = ["# Evaluation report", "", f"Instances evaluated: {report.n_test}", ""]

    out.append("## Top-N accuracy (%)")
    out.append("")
    ns = list(range(1, k + 1))
    out.append("| Top-N | " + " | ".join(str(n) for n in ns) + " |")
    out.append("|---" * (k + 1) + "|")
    out.append(
        "| Accuracy | "
        + " | ".join(f"{100.0 * report.top_n_accuracy[n]:.2f}" for n in ns)
        + " |"
    )
    out.append("")

    upto = min(5, k)
    out.append("## Recall at rank N")
    out.append("")
    out.append("| Disease | " + " | ".join(f"Top {n}" for n in range(1, upto + 1)) + " |")
    out.append("|---" * (upto + 1) + "|")
    for name in report.class_names:
        cells = " | ".join(f"{report.recall_at_n[name][n]:.3f}" for n in range(1, upto + 1))
        out.append(f"| {name} | {cells} |")
    out.append("")

    out.append("## Top-1 prediction distribution (%)")
    out.append("")
    out.append("| Disease | Actual | Predicted |")
    out.append("|---|---|---|")
    for name in report.class_names:
        a, p = report.distribution[name]
        out.append(f"| {name} | {a:.2f} | {p:.2f} |")
    out.append("")
    out.append(f"Max actual-vs-predicted gap: {report.max_abs_diff:.2f} points")
    out.append("")

    out.append("## Confusion matrix (rows = true, columns = Top-1 predicted)")
    out.append("")
    out.append("| | " + " | ".join(report.class_names) + " |")
    out.append("|---" * (k + 1) + "|")
    for c, name in enumerate(report.class_names):
        out.append(f"| {name} | " + " | ".join(str(v) for v in report.confusion[c]) + " |")
    out.append("")

    return "\n".join(out)
