"""Exact per-tree Shapley attributions for forest predictions.

Attributions are computed in margin space against the cover-weighted
background the trees saw in training (path-dependent valuation): for a
feature subset S, the value is the conditional expectation obtained by
following x on features in S and splitting by cover proportions on the
rest.  The polynomial-time path algorithm below sums, per leaf, the
Shapley weights of every subset consistent with that leaf, so its output
equals brute-force subset enumeration exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .gbdt import ForestModel, TreeNode, predict_margins

__all__ = [
    "Explanation",
    "SummaryReport",
    "MissingCoverError",
    "shap_values",
    "summarize",
    "tree_expected_value",
    "explanation_to_dict",
    "explanation_to_json",
]


class MissingCoverError(ValueError):
    """The model has nodes without recorded covers; retrain to record them."""


@dataclass
class Explanation:
    class_index: int
    class_name: str
    base_value: float
    phi: np.ndarray  # one attribution per feature
    fx: float  # explained margin
    feature_names: list[str]
    feature_values: np.ndarray

    def additivity_gap(self) -> float:
        return abs(self.base_value + float(self.phi.sum()) - self.fx)


@dataclass
class SummaryReport:
    class_index: int
    class_name: str
    entries: list[tuple[str, float]]  # (feature name, mean |phi|), descending


# -- path bookkeeping ----------------------------------------------------------
# A path element is [feature, zero_fraction, one_fraction, subset_weight]:
# the cover fraction flowing when the feature is excluded, an indicator of
# x following the branch when included, and the accumulated Shapley weight
# mass for subsets of each size.


def _extend(path: list[list], zero_fraction: float, one_fraction: float, feature: int) -> None:
    l = len(path)
    path.append([feature, zero_fraction, one_fraction, 1.0 if l == 0 else 0.0])
    for i in range(l - 1, -1, -1):
        path[i + 1][3] += one_fraction * path[i][3] * (i + 1) / (l + 1)
        path[i][3] = zero_fraction * path[i][3] * (l - i) / (l + 1)


def _unwind(path: list[list], index: int) -> None:
    l = len(path)
    one_fraction = path[index][2]
    zero_fraction = path[index][1]
    n = path[l - 1][3]
    for j in range(l - 2, -1, -1):
        if one_fraction != 0.0:
            tmp = path[j][3]
            path[j][3] = n * l / ((j + 1) * one_fraction)
            n = tmp - path[j][3] * zero_fraction * (l - 1 - j) / l
        else:
            path[j][3] = path[j][3] * l / (zero_fraction * (l - 1 - j))
    for j in range(index, l - 1):
        path[j][0] = path[j + 1][0]
        path[j][1] = path[j + 1][1]
        path[j][2] = path[j + 1][2]
    path.pop()


def _unwound_sum(path: list[list], index: int) -> float:
    l = len(path)
    one_fraction = path[index][2]
    zero_fraction = path[index][1]
    n = path[l - 1][3]
    total = 0.0
    for j in range(l - 2, -1, -1):
        if one_fraction != 0.0:
            tmp = n * l / ((j + 1) * one_fraction)
            total += tmp
            n = path[j][3] - tmp * zero_fraction * (l - 1 - j) / l
        else:
            total += path[j][3] * l / (zero_fraction * (l - 1 - j))
    return total


def _tree_shap(root: TreeNode, x: np.ndarray, phi: np.ndarray) -> None:
    def recurse(
        node: TreeNode,
        parent_path: list[list],
        zero_fraction: float,
        one_fraction: float,
        feature: int,
    ) -> None:
        path = [elem.copy() for elem in parent_path]
        _extend(path, zero_fraction, one_fraction, feature)

        if node.is_leaf:
            for i in range(1, len(path)):
                w = _unwound_sum(path, i)
                elem = path[i]
                phi[elem[0]] += w * (elem[2] - elem[1]) * node.weight
            return

        v = x[node.feature]
        goes_left = node.default_left if math.isnan(v) else bool(v < node.threshold)
        hot, cold = (node.left, node.right) if goes_left else (node.right, node.left)

        incoming_zero, incoming_one = 1.0, 1.0
        for k in range(1, len(path)):
            if path[k][0] == node.feature:
                incoming_zero, incoming_one = path[k][1], path[k][2]
                _unwind(path, k)
                break

        recurse(hot, path, incoming_zero * hot.cover / node.cover, incoming_one, node.feature)
        recurse(cold, path, incoming_zero * cold.cover / node.cover, 0.0, node.feature)

    recurse(root, [], 1.0, 1.0, -1)


def tree_expected_value(node: TreeNode) -> float:
    """Cover-weighted mean leaf value: the margin an empty feature set predicts."""
    if node.is_leaf:
        return node.weight
    cl, cr = node.left.cover, node.right.cover
    return (cl * tree_expected_value(node.left) + cr * tree_expected_value(node.right)) / (cl + cr)


def _check_covers(node: TreeNode) -> bool:
    if node.cover is None:
        return False
    if node.is_leaf:
        return True
    return _check_covers(node.left) and _check_covers(node.right)


# -- public API -----------------------------------------------------------------


def shap_values(model: ForestModel, values: np.ndarray, class_index: int) -> Explanation:
    """Exact Shapley attributions of one prediction's margin for one class.

    Requires per-node covers recorded at training time; models without them
    cannot weight the background and must be retrained.
    """
    if not 0 <= class_index < model.n_classes:
        raise ValueError(f"class_index must be in [0, {model.n_classes}), got {class_index}")
    x = np.asarray(values, dtype=np.float64)
    if x.shape != (len(model.feature_names),):
        raise ValueError(f"expected {len(model.feature_names)} feature values, got {x.shape}")

    roots = model.class_trees(class_index)
    for root in roots:
        if not _check_covers(root):
            raise MissingCoverError(
                "model has nodes without covers; retrain so covers are recorded"
            )

    phi = np.zeros(len(model.feature_names), dtype=np.float64)
    base_value = model.base_score
    for root in roots:
        base_value += tree_expected_value(root)
        _tree_shap(root, x, phi)

    fx = float(predict_margins(model, x)[class_index])
    return Explanation(
        class_index=class_index,
        class_name=model.classes[class_index],
        base_value=float(base_value),
        phi=phi,
        fx=fx,
        feature_names=list(model.feature_names),
        feature_values=x,
    )


def summarize(model: ForestModel, X: np.ndarray, class_index: int) -> SummaryReport:
    """Mean absolute attribution per feature over a dataset, sorted descending."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("summarize needs a non-empty 2-d dataset")
    totals = np.zeros(len(model.feature_names))
    for row in X:
        totals += np.abs(shap_values(model, row, class_index).phi)
    means = totals / X.shape[0]
    order = sorted(range(len(means)), key=lambda i: (-means[i], i))
    return SummaryReport(
        class_index=class_index,
        class_name=model.classes[class_index],
        entries=[(model.feature_names[i], float(means[i])) for i in order],
    )


def explanation_to_dict(explanation: Explanation) -> dict:
    return {
        "class": explanation.class_name,
        "base_value": explanation.base_value,
        "fx": explanation.fx,
        "features": [
            {
                "name": name,
                "value": None if np.isnan(v) else float(v),
                "phi": float(p),
            }
            for name, v, p in zip(
                explanation.feature_names, explanation.feature_values, explanation.phi
            )
        ],
    }


def explanation_to_json(explanation: Explanation) -> str:
    return json.dumps(explanation_to_dict(explanation), separators=(",", ":"))
