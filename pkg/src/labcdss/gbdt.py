"""Multi-class gradient-boosted decision trees with a softmax objective.

Second-order boosting: per round, one tree per class is grown by exact
greedy split search over the present values of each candidate feature.
Missing values are first-class citizens: every candidate split is scored
with the missing instances routed left and routed right, and the better
direction is stored on the node, so incomplete lab panels need no
imputation.  Per-node covers (hessian mass) are recorded for the
explanation layer.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba installed
    _HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        return wrap if not (args and callable(args[0])) else args[0]

__all__ = [
    "TrainParams",
    "ClassWeights",
    "TreeNode",
    "ForestModel",
    "Dataset",
    "TrainingError",
    "softmax",
    "softmax_grad_hess",
    "split_gain",
    "train",
    "predict_margins",
    "predict_proba",
    "top_n",
]

HESSIAN_FLOOR = 1e-16
FORMAT_VERSION = 1


class TrainingError(ValueError):
    pass


@dataclass(frozen=True)
class TrainParams:
    max_depth: int = 6
    learning_rate: float = 0.1
    n_estimators: int = 200
    gamma: float = 0.0
    subsample: float = 0.8
    colsample_bytree: float = 0.8
    reg_lambda: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValueError("learning_rate must be in (0, 1]")
        if self.n_estimators < 1:
            raise ValueError("n_estimators must be >= 1")
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if not 0.0 < self.subsample <= 1.0:
            raise ValueError("subsample must be in (0, 1]")
        if not 0.0 < self.colsample_bytree <= 1.0:
            raise ValueError("colsample_bytree must be in (0, 1]")
        if self.reg_lambda < 0:
            raise ValueError("reg_lambda must be >= 0")

    def to_dict(self) -> dict:
        return {
            "max_depth": self.max_depth,
            "learning_rate": self.learning_rate,
            "n_estimators": self.n_estimators,
            "gamma": self.gamma,
            "subsample": self.subsample,
            "colsample_bytree": self.colsample_bytree,
            "reg_lambda": self.reg_lambda,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class ClassWeights:
    values: tuple[float, ...]

    def __post_init__(self):
        if any(v <= 0 for v in self.values):
            raise ValueError("class weights must be positive")
        mean = sum(self.values) / len(self.values)
        if abs(mean - 1.0) > 1e-9:
            raise ValueError(f"class weights must be mean-normalized to 1, got mean {mean}")

    @classmethod
    def uniform(cls, k: int) -> "ClassWeights":
        return cls((1.0,) * k)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)


@dataclass
class TreeNode:
    """Either a split (feature/threshold/children) or a leaf (weight)."""

    weight: float | None = None
    feature: int | None = None
    threshold: float | None = None
    default_left: bool | None = None
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    cover: float | None = None  # hessian mass of routed training instances

    @property
    def is_leaf(self) -> bool:
        return self.feature is None

    def to_dict(self) -> dict:
        if self.is_leaf:
            return {"weight": self.weight, "cover": self.cover}
        return {
            "feature": self.feature,
            "threshold": self.threshold,
            "default_left": self.default_left,
            "cover": self.cover,
            "left": self.left.to_dict(),
            "right": self.right.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TreeNode":
        if "feature" not in d:
            return cls(weight=float(d["weight"]), cover=d.get("cover"))
        return cls(
            feature=int(d["feature"]),
            threshold=float(d["threshold"]),
            default_left=bool(d["default_left"]),
            cover=d.get("cover"),
            left=cls.from_dict(d["left"]),
            right=cls.from_dict(d["right"]),
        )


@dataclass
class Dataset:
    """Training table: rows are feature vectors (NaN = missing), labels are class indices."""

    X: np.ndarray
    y: np.ndarray
    feature_names: list[str]
    class_names: list[str]

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 2 or self.X.shape[0] != self.y.shape[0]:
            raise ValueError("X and y shapes do not line up")
        if self.X.shape[1] != len(self.feature_names):
            raise ValueError("feature_names length does not match X columns")
        if np.isinf(self.X).any():
            raise ValueError("feature values must be finite or NaN")

    def __len__(self) -> int:
        return self.X.shape[0]


# -- flat tree for fast batched routing ---------------------------------------


class _FlatTree:
    def __init__(self, root: TreeNode):
        feat, thr, dleft, left, right, weight, cover = [], [], [], [], [], [], []

        def walk(node: TreeNode) -> int:
            i = len(feat)
            feat.append(-1 if node.is_leaf else node.feature)
            thr.append(np.nan if node.is_leaf else node.threshold)
            dleft.append(False if node.is_leaf else node.default_left)
            weight.append(node.weight if node.is_leaf else 0.0)
            cover.append(np.nan if node.cover is None else node.cover)
            left.append(-1)
            right.append(-1)
            if not node.is_leaf:
                left[i] = walk(node.left)
                right[i] = walk(node.right)
            return i

        walk(root)
        self.feat = np.asarray(feat, dtype=np.int64)
        self.thr = np.asarray(thr, dtype=np.float64)
        self.dleft = np.asarray(dleft, dtype=bool)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.weight = np.asarray(weight, dtype=np.float64)
        self.cover = np.asarray(cover, dtype=np.float64)

    def leaf_values(self, X: np.ndarray) -> np.ndarray:
        """Route every row to its leaf; NaN features follow the default direction."""
        idx = np.zeros(X.shape[0], dtype=np.int64)
        while True:
            internal = self.feat[idx] >= 0
            if not internal.any():
                return self.weight[idx]
            rows = np.nonzero(internal)[0]
            at = idx[rows]
            v = X[rows, self.feat[at]]
            go_left = np.where(np.isnan(v), self.dleft[at], v < self.thr[at])
            idx[rows] = np.where(go_left, self.left[at], self.right[at])


@dataclass
class ForestModel:
    trees: list[tuple[int, int, TreeNode]]  # (round, class_index, root)
    base_score: float
    classes: list[str]
    feature_names: list[str]
    params: TrainParams
    manifest_digest: str | None = None
    _flat: dict[int, _FlatTree] = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def class_trees(self, class_index: int) -> list[TreeNode]:
        return [root for _, k, root in self.trees if k == class_index]

    def _flat_tree(self, i: int) -> _FlatTree:
        if i not in self._flat:
            self._flat[i] = _FlatTree(self.trees[i][2])
        return self._flat[i]

    def predict_margins_batch(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != len(self.feature_names):
            raise ValueError(
                f"expected {len(self.feature_names)} features, got {X.shape}"
            )
        margins = np.full((X.shape[0], self.n_classes), self.base_score, dtype=np.float64)
        for i, (_, k, _) in enumerate(self.trees):
            margins[:, k] += self._flat_tree(i).leaf_values(X)
        return margins

    def predict_proba_batch(self, X: np.ndarray) -> np.ndarray:
        return softmax(self.predict_margins_batch(X))

    # -- serialization -------------------------------------------------------

    def to_json(self) -> str:
        doc = {
            "format_version": FORMAT_VERSION,
            "classes": self.classes,
            "feature_names": self.feature_names,
            "base_score": self.base_score,
            "params": self.params.to_dict(),
            "manifest_digest": self.manifest_digest,
            "trees": [
                {"round": r, "class": k, "nodes": root.to_dict()}
                for r, k, root in self.trees
            ],
        }
        return json.dumps(doc, separators=(",", ":")) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ForestModel":
        doc = json.loads(text)
        if doc.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported model format_version: {doc.get('format_version')}")
        return cls(
            trees=[
                (t["round"], t["class"], TreeNode.from_dict(t["nodes"]))
                for t in doc["trees"]
            ],
            base_score=float(doc["base_score"]),
            classes=list(doc["classes"]),
            feature_names=list(doc["feature_names"]),
            params=TrainParams(**doc["params"]),
            manifest_digest=doc.get("manifest_digest"),
        )

    def save(self, path: Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path: Path) -> "ForestModel":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


# -- objective ----------------------------------------------------------------


def softmax(margins: np.ndarray) -> np.ndarray:
    m = np.asarray(margins, dtype=np.float64)
    shifted = m - np.max(m, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def softmax_grad_hess(
    margins: np.ndarray, true_class: int, instance_weight: float = 1.0
) -> tuple[np.ndarray, np.ndarray]:
    """First/second derivatives of the weighted softmax cross-entropy for one instance."""
    m = np.asarray(margins, dtype=np.float64)
    if not np.all(np.isfinite(m)):
        raise ValueError("margins must be finite")
    if instance_weight <= 0:
        raise ValueError("instance_weight must be positive")
    if not 0 <= true_class < m.shape[-1]:
        raise ValueError("true_class out of range")
    p = softmax(m)
    g = instance_weight * (p - np.eye(m.shape[-1])[true_class])
    h = np.maximum(instance_weight * p * (1.0 - p), HESSIAN_FLOOR)
    return g, h


def split_gain(
    g_left: float, h_left: float, g_right: float, h_right: float,
    reg_lambda: float, gamma: float,
) -> float:
    """Second-order gain of a split, minus the per-split penalty."""
    def score(g, h):
        return g * g / (h + reg_lambda)

    return 0.5 * (
        score(g_left, h_left)
        + score(g_right, h_right)
        - score(g_left + g_right, h_left + h_right)
    ) - gamma


# -- training -----------------------------------------------------------------


@njit(cache=True)
def _scan_feature_kernel(sv, sg, sh, g_present, h_present, g_missing, h_missing,
                         lam, gam, parent_score):  # pragma: no cover - jit-compiled
    best_gain = 0.0
    best_thr = 0.0
    best_default_left = False
    found = False
    gl = 0.0
    hl = 0.0
    for i in range(sv.shape[0] - 1):
        gl += sg[i]
        hl += sh[i]
        if sv[i] < sv[i + 1]:
            gr = g_present - gl
            hr = h_present - hl
            glm = gl + g_missing
            hlm = hl + h_missing
            grm = gr + g_missing
            hrm = hr + h_missing
            gain_left = 0.5 * (glm * glm / (hlm + lam) + gr * gr / (hr + lam) - parent_score) - gam
            gain_right = 0.5 * (gl * gl / (hl + lam) + grm * grm / (hrm + lam) - parent_score) - gam
            if gain_left >= gain_right:
                gain = gain_left
                default_left = True
            else:
                gain = gain_right
                default_left = False
            if gain > best_gain:
                best_gain = gain
                best_thr = (sv[i] + sv[i + 1]) / 2.0
                best_default_left = default_left
                found = True
    return found, best_gain, best_thr, best_default_left


def _scan_feature_numpy(sv, sg, sh, g_present, h_present, g_missing, h_missing,
                        lam, gam, parent_score):
    """Vectorized twin of the jit kernel; identical arithmetic, op for op."""
    boundaries = np.nonzero(sv[:-1] < sv[1:])[0]
    if boundaries.size == 0:
        return False, 0.0, 0.0, False
    gl = np.cumsum(sg)[boundaries]
    hl = np.cumsum(sh)[boundaries]
    gr = g_present - gl
    hr = h_present - hl
    glm = gl + g_missing
    hlm = hl + h_missing
    grm = gr + g_missing
    hrm = hr + h_missing
    gain_left = 0.5 * (glm * glm / (hlm + lam) + gr * gr / (hr + lam) - parent_score) - gam
    gain_right = 0.5 * (gl * gl / (hl + lam) + grm * grm / (hrm + lam) - parent_score) - gam
    default_left = gain_left >= gain_right
    gains = np.where(default_left, gain_left, gain_right)
    b = int(np.argmax(gains))  # first max = lowest threshold among ties
    if not gains[b] > 0.0:
        return False, 0.0, 0.0, False
    thr = (sv[boundaries[b]] + sv[boundaries[b] + 1]) / 2.0
    return True, float(gains[b]), float(thr), bool(default_left[b])


_scan_feature = _scan_feature_kernel if _HAVE_NUMBA else _scan_feature_numpy


def _grow_tree(
    X: np.ndarray,
    g: np.ndarray,
    h: np.ndarray,
    rows: np.ndarray,
    cols: np.ndarray,
    params: TrainParams,
) -> TreeNode:
    lam, gam, lr = params.reg_lambda, params.gamma, params.learning_rate

    # compact the tree's sample once; one sort per feature, partitions preserve order
    Xt = np.ascontiguousarray(X[np.ix_(rows, cols)])
    gt = np.ascontiguousarray(g[rows])
    ht = np.ascontiguousarray(h[rows])
    n, d = Xt.shape
    order = np.argsort(Xt, axis=0, kind="stable")  # NaNs sort last
    n_present = n - np.isnan(Xt).sum(axis=0)
    root_sorted = [order[: n_present[j], j] for j in range(d)]
    member = np.empty(n, dtype=bool)  # scratch for partitioning

    def build(ids: np.ndarray, sorted_ids: list[np.ndarray], depth: int) -> TreeNode:
        g_total = float(gt[ids].sum())
        h_total = float(ht[ids].sum())
        leaf = TreeNode(weight=-g_total / (h_total + lam) * lr, cover=h_total)
        if depth >= params.max_depth or ids.size < 2:
            return leaf

        parent_score = g_total * g_total / (h_total + lam)
        best_gain = 0.0
        best = None  # (local feature, threshold, default_left)
        for j in range(d):
            s = sorted_ids[j]
            if s.size < 2:
                continue
            sv = Xt[s, j]
            sg = gt[s]
            sh = ht[s]
            g_present = float(sg.sum())
            h_present = float(sh.sum())
            found, gain, thr, default_left = _scan_feature(
                sv, sg, sh, g_present, h_present,
                g_total - g_present, h_total - h_present,
                lam, gam, parent_score,
            )
            if found and gain > best_gain:
                best_gain = gain
                best = (j, float(thr), bool(default_left))

        if best is None:
            return leaf
        j_local, threshold, default_left = best
        vals = Xt[ids, j_local]
        go_left = np.where(np.isnan(vals), default_left, vals < threshold)
        member[:] = False
        member[ids[go_left]] = True
        left_sorted = [s[member[s]] for s in sorted_ids]
        right_sorted = [s[~member[s]] for s in sorted_ids]
        return TreeNode(
            feature=int(cols[j_local]),
            threshold=threshold,
            default_left=default_left,
            cover=h_total,
            left=build(ids[go_left], left_sorted, depth + 1),
            right=build(ids[~go_left], right_sorted, depth + 1),
        )

    return build(np.arange(n), root_sorted, 0)


def train(
    dataset: Dataset, params: TrainParams, class_weights: ClassWeights | None = None
) -> ForestModel:
    """Fit the boosted forest: n_estimators rounds, one tree per class per round.

    Deterministic for a fixed (dataset order, params): all sampling comes
    from streams derived from params.seed, per round and per tree, so
    concurrent tree growth could never change the result.
    """
    n, d = dataset.X.shape
    if n == 0:
        raise TrainingError("dataset is empty")
    k_classes = len(dataset.class_names)
    if k_classes < 2:
        raise TrainingError("need at least 2 classes")
    if dataset.y.min() < 0 or dataset.y.max() >= k_classes:
        raise TrainingError("labels out of range for the declared classes")
    if np.isnan(dataset.X).all():
        raise TrainingError("every feature is missing for every instance")

    if class_weights is None:
        class_weights = ClassWeights.uniform(k_classes)
    if len(class_weights.values) != k_classes:
        raise TrainingError("class_weights length does not match class count")
    w = class_weights.as_array()[dataset.y]

    X = dataset.X
    onehot = np.zeros((n, k_classes))
    onehot[np.arange(n), dataset.y] = 1.0

    base_score = 0.0
    margins = np.full((n, k_classes), base_score, dtype=np.float64)
    trees: list[tuple[int, int, TreeNode]] = []
    n_sub = max(1, int(round(params.subsample * n)))
    n_cols = max(1, int(round(params.colsample_bytree * d)))

    for r in range(params.n_estimators):
        p = softmax(margins)
        g = w[:, None] * (p - onehot)
        h = np.maximum(w[:, None] * p * (1.0 - p), HESSIAN_FLOOR)

        if n_sub < n:
            rng = np.random.default_rng((params.seed, r, 0))
            rows = np.sort(rng.choice(n, size=n_sub, replace=False))
        else:
            rows = np.arange(n)

        round_trees = []
        for k in range(k_classes):
            if n_cols < d:
                rng = np.random.default_rng((params.seed, r, k + 1))
                cols = np.sort(rng.choice(d, size=n_cols, replace=False))
            else:
                cols = np.arange(d)
            root = _grow_tree(X, g[:, k], h[:, k], rows, cols, params)
            round_trees.append(root)
            trees.append((r, k, root))
        # margins update after the whole round, matching the round-barrier contract
        for k, root in enumerate(round_trees):
            margins[:, k] += _FlatTree(root).leaf_values(X)

    return ForestModel(
        trees=trees,
        base_score=base_score,
        classes=list(dataset.class_names),
        feature_names=list(dataset.feature_names),
        params=params,
    )


# -- prediction ---------------------------------------------------------------


def predict_margins(model: ForestModel, values: np.ndarray) -> np.ndarray:
    """Margins for a single feature vector (NaN = missing)."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 1 or values.shape[0] != len(model.feature_names):
        raise ValueError(f"expected {len(model.feature_names)} features, got {values.shape}")
    return model.predict_margins_batch(values[None, :])[0]


def predict_proba(model: ForestModel, values: np.ndarray) -> np.ndarray:
    return softmax(predict_margins(model, values))


def top_n(proba: np.ndarray, n: int) -> list[int]:
    """Indices of the n largest probabilities, descending; ties by class index."""
    proba = np.asarray(proba, dtype=np.float64)
    k = proba.shape[0]
    if not 1 <= n <= k:
        raise ValueError(f"n must be in [1, {k}], got {n}")
    order = np.lexsort((np.arange(k), -proba))
    return [int(i) for i in order[:n]]
