"""Quality surrogate: gradient-boosted regression trees with logistic loss.

Scores candidate process-parameter sets by predicted probability of a good
(non-defective) outcome and selects the best one. Exact axis-aligned splits
on raw features; trees are scale-invariant so no feature scaling is applied.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .diffusion.types import EnvCondition, ProcessParams

N_FEATURES = 14  # 4 environment readings + 10 process parameters

FORMAT_VERSION = 1


class SurrogateError(Exception):
    pass


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


@dataclass
class TreeNode:
    feature: int = -1  # -1 marks a leaf
    threshold: float = 0.0
    left: "TreeNode" = None
    right: "TreeNode" = None
    value: float = 0.0

    @property
    def is_leaf(self) -> bool:
        return self.feature < 0


def _leaf_value(residual: np.ndarray, prob: np.ndarray) -> float:
    """Newton step for logistic loss: sum(residual) / sum(p(1-p))."""
    hess = np.sum(prob * (1.0 - prob))
    if hess < 1e-12:
        return 0.0
    return float(np.sum(residual) / hess)


def _best_split(x: np.ndarray, residual: np.ndarray):
    """Exact squared-error split search over all features and midpoints."""
    n, d = x.shape
    best = None  # (gain, feature, threshold)
    total_sum = residual.sum()
    base = total_sum ** 2 / n
    for j in range(d):
        order = np.argsort(x[:, j], kind="stable")
        xs = x[order, j]
        rs = residual[order]
        csum = np.cumsum(rs)
        for i in range(n - 1):
            if xs[i] == xs[i + 1]:
                continue
            left_sum = csum[i]
            gain = left_sum ** 2 / (i + 1) + \
                (total_sum - left_sum) ** 2 / (n - i - 1) - base
            if best is None or gain > best[0] + 1e-15:
                best = (gain, j, 0.5 * (xs[i] + xs[i + 1]))
    return best


def _grow_tree(x, residual, prob, depth, max_depth, min_samples=2) -> TreeNode:
    if depth >= max_depth or len(x) < min_samples:
        return TreeNode(value=_leaf_value(residual, prob))
    split = _best_split(x, residual)
    if split is None or split[0] <= 1e-12:
        return TreeNode(value=_leaf_value(residual, prob))
    _, feature, threshold = split
    mask = x[:, feature] <= threshold
    return TreeNode(
        feature=feature, threshold=threshold,
        left=_grow_tree(x[mask], residual[mask], prob[mask],
                        depth + 1, max_depth, min_samples),
        right=_grow_tree(x[~mask], residual[~mask], prob[~mask],
                         depth + 1, max_depth, min_samples),
    )


def _tree_predict(node: TreeNode, x: np.ndarray) -> np.ndarray:
    if node.is_leaf:
        return np.full(len(x), node.value)
    mask = x[:, node.feature] <= node.threshold
    out = np.empty(len(x))
    out[mask] = _tree_predict(node.left, x[mask])
    out[~mask] = _tree_predict(node.right, x[~mask])
    return out


@dataclass
class Hyper:
    trees: int = 100
    depth: int = 3
    learning_rate: float = 0.1
    seed: int = 0


class GBTModel:
    def __init__(self, trees: list[TreeNode], learning_rate: float,
                 base_score: float):
        self.trees = trees
        self.learning_rate = learning_rate
        self.base_score = base_score

    def raw_score(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        if x.shape[1] != N_FEATURES:
            raise SurrogateError(
                f"expected {N_FEATURES} features, got {x.shape[1]}")
        score = np.full(len(x), self.base_score)
        for tree in self.trees:
            score += self.learning_rate * _tree_predict(tree, x)
        return score

    # -- persistence: versioned structured text -----------------------------

    def save(self, path: str) -> None:
        def encode(node: TreeNode):
            if node.is_leaf:
                return {"value": node.value}
            return {"feature": node.feature, "threshold": node.threshold,
                    "left": encode(node.left), "right": encode(node.right)}

        with open(path, "w") as fh:
            json.dump({
                "version": FORMAT_VERSION,
                "learning_rate": self.learning_rate,
                "base_score": self.base_score,
                "trees": [encode(t) for t in self.trees],
            }, fh)

    @classmethod
    def load(cls, path: str) -> "GBTModel":
        with open(path) as fh:
            raw = json.load(fh)
        if raw.get("version") != FORMAT_VERSION:
            raise SurrogateError(f"unsupported model version: {raw.get('version')}")

        def decode(obj) -> TreeNode:
            if "value" in obj:
                return TreeNode(value=obj["value"])
            return TreeNode(feature=obj["feature"], threshold=obj["threshold"],
                            left=decode(obj["left"]), right=decode(obj["right"]))

        return cls([decode(t) for t in raw["trees"]], raw["learning_rate"],
                   raw["base_score"])


def fit(features: np.ndarray, labels: np.ndarray,
        hyper: Hyper = Hyper()) -> GBTModel:
    """Boosted trees under logistic loss; labels are 1 = good, 0 = defective.

    Deterministic: exact splits over the full dataset, no subsampling, so
    the seed only fixes tie behavior that numpy's stable sort already pins.
    """
    features = np.asarray(features, dtype=float)
    labels = np.asarray(labels, dtype=float)
    if features.shape[1] != N_FEATURES:
        raise SurrogateError(f"expected {N_FEATURES} features")
    if len(np.unique(labels)) < 2:
        raise SurrogateError("both classes must be present in the training data")

    p0 = labels.mean()
    base_score = float(np.log(p0 / (1.0 - p0)))
    score = np.full(len(labels), base_score)
    trees: list[TreeNode] = []
    for _ in range(hyper.trees):
        prob = _sigmoid(score)
        residual = labels - prob
        tree = _grow_tree(features, residual, prob, 0, hyper.depth)
        trees.append(tree)
        score += hyper.learning_rate * _tree_predict(tree, features)
    return GBTModel(trees, hyper.learning_rate, base_score)


def fit_records(records, hyper: Hyper = Hyper()) -> GBTModel:
    """records: list of (EnvCondition, ProcessParams, label) with label in
    {"good", "defective"}."""
    feats, labels = [], []
    for env, pp, label in records:
        feats.append(np.concatenate([env.env_vector(), pp.as_vector()]))
        labels.append(1.0 if label == "good" else 0.0)
    return fit(np.stack(feats), np.array(labels), hyper)


def predict_good_probability(model: GBTModel, features: np.ndarray) -> float:
    return float(_sigmoid(model.raw_score(features))[0])


def rank_candidates(model: GBTModel, condition: EnvCondition,
                    candidates: list[ProcessParams]):
    """argmax of good probability; ties broken by lowest candidate index."""
    if not candidates:
        raise SurrogateError("no candidates to rank")
    env = condition.env_vector()
    feats = np.stack([np.concatenate([env, c.as_vector()]) for c in candidates])
    scores = _sigmoid(model.raw_score(feats))
    best_idx = int(np.argmax(scores))  # argmax returns the first maximum
    return candidates[best_idx], [float(s) for s in scores]
