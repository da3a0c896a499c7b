"""Random-forest utterance classifier over representation vectors.

CART trees with Gini-impurity splits on axis-aligned thresholds. Candidate
thresholds are midpoints of consecutive sorted distinct feature values;
samples with x <= threshold go left. Split ranking is exact: a float scan
shortlists near-optimal candidates, then integer-count rationals decide
order, so ties break reproducibly by (impurity, lowest feature index,
lowest threshold).
"""

import csv
import json
import warnings
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

FOREST_FORMAT = "emorefinery-forest"
FOREST_VERSION = 1


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    max_features: int = 0  # 0 means floor(sqrt(d))
    max_depth: int = -1  # -1 means unlimited
    min_samples_split: int = 2
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ConfigError("n_trees must be >= 1")
        if self.max_features < 0:
            raise ConfigError("max_features must be positive, or 0 for floor(sqrt(d))")
        if self.min_samples_split < 2:
            raise ConfigError("min_samples_split must be >= 2")
        if self.max_depth < -1:
            raise ConfigError("max_depth must be >= 0, or -1 for unlimited")

    def resolved_max_features(self, d: int) -> int:
        mf = int(np.sqrt(d)) if self.max_features == 0 else self.max_features
        if not 1 <= mf <= d:
            raise ConfigError(f"max_features {mf} outside 1..{d}")
        return mf


@dataclass
class TreeNode:
    """Internal node (feature, threshold, children) or leaf (histogram)."""

    feature: int = -1
    threshold: float = 0.0
    left: "TreeNode" = None
    right: "TreeNode" = None
    histogram: np.ndarray = None

    @property
    def is_leaf(self) -> bool:
        return self.histogram is not None

    def to_dict(self) -> dict:
        if self.is_leaf:
            return {"histogram": [int(v) for v in self.histogram]}
        return {"feature": self.feature, "threshold": self.threshold,
                "left": self.left.to_dict(), "right": self.right.to_dict()}

    @staticmethod
    def from_dict(d: dict) -> "TreeNode":
        if "histogram" in d:
            return TreeNode(histogram=np.asarray(d["histogram"], dtype=np.int64))
        return TreeNode(feature=int(d["feature"]), threshold=float(d["threshold"]),
                        left=TreeNode.from_dict(d["left"]), right=TreeNode.from_dict(d["right"]))


@dataclass(frozen=True)
class Forest:
    trees: tuple
    class_names: tuple
    n_features: int
    seed: int


def _as_matrix(X) -> np.ndarray:
    rows = [np.asarray(getattr(x, "features", x), dtype=np.float64) for x in X]
    return np.stack(rows)


def _purity_sum(counts) -> Fraction:
    """Sum of squared class counts over the sample count, exactly."""
    n = int(counts.sum())
    return Fraction(int(np.sum(counts.astype(object) ** 2)), n)


def _best_split(x, y, k, features):
    """Exact Gini-optimal (feature, threshold) or None if nothing improves.

    Minimizing weighted child impurity equals maximizing
    T = sum(left_counts^2)/n_left + sum(right_counts^2)/n_right,
    a rational in the integer counts, so near-ties found by the float scan
    are settled exactly.
    """
    n = y.size
    parent_t = _purity_sum(np.bincount(y, minlength=k))
    best = None  # (T: Fraction, feature, threshold)
    for f in sorted(int(v) for v in features):
        order = np.argsort(x[:, f], kind="stable")
        xs = x[order, f]
        cuts = np.flatnonzero(xs[:-1] != xs[1:])
        if cuts.size == 0:
            continue
        onehot = np.zeros((n, k), dtype=np.int64)
        onehot[np.arange(n), y[order]] = 1
        left = np.cumsum(onehot, axis=0)[cuts]
        right = np.bincount(y, minlength=k) - left
        n_left = (cuts + 1).astype(np.int64)
        n_right = n - n_left
        t_float = (left ** 2).sum(axis=1) / n_left + (right ** 2).sum(axis=1) / n_right
        shortlist = np.flatnonzero(t_float >= t_float.max() - 1e-9 * max(1.0, t_float.max()))
        for i in shortlist:
            t_exact = (Fraction(int((left[i] ** 2).sum()), int(n_left[i]))
                       + Fraction(int((right[i] ** 2).sum()), int(n_right[i])))
            threshold = (xs[cuts[i]] + xs[cuts[i] + 1]) / 2
            if (best is None or t_exact > best[0]
                    or (t_exact == best[0] and (f, threshold) < (best[1], best[2]))):
                best = (t_exact, f, threshold)
    if best is None or best[0] <= parent_t:
        return None
    return best[1], best[2]


def _grow(x, y, k, cfg: ForestConfig, rng, depth: int) -> TreeNode:
    counts = np.bincount(y, minlength=k)
    n, d = x.shape
    if (np.count_nonzero(counts) <= 1 or n < cfg.min_samples_split
            or depth == cfg.max_depth):
        return TreeNode(histogram=counts)
    mf = cfg.resolved_max_features(d)
    features = np.arange(d) if mf == d else rng.choice(d, size=mf, replace=False)
    split = _best_split(x, y, k, features)
    if split is None:
        return TreeNode(histogram=counts)
    feature, threshold = split
    mask = x[:, feature] <= threshold
    return TreeNode(feature=feature, threshold=threshold,
                    left=_grow(x[mask], y[mask], k, cfg, rng, depth + 1),
                    right=_grow(x[~mask], y[~mask], k, cfg, rng, depth + 1))


def train_forest(X, y, cfg: ForestConfig, class_names) -> Forest:
    """Grow n_trees CART trees, each on a bootstrap resample when enabled."""
    names = tuple(class_names)
    if len(X) == 0:
        raise DataError("cannot train a forest on no samples")
    if len(X) != len(y):
        raise DataError("features and labels differ in length")
    x = _as_matrix(X)
    labels = np.asarray(y, dtype=np.int64)
    if np.any(labels < 0) or np.any(labels >= len(names)):
        raise DataError(f"labels must lie in 0..{len(names) - 1}")
    if len(set(labels.tolist())) == 1:
        warnings.warn(f"single-class training set; forest degenerates to always "
                      f"predicting {names[labels[0]]!r}", RuntimeWarning)
    cfg.resolved_max_features(x.shape[1])

    trees = []
    for t in range(cfg.n_trees):
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, t]))
        if cfg.bootstrap:
            idx = rng.integers(0, x.shape[0], size=x.shape[0])
            trees.append(_grow(x[idx], labels[idx], len(names), cfg, rng, 0))
        else:
            trees.append(_grow(x, labels, len(names), cfg, rng, 0))
    return Forest(trees=tuple(trees), class_names=names, n_features=x.shape[1], seed=cfg.seed)


def _tree_vote(node: TreeNode, row: np.ndarray) -> int:
    while not node.is_leaf:
        node = node.left if row[node.feature] <= node.threshold else node.right
    return int(np.argmax(node.histogram))


def predict_forest(forest: Forest, x) -> int:
    """Plurality vote over tree votes; ties break to the lowest class index."""
    row = np.asarray(getattr(x, "features", x), dtype=np.float64)
    if row.shape != (forest.n_features,):
        raise DataError(f"feature vector has shape {row.shape}, "
                        f"expected ({forest.n_features},)")
    votes = np.bincount([_tree_vote(t, row) for t in forest.trees],
                        minlength=len(forest.class_names))
    return int(np.argmax(votes))


def predict_forest_batch(forest: Forest, X) -> np.ndarray:
    return np.array([predict_forest(forest, x) for x in X], dtype=np.int64)


def save_forest(forest: Forest, path) -> None:
    doc = {"format": FOREST_FORMAT, "version": FOREST_VERSION,
           "class_names": list(forest.class_names), "n_features": forest.n_features,
           "seed": forest.seed, "trees": [t.to_dict() for t in forest.trees]}
    Path(path).write_text(json.dumps(doc) + "\n")


def load_forest(path) -> Forest:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != FOREST_FORMAT:
        raise DataError(f"{path} is not a forest checkpoint")
    if doc.get("version") != FOREST_VERSION:
        raise DataError(f"unsupported forest checkpoint version {doc.get('version')!r}")
    return Forest(trees=tuple(TreeNode.from_dict(t) for t in doc["trees"]),
                  class_names=tuple(doc["class_names"]),
                  n_features=int(doc["n_features"]), seed=int(doc["seed"]))


def write_predictions_csv(path, records) -> None:
    """Rows of (utterance_id, true class name, predicted class name)."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["utterance_id", "true", "pred"])
        for uid, true_name, pred_name in records:
            writer.writerow([uid, true_name, pred_name])


def read_predictions_csv(path) -> list:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["utterance_id", "true", "pred"]:
        raise DataError(f"{path} is not a predictions CSV")
    return [tuple(row) for row in rows[1:]]
