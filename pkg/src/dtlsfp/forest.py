"""Gini decision trees and a bootstrap random forest.

Split quality is compared in exact integer arithmetic, so tie-breaking
(lowest column, then lowest threshold) is well defined rather than at the
mercy of floating-point rounding.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from typing import Sequence, Union

import numpy as np

from .errors import DegenerateDataError

# ---------------------------------------------------------------------------- nodes


@dataclass(frozen=True)
class Leaf:
    counts: tuple[int, ...]

    @property
    def majority(self) -> int:
        # First maximum: ties go to the lowest class index.
        return max(range(len(self.counts)), key=lambda k: (self.counts[k], -k))


@dataclass(frozen=True)
class Split:
    column: int
    threshold: float
    left: TreeNode
    right: TreeNode


TreeNode = Union[Leaf, Split]


def node_to_json(node: TreeNode) -> dict:
    if isinstance(node, Leaf):
        return {"counts": list(node.counts)}
    return {"column": node.column, "threshold": node.threshold, "left": node_to_json(node.left), "right": node_to_json(node.right)}


def node_from_json(doc: dict) -> TreeNode:
    if "counts" in doc:
        return Leaf(tuple(int(c) for c in doc["counts"]))
    return Split(int(doc["column"]), float(doc["threshold"]), node_from_json(doc["left"]), node_from_json(doc["right"]))


def tree_depth(node: TreeNode) -> int:
    if isinstance(node, Leaf):
        return 0
    return 1 + max(tree_depth(node.left), tree_depth(node.right))


# ---------------------------------------------------------------------------- impurity


def gini(counts: Sequence[int] | np.ndarray) -> float:
    """1 - sum(p_i^2) over class proportions."""
    counts = np.asarray(counts, dtype=np.float64)
    if counts.ndim != 1 or (counts < 0).any():
        raise ValueError("counts must be a non-negative vector")
    total = counts.sum()
    if total == 0:
        raise ValueError("gini of an empty node is undefined")
    p = counts / total
    return float(1.0 - np.dot(p, p))


@dataclass(frozen=True)
class SplitChoice:
    column: int
    threshold: float
    decrease: float
    # Exact score sum_L c^2/nL + sum_R c^2/nR as the fraction num/den.
    num: int
    den: int


def _better(num: int, den: int, best: SplitChoice | None) -> bool:
    return best is None or num * best.den > best.num * den


def best_split(X: np.ndarray, y: np.ndarray, columns: Sequence[int], n_classes: int | None = None) -> SplitChoice | None:
    """Best Gini split of ``(X, y)`` over ``columns``.

    Thresholds are midpoints between consecutive distinct values; rows with
    ``value <= threshold`` go left. Ties go to the lowest column index, then
    the lowest threshold. ``None`` when no split lowers impurity.
    """
    X = np.asarray(X)
    y = np.asarray(y, dtype=np.int64)
    n = len(y)
    if n < 2:
        return None
    k = int(n_classes if n_classes is not None else y.max() + 1)
    total = np.bincount(y, minlength=k).astype(np.int64)
    parent_sq = int(total @ total)
    onehot = np.zeros((n, k), dtype=np.int64)
    onehot[np.arange(n), y] = 1
    n_left = np.arange(1, n, dtype=np.int64)
    n_right = n - n_left
    den_all = n_left * n_right

    best: SplitChoice | None = None
    for col in sorted(int(c) for c in columns):
        vals = X[:, col]
        order = np.argsort(vals, kind="stable")
        sv = vals[order]
        valid = sv[:-1] < sv[1:]
        if not valid.any():
            continue
        left = np.cumsum(onehot[order], axis=0)[:-1]
        right = total - left
        sl = (left * left).sum(axis=1)
        sr = (right * right).sum(axis=1)
        score = sl / n_left + sr / n_right
        score = np.where(valid, score, -np.inf)
        top = score.max()
        # Float narrows the field; exact integers decide among near-ties.
        cand = np.flatnonzero(score >= top - 1e-7 * max(1.0, abs(top)))
        col_best = None
        for i in cand:
            num = int(sl[i]) * int(n_right[i]) + int(sr[i]) * int(n_left[i])
            den = int(den_all[i])
            if col_best is None or num * col_best[2] > col_best[1] * den:
                col_best = (int(i), num, den)
        i, num, den = col_best
        # Must strictly lower impurity: num/den > parent_sq/n.
        if num * n <= parent_sq * den:
            continue
        if _better(num, den, best):
            lo, hi = float(sv[i]), float(sv[i + 1])
            thr = (lo + hi) / 2.0
            if not lo <= thr < hi:
                thr = lo
            decrease = (num / den - parent_sq / n) / n
            best = SplitChoice(col, thr, decrease, num, den)
    return best


# ---------------------------------------------------------------------------- forest


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 100
    max_features: int | None = None  # None: ceil(sqrt(column count))
    min_samples_split: int = 2
    max_depth: int | None = None

    def resolved_max_features(self, n_columns: int) -> int:
        if self.max_features is None:
            return max(1, math.ceil(math.sqrt(n_columns)))
        return max(1, min(int(self.max_features), n_columns))


def tree_rng(seed: int, tree_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(tree_index)]))


def bootstrap_indices(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.integers(0, n, size=n)


class _TreeBuilder:
    def __init__(self, X: np.ndarray, y: np.ndarray, n_classes: int, params: ForestParams, rng: np.random.Generator):
        self.X = X
        self.y = y
        self.k = n_classes
        self.params = params
        self.rng = rng
        self.max_features = params.resolved_max_features(X.shape[1])
        self.importance = np.zeros(X.shape[1], dtype=np.float64)
        self.n_root = len(y)

    def build(self, idx: np.ndarray, depth: int = 0) -> TreeNode:
        y = self.y[idx]
        counts = np.bincount(y, minlength=self.k)
        leaf = Leaf(tuple(int(c) for c in counts))
        p = self.params
        if (
            np.count_nonzero(counts) <= 1
            or len(idx) < p.min_samples_split
            or (p.max_depth is not None and depth >= p.max_depth)
        ):
            return leaf
        Xn = self.X[idx]
        varying = Xn.max(axis=0) > Xn.min(axis=0)
        # Draw columns in random order, keeping the first max_features that can split here.
        perm = self.rng.permutation(Xn.shape[1])
        candidates = [int(c) for c in perm if varying[c]][: self.max_features]
        if not candidates:
            return leaf
        choice = best_split(Xn, y, candidates, self.k)
        if choice is None:
            return leaf
        self.importance[choice.column] += len(idx) / self.n_root * choice.decrease
        go_left = Xn[:, choice.column] <= choice.threshold
        return Split(
            choice.column,
            choice.threshold,
            self.build(idx[go_left], depth + 1),
            self.build(idx[~go_left], depth + 1),
        )


def build_tree(
    X: np.ndarray, y: np.ndarray, n_classes: int, params: ForestParams, seed: int, tree_index: int
) -> tuple[TreeNode, np.ndarray]:
    """One bootstrap tree and its unnormalized per-column impurity decrease."""
    rng = tree_rng(seed, tree_index)
    sample = bootstrap_indices(rng, len(y))
    builder = _TreeBuilder(X, y, n_classes, params, rng)
    return builder.build(sample), builder.importance


_WORKER: dict = {}


def _init_worker(X, y, n_classes, params, seed) -> None:
    _WORKER.update(X=X, y=y, n_classes=n_classes, params=params, seed=seed)


def _worker_tree(tree_index: int):
    w = _WORKER
    return build_tree(w["X"], w["y"], w["n_classes"], w["params"], w["seed"], tree_index)


@dataclass
class RandomForestModel:
    trees: list[TreeNode]
    params: ForestParams
    seed: int
    n_classes: int
    n_features: int
    importances: np.ndarray
    classes: list[str] | None = None
    schema: dict | None = None

    def _check_row(self, row: np.ndarray) -> np.ndarray:
        row = np.asarray(row, dtype=np.float64)
        if row.shape[-1] != self.n_features:
            raise ValueError(f"row has {row.shape[-1]} values, model expects {self.n_features}")
        return row

    def votes(self, X: np.ndarray) -> np.ndarray:
        """Per-row tree vote counts, shape (rows, classes)."""
        X = self._check_row(np.atleast_2d(X))
        votes = np.zeros((len(X), self.n_classes), dtype=np.int64)
        rows = np.arange(len(X))
        for tree in self.trees:
            _route(tree, X, rows, votes)
        return votes

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.argmax(self.votes(X), axis=1)

    def predict_one(self, row: np.ndarray) -> tuple[int, np.ndarray]:
        v = self.votes(self._check_row(row)[None, :])[0]
        return int(np.argmax(v)), v / len(self.trees)

    def to_json(self) -> dict:
        return {
            "format": "dtlsfp.random_forest/1",
            "params": asdict(self.params),
            "seed": self.seed,
            "n_classes": self.n_classes,
            "n_features": self.n_features,
            "classes": self.classes,
            "schema": self.schema,
            "importances": [float(v) for v in self.importances],
            "trees": [node_to_json(t) for t in self.trees],
        }

    @classmethod
    def from_json(cls, doc: dict) -> RandomForestModel:
        return cls(
            trees=[node_from_json(t) for t in doc["trees"]],
            params=ForestParams(**doc["params"]),
            seed=int(doc["seed"]),
            n_classes=int(doc["n_classes"]),
            n_features=int(doc["n_features"]),
            importances=np.array(doc["importances"], dtype=np.float64),
            classes=doc.get("classes"),
            schema=doc.get("schema"),
        )

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path: str | os.PathLike) -> RandomForestModel:
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def _route(node: TreeNode, X: np.ndarray, rows: np.ndarray, votes: np.ndarray) -> None:
    if len(rows) == 0:
        return
    if isinstance(node, Leaf):
        votes[rows, node.majority] += 1
        return
    left = X[rows, node.column] <= node.threshold
    _route(node.left, X, rows[left], votes)
    _route(node.right, X, rows[~left], votes)


def fit(
    X: np.ndarray,
    y: np.ndarray,
    params: ForestParams | None = None,
    seed: int = 42,
    n_classes: int | None = None,
    jobs: int = 1,
) -> RandomForestModel:
    """Train a forest. The result depends only on (X, y, params, seed), never on ``jobs``."""
    params = params or ForestParams()
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or len(X) == 0 or len(X) != len(y):
        raise ValueError("X must be a non-empty 2-D array with one label per row")
    k = int(n_classes if n_classes is not None else y.max() + 1)
    if len(np.unique(y)) < 2:
        raise DegenerateDataError("need at least two classes to fit a classifier")
    if params.n_trees < 1:
        raise ValueError("n_trees must be >= 1")

    if jobs > 1 and params.n_trees > 1:
        with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker, initargs=(X, y, k, params, seed)) as pool:
            built = list(pool.map(_worker_tree, range(params.n_trees), chunksize=max(1, params.n_trees // (4 * jobs))))
    else:
        built = [build_tree(X, y, k, params, seed, t) for t in range(params.n_trees)]

    total = np.zeros(X.shape[1], dtype=np.float64)
    for _, imp in built:
        total += imp
    s = total.sum()
    importances = total / s if s > 0 else total
    return RandomForestModel([t for t, _ in built], params, int(seed), k, X.shape[1], importances)


def predict(model: RandomForestModel, row: np.ndarray) -> tuple[int, np.ndarray]:
    """Majority vote over trees; returns (class index, per-class vote fractions)."""
    return model.predict_one(row)
