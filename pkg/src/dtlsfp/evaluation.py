"""Cross-validation, classification metrics, and the identifier search."""

from __future__ import annotations

import csv
import os
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import StratificationError
from .features import FeatureMatrix
from .forest import ForestParams, fit
from .labels import APP_SHORT, App

# ---------------------------------------------------------------------------- folds


def stratified_kfold(labels: Sequence[int] | np.ndarray, k: int, seed: int) -> list[np.ndarray]:
    """Split indices into ``k`` disjoint test folds, stratified by label.

    Each class is shuffled, then dealt round-robin; the starting fold carries
    over between classes so fold sizes stay within one of each other too.
    """
    if k < 2:
        raise StratificationError("k must be at least 2")
    labels = np.asarray([getattr(l, "index", l) for l in labels])
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5F01D]))
    folds: list[list[int]] = [[] for _ in range(k)]
    offset = 0
    for cls in np.unique(labels):
        members = np.flatnonzero(labels == cls)
        if len(members) < k:
            raise StratificationError(f"class {_class_name(cls)} has {len(members)} members, fewer than k={k}")
        members = rng.permutation(members)
        for j, idx in enumerate(members):
            folds[(offset + j) % k].append(int(idx))
        offset = (offset + len(members)) % k
    return [np.array(sorted(f), dtype=np.int64) for f in folds]


def _class_name(cls) -> str:
    try:
        return list(App)[int(cls)].value
    except (IndexError, ValueError):
        return str(cls)


# ---------------------------------------------------------------------------- metrics


def confusion_matrix(y_true: Sequence[int], y_pred: Sequence[int], n_classes: int) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true), np.asarray(y_pred)), 1)
    return cm


def _ratio(num: int, den: int) -> Fraction:
    return Fraction(num, den) if den else Fraction(0)


def _f1(p: Fraction, r: Fraction) -> Fraction:
    return 2 * p * r / (p + r) if p + r else Fraction(0)


def metrics_from_confusion(cm: np.ndarray, class_names: Sequence[str]) -> dict:
    """Accuracy, micro/weighted F1 and per-class scores, computed with exact rationals."""
    cm = np.asarray(cm)
    total = int(cm.sum())
    correct = int(np.trace(cm))
    tp_sum = correct
    fp_sum = int(cm.sum(axis=0).sum()) - correct
    fn_sum = int(cm.sum(axis=1).sum()) - correct
    micro_p = _ratio(tp_sum, tp_sum + fp_sum)
    micro_r = _ratio(tp_sum, tp_sum + fn_sum)
    per_class = {}
    weighted = Fraction(0)
    for i, name in enumerate(class_names):
        tp = int(cm[i, i])
        support = int(cm[i].sum())
        predicted = int(cm[:, i].sum())
        p = _ratio(tp, predicted)
        r = _ratio(tp, support)
        f = _f1(p, r)
        weighted += f * support
        per_class[name] = {"precision": float(p), "recall": float(r), "f1": float(f), "support": support}
    return {
        "accuracy": float(_ratio(correct, total)),
        "micro_f1": float(_f1(micro_p, micro_r)),
        "weighted_f1": float(weighted / total) if total else 0.0,
        "per_class": per_class,
    }


# ---------------------------------------------------------------------------- cross-validation


@dataclass
class EvaluationReport:
    k: int
    seed: int
    params: dict
    classes: list[str]
    columns: list[str]
    fold_accuracy: list[float]
    fold_sizes: list[int]
    confusion: list[list[int]]
    accuracy: float
    mean_fold_accuracy: float
    micro_f1: float
    weighted_f1: float
    per_class: dict
    importances: list[float]
    fold_columns: list[int] = field(default_factory=list)

    def to_json(self) -> dict:
        return asdict(self)

    def confusion_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["truth\\predicted"] + self.classes)
            for name, row in zip(self.classes, self.confusion):
                w.writerow([name] + row)

    def render(self) -> str:
        lines = [
            f"{self.k}-fold CV  accuracy={self.accuracy:.4f}  mean fold accuracy={self.mean_fold_accuracy:.4f}  "
            f"micro-F1={self.micro_f1:.4f}  weighted-F1={self.weighted_f1:.4f}",
            f"{'class':<10}{'precision':>10}{'recall':>10}{'f1':>10}{'support':>9}",
        ]
        for name, m in self.per_class.items():
            lines.append(f"{name:<10}{m['precision']:>10.4f}{m['recall']:>10.4f}{m['f1']:>10.4f}{m['support']:>9}")
        lines.append("confusion (rows=truth, cols=predicted):")
        lines.append(" " * 10 + "".join(APP_SHORT.get(App.parse(c), c).rjust(7) for c in self.classes))
        for name, row in zip(self.classes, self.confusion):
            lines.append(f"{name:<10}" + "".join(str(v).rjust(7) for v in row))
        return "\n".join(lines)


def fold_seed(seed: int, fold: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(fold)]).generate_state(1)[0])


def cross_validate(
    matrix: FeatureMatrix,
    k: int = 5,
    params: ForestParams | None = None,
    seed: int = 42,
    jobs: int = 1,
    labels: Sequence[App] | None = None,
) -> EvaluationReport:
    """Stratified k-fold evaluation of the random forest.

    Each fold rebuilds the one-hot vocabulary from its training rows only and
    encodes its test rows under that reduced schema. ``labels`` overrides the
    matrix labels (used for label-permutation checks).
    """
    params = params or ForestParams()
    classes = list(App)
    y = np.array([a.index for a in (labels if labels is not None else matrix.labels)], dtype=np.int64)
    X = matrix.X
    folds = stratified_kfold(y, k, seed)
    n_cols = X.shape[1]
    y_pred = np.full(len(y), -1, dtype=np.int64)
    importances = np.zeros(n_cols)
    fold_acc, fold_cols = [], []
    for f, test in enumerate(folds):
        train = np.setdiff1d(np.arange(len(y)), test, assume_unique=True)
        _, keep = matrix.schema.observed_subset(X[train])
        model = fit(X[np.ix_(train, keep)], y[train], params, fold_seed(seed, f), n_classes=len(classes), jobs=jobs)
        pred = model.predict(X[np.ix_(test, keep)])
        y_pred[test] = pred
        fold_acc.append(float(Fraction(int((pred == y[test]).sum()), len(test))))
        fold_cols.append(int(keep.sum()))
        importances[np.flatnonzero(keep)] += model.importances
    importances /= k
    names = [c.value for c in classes]
    cm = confusion_matrix(y, y_pred, len(classes))
    m = metrics_from_confusion(cm, names)
    return EvaluationReport(
        k=k,
        seed=seed,
        params=asdict(params),
        classes=names,
        columns=matrix.schema.names,
        fold_accuracy=fold_acc,
        fold_sizes=[len(t) for t in folds],
        confusion=cm.tolist(),
        accuracy=m["accuracy"],
        mean_fold_accuracy=float(np.mean(fold_acc)),
        micro_f1=m["micro_f1"],
        weighted_f1=m["weighted_f1"],
        per_class=m["per_class"],
        importances=[float(v) for v in importances],
        fold_columns=fold_cols,
    )


def importance_ranking(report: EvaluationReport, top_n: int | None = None) -> list[tuple[str, float]]:
    """Columns by descending mean importance across folds; ties keep column order."""
    order = sorted(range(len(report.importances)), key=lambda i: (-report.importances[i], i))
    if top_n is not None:
        order = order[:top_n]
    return [(report.columns[i], report.importances[i]) for i in order]


# ---------------------------------------------------------------------------- identifiers


@dataclass(frozen=True)
class Condition:
    """A named equality test on one schema column, e.g. server message_seq == 1."""

    name: str
    column: str
    value: float


SERVER_SEQ_1 = Condition("Server Message Sequence: 1", "server.message_seq", 1)
DEFAULT_CONDITIONS = (SERVER_SEQ_1,)


@dataclass
class IdentifierReport:
    classes: list[str]
    presence: dict[str, list[float]]
    identifiers: list[dict]
    tolerance: float = 0.0

    @property
    def flagged(self) -> list[str]:
        return [i["feature"] for i in self.identifiers]

    def to_json(self) -> dict:
        return asdict(self)

    def render(self, only: Sequence[str] | None = None) -> str:
        names = list(only) if only is not None else list(self.presence)
        width = max([len(n) for n in names] + [7]) + 2
        lines = ["Feature".ljust(width) + "".join(APP_SHORT[App.parse(c)].rjust(6) for c in self.classes)]
        for n in names:
            lines.append(n.ljust(width) + "".join(f"{v:6.0f}" for v in self.presence[n]))
        lines.append("identifiers: " + (", ".join(f"{i['feature']} ({i['class']}, {i['form']})" for i in self.identifiers) or "none"))
        return "\n".join(lines)


def identifier_search(
    matrix: FeatureMatrix,
    conditions: Sequence[Condition] = DEFAULT_CONDITIONS,
    tolerance: float = 0.0,
    columns: Sequence[str] | None = None,
) -> IdentifierReport:
    """Per-class presence percentages and class-unique identifiers.

    Columns examined are every binary schema column (or ``columns``) plus the
    named ``conditions``. A feature is flagged when one class sits at 100%
    and all others at 0%, or one class at 0% and all others at 100%;
    ``tolerance`` (percentage points) relaxes both ends.
    """
    y = matrix.y
    present = set(y.tolist())
    classes = list(App)
    missing = [a.value for a in classes if a.index not in present]
    if missing:
        raise ValueError(f"identifier search needs every class; missing {missing}")
    names = matrix.schema.names
    if columns is None:
        columns = [n for n, b in zip(names, matrix.schema.binary_mask()) if b]
    tests: list[tuple[str, np.ndarray]] = [(c, matrix.X[:, names.index(c)] == 1) for c in columns]
    for cond in conditions:
        if cond.column in names:
            tests.append((cond.name, matrix.X[:, names.index(cond.column)] == cond.value))

    presence: dict[str, list[float]] = {}
    identifiers = []
    for name, hit in tests:
        pct = [float(100 * Fraction(int(hit[y == a.index].sum()), int((y == a.index).sum()))) for a in classes]
        presence[name] = pct
        full = [p >= 100 - tolerance for p in pct]
        empty = [p <= tolerance for p in pct]
        for i, a in enumerate(classes):
            others = [j for j in range(len(classes)) if j != i]
            if full[i] and all(empty[j] for j in others):
                identifiers.append({"feature": name, "class": a.value, "form": "present-only"})
            elif empty[i] and all(full[j] for j in others):
                identifiers.append({"feature": name, "class": a.value, "form": "absent-only"})
    return IdentifierReport([a.value for a in classes], presence, identifiers, tolerance)
