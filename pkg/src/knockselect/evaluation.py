"""Post-hoc downstream validation of a feature mask.

Nothing in here is reachable from the selection loop. ``DOWNSTREAM`` counts
model fits so a run can prove it made none while selecting.
"""
from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np
from sklearn.linear_model import LinearRegression, LogisticRegression
from sklearn.neighbors import KNeighborsClassifier, KNeighborsRegressor
from sklearn.tree import DecisionTreeClassifier, DecisionTreeRegressor

from .data import Dataset, TaskKind
from .seeding import stream


class ModelKind(str, enum.Enum):
    LOGISTIC = "logistic"
    KNN = "knn"
    TREE = "tree"
    LINEAR = "linear"
    KNN_REG = "knn-reg"
    TREE_REG = "tree-reg"


CLASSIFIERS = (ModelKind.LOGISTIC, ModelKind.KNN, ModelKind.TREE)
REGRESSORS = (ModelKind.LINEAR, ModelKind.KNN_REG, ModelKind.TREE_REG)


@dataclass(frozen=True)
class ModelSpec:
    kind: ModelKind
    k: int = 5
    depth: int = 6

    @property
    def task(self) -> TaskKind:
        return TaskKind.CLASSIFICATION if self.kind in CLASSIFIERS else TaskKind.REGRESSION

    @property
    def name(self) -> str:
        if self.kind in (ModelKind.KNN, ModelKind.KNN_REG):
            return f"{self.kind.value}(k={self.k})"
        if self.kind in (ModelKind.TREE, ModelKind.TREE_REG):
            return f"{self.kind.value}(depth={self.depth})"
        return self.kind.value


def default_models(task: TaskKind) -> List[ModelSpec]:
    kinds = CLASSIFIERS if TaskKind.parse(task) is TaskKind.CLASSIFICATION else REGRESSORS
    return [ModelSpec(k) for k in kinds]


def make_estimator(spec: ModelSpec, seed: int = 0):
    if spec.kind is ModelKind.LOGISTIC:
        return LogisticRegression(max_iter=1000)
    if spec.kind is ModelKind.KNN:
        return KNeighborsClassifier(n_neighbors=spec.k)
    if spec.kind is ModelKind.TREE:
        return DecisionTreeClassifier(max_depth=spec.depth, random_state=seed)
    if spec.kind is ModelKind.LINEAR:
        return LinearRegression()
    if spec.kind is ModelKind.KNN_REG:
        return KNeighborsRegressor(n_neighbors=spec.k)
    return DecisionTreeRegressor(max_depth=spec.depth, random_state=seed)


class InvocationCounter:
    def __init__(self):
        self.count = 0

    def bump(self) -> None:
        self.count += 1


DOWNSTREAM = InvocationCounter()


@dataclass
class EvalMetrics:
    task: TaskKind
    model_name: str
    n_train: int
    n_test: int
    acc: Optional[float] = None
    l2: Optional[float] = None
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0
    degenerate: bool = False

    @property
    def value(self) -> float:
        return self.acc if self.task is TaskKind.CLASSIFICATION else self.l2

    def to_dict(self) -> dict:
        out = asdict(self)
        out["task"] = self.task.value
        return out


def confusion_counts(y_true, y_pred):
    """(TP, TN, FP, FN). Binary labels use class 1 as positive.

    With more than two classes a hit counts as TP and a miss as FN, so
    the four counts still sum to the test size.
    """
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if set(np.unique(y_true)) | set(np.unique(y_pred)) <= {0, 1}:
        tp = int(np.sum((y_true == 1) & (y_pred == 1)))
        tn = int(np.sum((y_true == 0) & (y_pred == 0)))
        fp = int(np.sum((y_true == 0) & (y_pred == 1)))
        fn = int(np.sum((y_true == 1) & (y_pred == 0)))
        return tp, tn, fp, fn
    hits = int(np.sum(y_true == y_pred))
    return hits, 0, 0, len(y_true) - hits


def accuracy(tp: int, tn: int, fp: int, fn: int) -> float:
    total = tp + tn + fp + fn
    if total == 0:
        raise ValueError("empty confusion matrix")
    return (tp + tn) / total


def l2_error(y_real, y_pred) -> float:
    diff = np.asarray(y_real, dtype=float) - np.asarray(y_pred, dtype=float)
    return float(diff @ diff)


def train_eval(train: Dataset, test: Dataset, mask, spec: ModelSpec, seed: int = 0) -> EvalMetrics:
    """Fit ``spec`` on the masked train columns and score it on the test split."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("mask selects no features")
    if train.target is None or test.target is None:
        raise ValueError("downstream evaluation needs a target")
    if spec.task is not train.task:
        raise ValueError(f"model {spec.name} does not fit a {train.task.value} task")
    xtr, xte = train.features[:, mask], test.features[:, mask]
    ytr, yte = train.target, test.target
    out = EvalMetrics(train.task, spec.name, len(ytr), len(yte))
    DOWNSTREAM.bump()
    if train.task is TaskKind.CLASSIFICATION:
        classes = np.unique(ytr)
        if len(classes) < 2:
            pred = np.full(len(yte), classes[0])
            out.degenerate = True
        else:
            est = make_estimator(spec, seed)
            if spec.kind is ModelKind.KNN and spec.k > len(ytr):
                est.set_params(n_neighbors=len(ytr))
            pred = est.fit(xtr, ytr).predict(xte)
        out.tp, out.tn, out.fp, out.fn = confusion_counts(yte.astype(int), np.asarray(pred).astype(int))
        out.acc = accuracy(out.tp, out.tn, out.fp, out.fn)
    else:
        est = make_estimator(spec, seed)
        if spec.kind is ModelKind.KNN_REG and spec.k > len(ytr):
            est.set_params(n_neighbors=len(ytr))
        out.l2 = l2_error(yte, est.fit(xtr, ytr).predict(xte))
    return out


class Method(str, enum.Enum):
    SELECTED = "selected"
    ALL_FEATURES = "all-features"
    RANDOM_HALF = "random-half"
    RANDOM_REWARD = "random-reward"


def random_half_mask(d: int, seed: int) -> np.ndarray:
    mask = np.zeros(d, dtype=bool)
    mask[stream(seed, "random-half").choice(d, size=math.ceil(d / 2), replace=False)] = True
    return mask


@dataclass
class ComparatorResult:
    method: Method
    model_name: str
    value: float
    metrics: List[EvalMetrics] = field(default_factory=list)
    rank: int = 0

    def to_dict(self) -> dict:
        return {
            "method": self.method.value,
            "model": self.model_name,
            "value": self.value,
            "rank": self.rank,
            "runs": [m.to_dict() for m in self.metrics],
        }


def better_first(task: TaskKind, values: Sequence[float]) -> np.ndarray:
    """Order of indices from best to worst; ties keep input order."""
    v = np.asarray(values, dtype=float)
    return np.argsort(-v if task is TaskKind.CLASSIFICATION else v, kind="stable")


def compare(train: Dataset, test: Dataset, masks: Mapping[Method, Sequence[np.ndarray]],
            models: Optional[Sequence[ModelSpec]] = None, seed: int = 0) -> List[ComparatorResult]:
    """Score each method's masks (averaged) under every model and rank methods per model."""
    models = list(models) if models is not None else default_models(train.task)
    results = []
    for spec in models:
        block = []
        for method, method_masks in masks.items():
            runs = [train_eval(train, test, m, spec, seed) for m in method_masks]
            block.append(ComparatorResult(method, spec.name, float(np.mean([r.value for r in runs])), runs))
        for rank, idx in enumerate(better_first(train.task, [r.value for r in block]), start=1):
            block[idx].rank = rank
        results.extend(block)
    return results


def comparator_masks(d: int, selected: Sequence[np.ndarray], random_reward: Optional[Sequence[np.ndarray]] = None,
                     n_random: int = 5, seed: int = 0) -> Dict[Method, List[np.ndarray]]:
    masks = {
        Method.SELECTED: [np.asarray(m, dtype=bool) for m in selected],
        Method.ALL_FEATURES: [np.ones(d, dtype=bool)],
        Method.RANDOM_HALF: [random_half_mask(d, seed + s) for s in range(n_random)],
    }
    if random_reward is not None:
        masks[Method.RANDOM_REWARD] = [np.asarray(m, dtype=bool) for m in random_reward]
    return masks


def mean_ranks(results: Sequence[ComparatorResult]) -> Dict[str, float]:
    by_method: Dict[str, List[int]] = {}
    for r in results:
        by_method.setdefault(r.method.value, []).append(r.rank)
    return {k: float(np.mean(v)) for k, v in by_method.items()}


@dataclass
class TimingReport:
    phases: Dict[str, float]
    total: float
    downstream_calls: int

    def to_dict(self) -> dict:
        return {"phases": dict(self.phases), "total": self.total, "downstream_calls": self.downstream_calls}


def time_profile(phases: Mapping[str, float], downstream_calls: int) -> TimingReport:
    return TimingReport(dict(phases), float(sum(phases.values())), int(downstream_calls))


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_comparison_csv(results: Sequence[ComparatorResult], path, dataset: str = "") -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["dataset", "model", "method", "value", "rank"])
        for r in results:
            w.writerow([dataset, r.model_name, r.method.value, repr(r.value), r.rank])
