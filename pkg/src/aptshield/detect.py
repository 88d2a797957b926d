"""Softmax classifier over latent codes, and detection metrics."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .errors import DomainError, ShapeError
from .numerics import make_rng

NORMAL = "normal"


@dataclass
class LinearClassifier:
    W: np.ndarray
    b: np.ndarray
    class_labels: list[str]
    training_log: list[tuple[int, float]] = field(default_factory=list)

    def __post_init__(self):
        if len(self.class_labels) < 2:
            raise DomainError("a classifier needs at least two classes")
        if self.W.shape[1] != len(self.class_labels) or self.b.shape != (len(self.class_labels),):
            raise ShapeError("weight/bias shapes do not match the class count")

    def to_json(self) -> dict:
        return {"class_labels": list(self.class_labels), "W": self.W.tolist(), "b": self.b.tolist()}

    @classmethod
    def from_json(cls, d: dict) -> "LinearClassifier":
        return cls(np.array(d["W"], dtype=np.float64), np.array(d["b"], dtype=np.float64), list(d["class_labels"]))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _xent(probs: np.ndarray, onehot: np.ndarray) -> float:
    return float(-np.mean(np.sum(onehot * np.log(np.maximum(probs, 1e-300)), axis=1)))


def train_classifier(
    codes,
    labels: Sequence[str],
    epochs: int = 500,
    learning_rate: float = 1.0,
    seed: int = 0,
) -> LinearClassifier:
    """Multinomial logistic regression fitted by full-batch gradient descent."""
    X = np.asarray(codes, dtype=np.float64)
    labels = list(labels)
    if X.ndim != 2 or X.shape[0] != len(labels):
        raise ShapeError(f"{X.shape[0] if X.ndim == 2 else '?'} code rows for {len(labels)} labels")
    classes = sorted(set(labels))
    if len(classes) < 2:
        raise DomainError(f"need at least two distinct labels, got {classes}")
    if epochs < 1:
        raise DomainError(f"epochs must be at least 1, got {epochs}")
    index = {c: i for i, c in enumerate(classes)}
    onehot = np.zeros((len(labels), len(classes)))
    onehot[np.arange(len(labels)), [index[y] for y in labels]] = 1.0

    rng = make_rng(seed)
    W = rng.uniform(-0.01, 0.01, size=(X.shape[1], len(classes)))
    b = np.zeros(len(classes))
    n = X.shape[0]
    log = []
    for epoch in range(1, epochs + 1):
        probs = softmax(X @ W + b)
        log.append((epoch, _xent(probs, onehot)))
        delta = (probs - onehot) / n
        W = W - learning_rate * (X.T @ delta)
        b = b - learning_rate * delta.sum(axis=0)
    return LinearClassifier(W, b, classes, log)


def predict(clf: LinearClassifier, codes) -> tuple[list[str], np.ndarray]:
    X = np.asarray(codes, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != clf.W.shape[0]:
        raise ShapeError(f"codes of shape {X.shape} do not match classifier input width {clf.W.shape[0]}")
    probs = softmax(X @ clf.W + clf.b)
    return [clf.class_labels[i] for i in probs.argmax(axis=1)], probs


def intrusion_scores(clf: LinearClassifier, probs: np.ndarray, normal: str = NORMAL) -> np.ndarray:
    """Binary intrusion score: 1 - P(normal)."""
    if normal not in clf.class_labels:
        return np.ones(probs.shape[0])
    return 1.0 - probs[:, clf.class_labels.index(normal)]


def roc_curve(is_positive: Sequence[bool], scores: Sequence[float]) -> list[tuple[float, float, float]]:
    """ROC points ``(fpr, tpr, threshold)`` from (0, 0) to (1, 1).

    Each distinct score is one threshold (predict positive when score >= t),
    so tied scores move the curve diagonally.
    """
    y = np.asarray(is_positive, dtype=bool)
    s = np.asarray(scores, dtype=np.float64)
    if y.shape != s.shape:
        raise ShapeError(f"{y.size} labels but {s.size} scores")
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise DomainError("ROC needs at least one positive and one negative sample")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    points = [(0.0, 0.0, float("inf"))]
    tp = fp = 0
    i = 0
    while i < s.size:
        j = i
        while j < s.size and s[j] == s[i]:
            j += 1
        tp += int(y[i:j].sum())
        fp += int((j - i) - y[i:j].sum())
        points.append((fp / n_neg, tp / n_pos, float(s[i])))
        i = j
    return points


def auc_trapezoid(points: Sequence[tuple[float, float, float]]) -> float:
    fpr = np.array([p[0] for p in points])
    tpr = np.array([p[1] for p in points])
    return float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2.0))


def roc_auc(is_positive: Sequence[bool], scores: Sequence[float]) -> float:
    return auc_trapezoid(roc_curve(is_positive, scores))


@dataclass
class MetricsReport:
    labels: list[str]
    confusion: list[list[int]]  # rows: true label, columns: predicted label
    accuracy: float
    precision: dict[str, float]
    recall: dict[str, float]
    roc_points: list[tuple[float, float, float]] | None
    auc: float | None
    n_samples: int

    def to_json(self) -> dict:
        d = asdict(self)
        if self.roc_points is not None:
            d["roc_points"] = [[f, t, _json_float(th)] for f, t, th in self.roc_points]
        return d

    def write_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_roc_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["fpr", "tpr", "threshold"])
            for f, t, th in self.roc_points or []:
                w.writerow([repr(f), repr(t), repr(th)])


def _json_float(x: float):
    return x if np.isfinite(x) else "inf"


def evaluate(
    pred_labels: Sequence[str],
    true_labels: Sequence[str],
    positive_scores: Sequence[float] | None = None,
    normal: str = NORMAL,
) -> MetricsReport:
    """Confusion matrix, accuracy, per-class precision/recall and binary ROC.

    The ROC view treats every label other than ``normal`` as an intrusion.
    Precision or recall of a class with an empty denominator is reported as 0.
    ROC and AUC are ``None`` when scores are absent or only one side occurs.
    """
    pred, true = list(pred_labels), list(true_labels)
    if len(pred) != len(true):
        raise ShapeError(f"{len(pred)} predictions for {len(true)} true labels")
    if positive_scores is not None and len(positive_scores) != len(true):
        raise ShapeError(f"{len(positive_scores)} scores for {len(true)} samples")
    labels = sorted(set(pred) | set(true))
    idx = {c: i for i, c in enumerate(labels)}
    conf = np.zeros((len(labels), len(labels)), dtype=np.int64)
    for p, t in zip(pred, true):
        conf[idx[t], idx[p]] += 1
    total = int(conf.sum())
    accuracy = float(np.trace(conf) / total) if total else 0.0
    col, row = conf.sum(axis=0), conf.sum(axis=1)
    precision = {c: float(conf[i, i] / col[i]) if col[i] else 0.0 for i, c in enumerate(labels)}
    recall = {c: float(conf[i, i] / row[i]) if row[i] else 0.0 for i, c in enumerate(labels)}

    roc = auc = None
    if positive_scores is not None:
        positive = [t != normal for t in true]
        if any(positive) and not all(positive):
            roc = roc_curve(positive, positive_scores)
            auc = auc_trapezoid(roc)
    return MetricsReport(labels, conf.tolist(), accuracy, precision, recall, roc, auc, total)


def stratified_split(labels: Sequence[str], test_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded per-class split into sorted (train, test) index arrays."""
    if not 0.0 < test_fraction < 1.0:
        raise DomainError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    rng = make_rng(seed)
    labels = list(labels)
    train, test = [], []
    for c in sorted(set(labels)):
        members = np.array([i for i, y in enumerate(labels) if y == c])
        members = members[rng.permutation(members.size)]
        n_test = int(round(test_fraction * members.size))
        if members.size > 1:
            n_test = min(max(n_test, 1), members.size - 1)
        test.extend(members[:n_test])
        train.extend(members[n_test:])
    return np.array(sorted(train), dtype=int), np.array(sorted(test), dtype=int)
