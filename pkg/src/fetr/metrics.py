"""Classification metrics: confusion matrix, precision/recall/F1, top-k accuracy."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DataError


@dataclass
class ConfusionMatrix:
    """Rows index the true class, columns the predicted class."""

    counts: np.ndarray

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def tp(self) -> np.ndarray:
        return np.diag(self.counts).copy()

    @property
    def fp(self) -> np.ndarray:
        return self.counts.sum(axis=0) - self.tp

    @property
    def fn(self) -> np.ndarray:
        return self.counts.sum(axis=1) - self.tp

    @property
    def tn(self) -> np.ndarray:
        return self.total - self.tp - self.fp - self.fn


def confusion_matrix(preds, labels, num_classes: int) -> ConfusionMatrix:
    preds = np.asarray(preds, dtype=np.int64).reshape(-1)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if preds.shape != labels.shape:
        raise DataError(f"{preds.size} predictions for {labels.size} labels")
    for name, arr in (("prediction", preds), ("label", labels)):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise DataError(f"{name} outside [0, {num_classes})")
    counts = np.bincount(labels * num_classes + preds, minlength=num_classes * num_classes)
    return ConfusionMatrix(counts.reshape(num_classes, num_classes))


def _safe_ratio(num, den):
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    out = np.zeros_like(num)
    np.divide(num, den, out=out, where=den > 0)
    return out


@dataclass
class ClassScores:
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    macro_precision: float
    macro_recall: float
    macro_f1: float


def precision_recall_f1(cm: ConfusionMatrix) -> ClassScores:
    """One-vs-rest precision, recall and F1 per class, plus unweighted macro means.

    A class with no predicted samples has precision 0; one with no true
    samples has recall 0; F1 is 0 whenever precision + recall is 0.
    """
    tp, fp, fn = cm.tp, cm.fp, cm.fn
    p = _safe_ratio(tp, tp + fp)
    r = _safe_ratio(tp, tp + fn)
    f1 = _safe_ratio(2 * p * r, p + r)
    k = max(1, cm.num_classes)
    macro = [math.fsum(v.tolist()) / k for v in (p, r, f1)]  # correctly rounded sums
    return ClassScores(p, r, f1, *macro)


def topk_hits(logits, labels, k: int) -> np.ndarray:
    """Boolean per-sample hit mask; ties go to the lower class index."""
    scores = np.asarray(getattr(logits, "data", logits))
    labels = np.asarray(labels, dtype=np.int64)
    K = scores.shape[1]
    if k > K or k < 1:
        raise ContractError(f"k={k} outside [1, {K}]")
    order = np.argsort(-scores, axis=1, kind="stable")[:, :k]
    return (order == labels[:, None]).any(axis=1)


def topk_accuracy(logits, labels, k: int) -> float:
    hits = topk_hits(logits, labels, k)
    return float(hits.sum()) / hits.size if hits.size else 0.0


def predictions(logits) -> np.ndarray:
    scores = np.asarray(getattr(logits, "data", logits))
    return np.argsort(-scores, axis=1, kind="stable")[:, 0]


@dataclass
class RunMetrics:
    top1: float
    top5: float
    precision: float
    recall: float
    f1: float
    num_samples: int
    topk: dict = field(default_factory=dict)
    per_class: list = field(default_factory=list)
    confusion: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "top1": self.top1,
            "top5": self.top5,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "num_samples": self.num_samples,
            "topk": {str(k): v for k, v in sorted(self.topk.items())},
            "per_class": self.per_class,
            "confusion": self.confusion,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def per_class_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["class", "tp", "fp", "fn", "precision", "recall", "f1"])
        for row in self.per_class:
            writer.writerow([row[c] for c in ("class", "tp", "fp", "fn", "precision", "recall", "f1")])
        return buf.getvalue()


def run_metrics(logits, labels, class_names=None, ks=(1, 5)) -> RunMetrics:
    scores = np.asarray(getattr(logits, "data", logits))
    labels = np.asarray(labels, dtype=np.int64)
    K = scores.shape[1]
    names = list(class_names) if class_names is not None else [str(i) for i in range(K)]
    cm = confusion_matrix(predictions(scores), labels, K)
    pr = precision_recall_f1(cm)
    topk = {k: topk_accuracy(scores, labels, min(k, K)) for k in sorted(set(ks) | {1, 5})}
    tp, fp, fn = cm.tp, cm.fp, cm.fn
    per_class = [
        {
            "class": names[i],
            "tp": int(tp[i]),
            "fp": int(fp[i]),
            "fn": int(fn[i]),
            "precision": float(pr.precision[i]),
            "recall": float(pr.recall[i]),
            "f1": float(pr.f1[i]),
        }
        for i in range(K)
    ]
    return RunMetrics(
        top1=topk[1],
        top5=topk[5],
        precision=pr.macro_precision,
        recall=pr.macro_recall,
        f1=pr.macro_f1,
        num_samples=int(labels.size),
        topk=topk,
        per_class=per_class,
        confusion=cm.counts.tolist(),
    )
