"""Per-class precision, recall, and F1 over multi-label predictions.

F1 uses the harmonic-mean form with a zero convention: when a denominator
is zero (no predicted positives, no true positives, or both precision and
recall zero) the corresponding metric is 0 rather than undefined.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, ShapeError
from .model import Model, forward
from .autodiff import Tensor
from .ops import sigmoid_values


@dataclass
class ClassCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass
class ConfusionCounts:
    per_class: dict = field(default_factory=dict)

    def classes(self) -> list:
        return list(self.per_class)


@dataclass
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int

    def to_dict(self) -> dict:
        return {"precision": self.precision, "recall": self.recall,
                "f1": self.f1, "support": self.support}


@dataclass
class MetricsTable:
    per_class: dict = field(default_factory=dict)

    def classes(self) -> list:
        return list(self.per_class)

    def f1(self, name: str) -> float:
        return self.per_class[name].f1

    def macro_f1(self) -> float:
        if not self.per_class:
            return 0.0
        return float(np.mean([m.f1 for m in self.per_class.values()]))

    def to_dict(self) -> dict:
        return {name: m.to_dict() for name, m in self.per_class.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsTable":
        return cls({name: ClassMetrics(**vals) for name, vals in d.items()})


def confusion_counts(predictions: Sequence, truths: Sequence,
                     classes: Sequence[str]) -> ConfusionCounts:
    """Binary counting of aligned prediction and truth label sets."""
    if len(predictions) != len(truths):
        raise ShapeError(
            f"{len(predictions)} predictions but {len(truths)} truths")
    counts = ConfusionCounts({name: ClassCounts() for name in classes})
    for pred, truth in zip(predictions, truths):
        for name in classes:
            p = name in pred
            t = name in truth
            cell = counts.per_class[name]
            if p and t:
                cell.tp += 1
            elif p:
                cell.fp += 1
            elif t:
                cell.fn += 1
            else:
                cell.tn += 1
    return counts


def f1_from_counts(counts: ConfusionCounts) -> MetricsTable:
    """Precision, recall, and F1 with the zero convention for empty denominators."""
    table = {}
    for name, c in counts.per_class.items():
        precision = c.tp / (c.tp + c.fp) if (c.tp + c.fp) > 0 else 0.0
        recall = c.tp / (c.tp + c.fn) if (c.tp + c.fn) > 0 else 0.0
        f1 = (2 * precision * recall / (precision + recall)
              if (precision + recall) > 0 else 0.0)
        table[name] = ClassMetrics(precision=precision, recall=recall, f1=f1,
                                   support=c.tp + c.fn)
    return MetricsTable(table)


def model_scores(model: Model, ds, batch_size: int = 64) -> np.ndarray:
    """Eval-mode sigmoid scores [N, H] over a dataset, in record order."""
    chunks = []
    for start in range(0, len(ds.records), batch_size):
        recs = ds.records[start:start + batch_size]
        volts = np.stack([r.voltages for r in recs]).astype(model.dtype)
        logits = forward(model, Tensor(volts), mode="eval")
        chunks.append(sigmoid_values(logits.data))
    return np.concatenate(chunks, axis=0)


def evaluate_model(model: Model, ds, thresholds: Optional[dict] = None,
                   batch_size: int = 64) -> MetricsTable:
    """Score every record in eval mode and tabulate per-head metrics.

    Classes without a head are omitted from the table. Thresholds default
    to 0.5 per head; scores must strictly exceed the threshold to predict.
    """
    if not ds.records:
        raise ConfigError("cannot evaluate on an empty dataset")
    heads = [name for name in model.head_names if name in ds.vocabulary]
    if not heads:
        raise ConfigError("model heads and dataset vocabulary are disjoint")
    thresholds = thresholds or {}
    cut = np.array([thresholds.get(name, 0.5) for name in model.head_names])
    scores = model_scores(model, ds, batch_size=batch_size)

    head_idx = {name: i for i, name in enumerate(model.head_names)}
    predictions = []
    truths = []
    for i, rec in enumerate(ds.records):
        predictions.append({name for name in heads
                            if scores[i, head_idx[name]] > cut[head_idx[name]]})
        truths.append(rec.labels)
    return f1_from_counts(confusion_counts(predictions, truths, heads))


def rank_auc(scores: np.ndarray, truths: np.ndarray) -> float:
    """Area under the ROC curve via the rank-sum statistic, ties averaged.

    Returns 0.5 when either class is absent.
    """
    truths = truths.astype(bool)
    n_pos = int(truths.sum())
    n_neg = truths.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return 0.5
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(scores.size)
    sorted_scores = scores[order]
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    pos_rank_sum = ranks[truths].sum()
    return float((pos_rank_sum - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def diagnostic_metrics(model: Model, ds, thresholds: Optional[dict] = None,
                       batch_size: int = 64) -> dict:
    """Accuracy and ROC-AUC per head: off by default because both mislead
    under class imbalance; kept behind this call for debugging."""
    if not ds.records:
        raise ConfigError("cannot evaluate on an empty dataset")
    thresholds = thresholds or {}
    scores = model_scores(model, ds, batch_size=batch_size)
    heads = [h for h in model.head_names if h in ds.vocabulary]
    truth = ds.label_matrix(head_names=heads)
    head_pos = {name: i for i, name in enumerate(model.head_names)}
    out = {}
    for j, name in enumerate(heads):
        col = scores[:, head_pos[name]]
        preds = col > thresholds.get(name, 0.5)
        out[name] = {
            "accuracy": float((preds == truth[:, j].astype(bool)).mean()),
            "auc": rank_auc(col, truth[:, j]),
        }
    return out


def tune_thresholds(model: Model, val_ds, grid: Optional[np.ndarray] = None,
                    batch_size: int = 64) -> dict:
    """Pick per-head thresholds maximizing F1 on a validation split.

    Off for default reporting; exists for diagnostics and deployment tuning.
    """
    if grid is None:
        grid = np.linspace(0.05, 0.95, 19)
    if not val_ds.records:
        raise ConfigError("cannot tune thresholds on an empty dataset")
    scores = model_scores(model, val_ds, batch_size=batch_size)
    heads = [h for h in model.head_names if h in val_ds.vocabulary]
    truth = val_ds.label_matrix(head_names=heads)
    head_pos = {name: i for i, name in enumerate(model.head_names)}
    best = {}
    for j, name in enumerate(heads):
        col = scores[:, head_pos[name]]
        best_f1, best_cut = -1.0, 0.5
        for cut in grid:
            preds = col > cut
            tp = int((preds & truth[:, j].astype(bool)).sum())
            fp = int((preds & ~truth[:, j].astype(bool)).sum())
            fn = int((~preds & truth[:, j].astype(bool)).sum())
            precision = tp / (tp + fp) if tp + fp else 0.0
            recall = tp / (tp + fn) if tp + fn else 0.0
            f1 = (2 * precision * recall / (precision + recall)
                  if precision + recall else 0.0)
            if f1 > best_f1:
                best_f1, best_cut = f1, float(cut)
        best[name] = best_cut
    return best
