"""Evaluation metrics for sentiment-style regression and k-class tasks.

Conventions where the usual definitions leave a choice:

* ``acc2``: a zero prediction counts as positive; samples whose truth is
  exactly zero are left out of the denominator.
* ``acc7``: predictions are rounded half away from zero, then clamped to
  ``[-3, 3]``.
* Undefined values (zero variance, empty denominator) are ``None``, never NaN.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError, ShapeError


def _pair(pred, truth):
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    truth = np.asarray(truth, dtype=np.float64).reshape(-1)
    if pred.shape != truth.shape:
        raise ShapeError(f"prediction length {pred.size} != truth length {truth.size}")
    return pred, truth


def mae(pred, truth):
    pred, truth = _pair(pred, truth)
    if pred.size == 0:
        raise ShapeError("mae of empty vectors")
    return float(np.mean(np.abs(pred - truth)))


def pearson_corr(pred, truth):
    """Sample Pearson correlation, or ``None`` when either side is constant."""
    pred, truth = _pair(pred, truth)
    if pred.size < 2:
        raise InvalidArgumentError("pearson_corr needs at least 2 points")
    dp = pred - pred.mean()
    dt = truth - truth.mean()
    sp = math.sqrt(float(dp @ dp))
    st = math.sqrt(float(dt @ dt))
    if sp == 0.0 or st == 0.0:
        return None
    r = float(dp @ dt) / (sp * st)
    return max(-1.0, min(1.0, r))


def acc2(pred, truth):
    pred, truth = _pair(pred, truth)
    keep = truth != 0
    if not keep.any():
        return None
    return float(np.mean((pred[keep] >= 0) == (truth[keep] > 0)))


def round_half_away(x):
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def acc7(pred, truth):
    pred, truth = _pair(pred, truth)
    if pred.size == 0:
        return None
    bins = np.clip(round_half_away(pred), -3, 3)
    return float(np.mean(bins == np.clip(round_half_away(truth), -3, 3)))


def f1(pred_classes, truth_classes, positive_class):
    pred = np.asarray(pred_classes).reshape(-1)
    truth = np.asarray(truth_classes).reshape(-1)
    if pred.shape != truth.shape:
        raise ShapeError(f"prediction length {pred.size} != truth length {truth.size}")
    tp = int(np.sum((pred == positive_class) & (truth == positive_class)))
    fp = int(np.sum((pred == positive_class) & (truth != positive_class)))
    fn = int(np.sum((pred != positive_class) & (truth == positive_class)))
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2 * precision * recall / (precision + recall)


def accuracy(pred_classes, truth_classes):
    pred = np.asarray(pred_classes).reshape(-1)
    truth = np.asarray(truth_classes).reshape(-1)
    if pred.shape != truth.shape:
        raise ShapeError(f"prediction length {pred.size} != truth length {truth.size}")
    return float(np.mean(pred == truth))


@dataclass
class MetricReport:
    n: int
    mae: float
    pearson_corr: float | None
    acc2: float | None = None
    acc7: float | None = None
    accuracy: float | None = None
    f1_per_class: dict = field(default_factory=dict)

    def rows(self):
        out = [("n", self.n), ("mae", self.mae), ("pearson_corr", self.pearson_corr),
               ("acc2", self.acc2), ("acc7", self.acc7), ("accuracy", self.accuracy)]
        out += [(f"f1_{k}", v) for k, v in self.f1_per_class.items()]
        return out


def report(outputs, truth, task="regression"):
    """Metric report from raw model outputs (``(B, 1)`` scores or ``(B, k)`` logits)."""
    outputs = np.asarray(outputs, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64).reshape(-1)
    if task == "regression":
        pred = outputs.reshape(-1)
        keep = truth != 0
        pos_pred = (pred[keep] >= 0).astype(int)
        pos_true = (truth[keep] > 0).astype(int)
        f1s = {"negative": f1(pos_pred, pos_true, 0), "positive": f1(pos_pred, pos_true, 1)}
        return MetricReport(len(truth), mae(pred, truth), pearson_corr(pred, truth),
                            acc2(pred, truth), acc7(pred, truth), None, f1s)
    classes = outputs.argmax(axis=1)
    k = outputs.shape[1]
    f1s = {str(c): f1(classes, truth, c) for c in range(k)}
    return MetricReport(len(truth), mae(classes, truth), pearson_corr(classes, truth),
                        None, None, accuracy(classes, truth), f1s)


def _cell(v):
    if v is None:
        return "undefined"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_report(path, rep: MetricReport, split_name="test"):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["split", "metric", "value"])
        for k, v in rep.rows():
            w.writerow([split_name, k, _cell(v)])


def read_report(path):
    """Parse a report CSV back to ``{metric: value}`` (``None`` for undefined)."""
    out = {}
    with open(Path(path), encoding="utf-8", newline="") as fh:
        rows = csv.reader(fh)
        next(rows)
        for _, k, v in rows:
            out[k] = None if v == "undefined" else (int(v) if k == "n" else float(v))
    return out
