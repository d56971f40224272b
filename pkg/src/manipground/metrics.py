"""Evaluation metrics for the four tasks.

* binary detection: AUC, EER, ACC
* manipulation type (multi-label FS/FA/TS/TA): mAP, CF1, OF1
* image grounding: mean IoU, IoU >= 0.5 rate, IoU >= 0.75 rate
* text grounding: token precision, recall, F1
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from scipy.stats import rankdata

THRESHOLD = 0.5


class BinaryScores(NamedTuple):
    auc: float
    eer: float
    acc: float


class MultiLabelScores(NamedTuple):
    map: float
    cf1: float
    of1: float


class IoUScores(NamedTuple):
    iou_mean: float
    iou50: float
    iou75: float


class PRF(NamedTuple):
    precision: float
    recall: float
    f1: float
    zero_division: bool = False


def roc_auc(scores, labels) -> float:
    """Rank-statistic AUC; ties count one half. NaN if a class is missing."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        return math.nan
    ranks = rankdata(s)
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_curve(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    """(fpr, tpr) at every distinct threshold, starting from (0, 0)."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last = np.r_[np.flatnonzero(np.diff(s)), s.size - 1]
    tp = np.cumsum(y)[last]
    fp = np.cumsum(~y)[last]
    tpr = np.r_[0, tp] / max(int(y.sum()), 1)
    fpr = np.r_[0, fp] / max(int((~y).sum()), 1)
    return fpr, tpr


def equal_error_rate(scores, labels) -> float:
    """Point on the ROC polyline where FPR equals FNR, linearly interpolated."""
    y = np.asarray(labels).astype(bool)
    if y.all() or not y.any():
        return math.nan
    fpr, tpr = roc_curve(scores, labels)
    d = fpr - (1.0 - tpr)
    candidates = [float(fpr[k]) for k in np.flatnonzero(d == 0)]
    for k in np.flatnonzero((d[:-1] < 0) & (d[1:] > 0)):
        t = -d[k] / (d[k + 1] - d[k])
        candidates.append(float(fpr[k] + t * (fpr[k + 1] - fpr[k])))
    return min(candidates)


def auc_eer_acc(scores, labels) -> BinaryScores:
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(int)
    if s.size == 0:
        raise ValueError("binary metrics need at least one sample")
    if s.shape != y.shape:
        raise ValueError(f"scores {s.shape} and labels {y.shape} differ")
    acc = float(np.mean((s >= THRESHOLD).astype(int) == y))
    return BinaryScores(roc_auc(s, y), equal_error_rate(s, y), acc)


def average_precision(scores, labels) -> float:
    """Mean over positives of the precision at that positive's score (ties included)."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    if not y.any():
        return math.nan
    sorted_s = np.sort(s)
    pos_sorted = np.sort(s[y])
    pos_scores = s[y]
    # counts of items / positives scoring >= each positive's score
    at_least = s.size - np.searchsorted(sorted_s, pos_scores, side="left")
    pos_at_least = pos_sorted.size - np.searchsorted(pos_sorted, pos_scores, side="left")
    return float(np.mean(pos_at_least / at_least))


def _f1(tp: int, fp: int, fn: int) -> float:
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def multilabel_map_cf1_of1(probs, labels) -> MultiLabelScores:
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    if p.size == 0:
        raise ValueError("multi-label metrics need at least one sample")
    if p.shape != y.shape:
        raise ValueError(f"probabilities {p.shape} and labels {y.shape} differ")
    aps = [average_precision(p[:, c], y[:, c]) for c in range(p.shape[1]) if y[:, c].any()]
    mean_ap = float(np.mean(aps)) if aps else math.nan
    pred = p >= THRESHOLD
    tp = (pred & y).sum(axis=0)
    fp = (pred & ~y).sum(axis=0)
    fn = (~pred & y).sum(axis=0)
    cf1 = float(np.mean([_f1(int(a), int(b), int(c)) for a, b, c in zip(tp, fp, fn)]))
    of1 = _f1(int(tp.sum()), int(fp.sum()), int(fn.sum()))
    return MultiLabelScores(mean_ap, cf1, float(of1))


def box_iou(a, b) -> np.ndarray:
    """IoU of corner boxes, row-wise."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    iw = np.clip(np.minimum(a[:, 2], b[:, 2]) - np.maximum(a[:, 0], b[:, 0]), 0, None)
    ih = np.clip(np.minimum(a[:, 3], b[:, 3]) - np.maximum(a[:, 1], b[:, 1]), 0, None)
    inter = iw * ih
    union = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1]) + (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1]) - inter
    return np.where(union > 0, inter / np.maximum(union, 1e-12), 0.0)


def iou_suite(pred_boxes, gt_boxes, mask=None) -> IoUScores:
    pred = np.asarray(pred_boxes, dtype=np.float64).reshape(-1, 4)
    gt = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    keep = np.ones(len(pred), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if not keep.any():
        raise ValueError("no image-manipulated samples to evaluate grounding on")
    ious = box_iou(pred[keep], gt[keep])
    return IoUScores(float(ious.mean()), float(np.mean(ious >= 0.5)), float(np.mean(ious >= 0.75)))


def token_prf(pred_labels, gt_labels) -> PRF:
    """Micro precision/recall/F1 with 'manipulated' as the positive class."""
    pred = [np.asarray(p).astype(bool).ravel() for p in _as_rows(pred_labels)]
    gt = [np.asarray(g).astype(bool).ravel() for g in _as_rows(gt_labels)]
    if len(pred) != len(gt) or any(a.size != b.size for a, b in zip(pred, gt)):
        raise ValueError("predicted and ground-truth token labels are not aligned")
    p = np.concatenate(pred) if pred else np.zeros(0, bool)
    g = np.concatenate(gt) if gt else np.zeros(0, bool)
    tp = int((p & g).sum())
    fp = int((p & ~g).sum())
    fn = int((~p & g).sum())
    degenerate = (tp + fp == 0) or (tp + fn == 0)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return PRF(precision, recall, f1, degenerate)


def _as_rows(x) -> list:
    arr = x if isinstance(x, (list, tuple)) else [x]
    if len(arr) and np.ndim(arr[0]) == 0:
        return [np.asarray(arr)]
    return list(arr)


# -- reports ---------------------------------------------------------------------
TASKS = {
    "binary": ("auc", "eer", "acc"),
    "multilabel": ("map", "cf1", "of1"),
    "image_grounding": ("iou_mean", "iou50", "iou75"),
    "text_grounding": ("precision", "recall", "f1"),
}
_HEADERS = {"auc": "AUC", "eer": "EER", "acc": "ACC", "map": "mAP", "cf1": "CF1", "of1": "OF1",
            "iou_mean": "IoUmean", "iou50": "IoU50", "iou75": "IoU75",
            "precision": "Precision", "recall": "Recall", "f1": "F1"}


@dataclass
class MetricReport:
    auc: float
    eer: float
    acc: float
    map: float
    cf1: float
    of1: float
    iou_mean: float
    iou50: float
    iou75: float
    precision: float
    recall: float
    f1: float

    def grouped(self) -> dict[str, dict[str, float | None]]:
        return {task: {k: _clean(getattr(self, k)) for k in keys} for task, keys in TASKS.items()}

    def to_json(self) -> str:
        return json.dumps(self.grouped(), indent=2)

    def table(self) -> str:
        keys = [k for keys in TASKS.values() for k in keys]
        heads = [_HEADERS[k] for k in keys]
        cells = [("-" if _clean(getattr(self, k)) is None else f"{100 * getattr(self, k):.2f}") for k in keys]
        widths = [max(len(h), len(c)) for h, c in zip(heads, cells)]
        line1 = "  ".join(h.rjust(w) for h, w in zip(heads, widths))
        line2 = "  ".join(c.rjust(w) for c, w in zip(cells, widths))
        return line1 + "\n" + line2 + "\n"

    @classmethod
    def from_grouped(cls, data: dict) -> MetricReport:
        flat = {}
        for task, keys in TASKS.items():
            for k in keys:
                v = data[task][k]
                flat[k] = math.nan if v is None else float(v)
        return cls(**flat)


def _clean(v: float) -> float | None:
    return None if v is None or (isinstance(v, float) and math.isnan(v)) else float(v)


@dataclass
class PredictionRecord:
    """Per-sample model outputs and labels; boxes are normalized corners."""

    sample_id: int
    binary_score: float
    type_probs: list[float]
    pred_box: list[float]
    token_probs: list[float]
    y_b: int
    type_labels: list[int]
    gt_box: list[float] | None
    y_mtg: list[int] = field(default_factory=list)

    @property
    def image_manipulated(self) -> bool:
        return self.gt_box is not None


def write_predictions(records: Iterable[PredictionRecord], path: str | Path) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(asdict(rec)) + "\n")


def read_predictions(path: str | Path) -> list[PredictionRecord]:
    with open(path) as fh:
        return [PredictionRecord(**json.loads(line)) for line in fh if line.strip()]


def compute_report(records: Sequence[PredictionRecord]) -> MetricReport:
    if not records:
        raise ValueError("no prediction records")
    b = auc_eer_acc([r.binary_score for r in records], [r.y_b for r in records])
    ml = multilabel_map_cf1_of1([r.type_probs for r in records], [r.type_labels for r in records])
    manip = [r for r in records if r.image_manipulated]
    if manip:
        io = iou_suite([r.pred_box for r in manip], [r.gt_box for r in manip])
    else:
        io = IoUScores(math.nan, math.nan, math.nan)
    tok = token_prf([np.asarray(r.token_probs) >= THRESHOLD for r in records], [r.y_mtg for r in records])
    return MetricReport(*b, *ml, *io, tok.precision, tok.recall, tok.f1)
