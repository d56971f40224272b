"""Loss terms and the weighted objective.

``total = bcls + alpha * mcls + beta * mig + gamma * mtg``, where the box term
``mig`` (L1 + GIoU) only covers samples whose image is manipulated.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .config import InputError
from .grounding import cxcywh_to_xyxy
from .tensor import Tensor

AREA_FLOOR = 1e-12


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0
    beta: float = 0.1
    gamma: float = 1.0

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be non-negative")


@dataclass
class LossBreakdown:
    total: Tensor
    bcls: float
    mcls: float
    mig: float | None
    mtg: float | None
    active: dict = field(default_factory=dict)

    def as_record(self) -> dict:
        return {"total": self.total.item(), "bcls": self.bcls, "mcls": self.mcls,
                "mig": self.mig, "mtg": self.mtg, "active": dict(self.active)}


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood over rows of (n, c) logits."""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    c = logits.shape[-1]
    flat = logits.reshape(-1, c)
    if flat.shape[0] != labels.size:
        raise InputError(f"{flat.shape[0]} logit rows but {labels.size} labels")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise InputError(f"label outside [0, {c})")
    logp = T.log_softmax_rows(flat)
    picked = logp[np.arange(labels.size), labels]
    return -picked.mean()


def binary_cross_entropy_with_logits(logits: Tensor, targets) -> Tensor:
    """Per-class sigmoid cross-entropy, summed over classes and averaged over rows."""
    y = np.asarray(targets, dtype=np.float64)
    if y.shape != logits.shape:
        raise InputError(f"targets {y.shape} do not match logits {logits.shape}")
    # log(1 + exp(-|x|)) + max(x, 0) - x*y, written with tensor ops
    x = logits
    absx = T.abs_(x)
    softplus = T.log(1.0 + T.exp(-absx)) + T.relu(x)
    per = softplus - x * Tensor(y)
    return per.sum(axis=-1).mean()


def l1_box(pred: Tensor, target) -> Tensor:
    """Mean absolute coordinate difference per box, shape (...,)."""
    return T.abs_(pred - Tensor(np.asarray(target, dtype=np.float64))).mean(axis=-1)


def _check_boxes(arr: np.ndarray) -> None:
    if arr.shape[-1] != 4:
        raise InputError(f"boxes must have 4 coordinates, got shape {arr.shape}")
    if np.any(arr[..., 2] < arr[..., 0]) or np.any(arr[..., 3] < arr[..., 1]):
        raise InputError("malformed box: need x1 <= x2 and y1 <= y2")


def giou(a, b) -> Tensor:
    """Generalized IoU of corner boxes (x1, y1, x2, y2); differentiable in both."""
    a = a if isinstance(a, Tensor) else Tensor(np.asarray(a, dtype=np.float64))
    b = b if isinstance(b, Tensor) else Tensor(np.asarray(b, dtype=np.float64))
    _check_boxes(a.data)
    _check_boxes(b.data)
    ax1, ay1, ax2, ay2 = (a[..., k] for k in range(4))
    bx1, by1, bx2, by2 = (b[..., k] for k in range(4))
    iw = T.relu(T.minimum(ax2, bx2) - T.maximum(ax1, bx1))
    ih = T.relu(T.minimum(ay2, by2) - T.maximum(ay1, by1))
    inter = iw * ih
    area_a = (ax2 - ax1) * (ay2 - ay1)
    area_b = (bx2 - bx1) * (by2 - by1)
    union = area_a + area_b - inter
    iou = inter / T.maximum(union, AREA_FLOOR)
    cw = T.maximum(ax2, bx2) - T.minimum(ax1, bx1)
    ch = T.maximum(ay2, by2) - T.minimum(ay1, by1)
    enclose = cw * ch
    return iou - (enclose - union) / T.maximum(enclose, AREA_FLOOR)


def giou_loss(pred, target) -> Tensor:
    return 1.0 - giou(pred, target)


def combine(bcls, mcls, mig, mtg, weights: LossWeights = LossWeights()):
    """Weighted sum of the four terms; ``None`` marks an inactive term."""
    total = bcls + weights.alpha * mcls
    if mig is not None:
        total = total + weights.beta * mig
    if mtg is not None:
        total = total + weights.gamma * mtg
    return total


def _value(x) -> float | None:
    if x is None:
        return None
    return x.item() if isinstance(x, Tensor) else float(x)


def composite_loss(output, batch: dict, weights: LossWeights) -> LossBreakdown:
    """Full objective for a model output (see :class:`manipground.model.ModelOutput`)."""
    bcls = cross_entropy(output.binary, batch["y_b"])
    if output.multilabel is not None:
        mcls = binary_cross_entropy_with_logits(output.multilabel, batch["multilabel"])
    else:
        mcls = cross_entropy(output.image_fine, batch["y_i"]) + cross_entropy(output.text_fine, batch["y_t"])

    has_box = np.asarray(batch["has_box"], dtype=bool)
    mig = None
    if has_box.any():
        idx = np.flatnonzero(has_box)
        pred = cxcywh_to_xyxy(output.bbox[idx])
        target = np.asarray(batch["y_mig"])[idx]
        mig = (l1_box(pred, target) + giou_loss(pred, target)).mean()

    mtg = cross_entropy(output.token_logits, batch["y_mtg"])
    total = combine(bcls, mcls, mig, mtg, weights)
    return LossBreakdown(total=total, bcls=bcls.item(), mcls=mcls.item(), mig=_value(mig),
                         mtg=mtg.item(), active={"mig": mig is not None, "mtg": True})
