"""Classification heads over the [CLS] embeddings.

Fine-grained image classes: 0 real, 1 face swap (FS), 2 face attribute (FA).
Fine-grained text classes: 0 real, 1 text swap (TS), 2 text attribute (TA).
Binary classes: 0 real pair, 1 manipulated.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import MLP, Module
from .tensor import DimensionError, Tensor


@dataclass
class DetectionLogits:
    binary: Tensor
    image_fine: Tensor | None = None
    text_fine: Tensor | None = None
    multilabel: Tensor | None = None


def _check(x: Tensor, dim: int, what: str) -> None:
    if x.shape[-1] != dim:
        raise DimensionError(f"{what} has width {x.shape[-1]}, expected {dim}")


class FineGrainedHeads(Module):
    """Decoupled 3-way classifiers: image head sees only i_cls, text head only t_cls."""

    def __init__(self, dim: int, rng: np.random.Generator):
        self.dim = dim
        self.image = MLP([dim, dim, 3], rng)
        self.text = MLP([dim, dim, 3], rng)

    def __call__(self, i_cls: Tensor, t_cls: Tensor) -> tuple[Tensor, Tensor]:
        _check(i_cls, self.dim, "i_cls")
        _check(t_cls, self.dim, "t_cls")
        return self.image(i_cls), self.text(t_cls)


class BinaryHead(Module):
    def __init__(self, dim: int, rng: np.random.Generator):
        self.dim = dim
        self.mlp = MLP([2 * dim, dim, 2], rng)

    def __call__(self, i_cls: Tensor, t_cls: Tensor) -> Tensor:
        _check(i_cls, self.dim, "i_cls")
        _check(t_cls, self.dim, "t_cls")
        return self.mlp(T.concat([i_cls, t_cls], axis=-1))


class CoupledHead(Module):
    """Multi-label head over the concatenated [CLS] pair: logits for (FS, FA, TS, TA)."""

    def __init__(self, dim: int, rng: np.random.Generator):
        self.dim = dim
        self.mlp = MLP([2 * dim, dim, 4], rng)

    def __call__(self, i_cls: Tensor, t_cls: Tensor) -> Tensor:
        _check(i_cls, self.dim, "i_cls")
        _check(t_cls, self.dim, "t_cls")
        return self.mlp(T.concat([i_cls, t_cls], axis=-1))


def classify(fine: FineGrainedHeads, binary: BinaryHead, i_cls: Tensor, t_cls: Tensor) -> DetectionLogits:
    image_fine, text_fine = fine(i_cls, t_cls)
    return DetectionLogits(binary=binary(i_cls, t_cls), image_fine=image_fine, text_fine=text_fine)


def classify_coupled(coupled: CoupledHead, binary: BinaryHead, i_cls: Tensor, t_cls: Tensor) -> DetectionLogits:
    return DetectionLogits(binary=binary(i_cls, t_cls), multilabel=coupled(i_cls, t_cls))
