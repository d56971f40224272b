"""Implicit manipulation queries and the two grounding heads.

Learnable queries attend over patch (or token) embeddings in a single
attention step. The aggregated image query feeds a box regressor; the
aggregated text queries are scored against every token by an inner product
in a reduced feature space, giving one logit column per query.
"""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .config import ConfigError
from .nn import MLP, Linear, Module, parameter, trunc_normal
from .tensor import DimensionError, Tensor


def aggregate(queries: Tensor, features: Tensor) -> Tensor:
    """Attention(queries, features, features)."""
    if queries.shape[-1] != features.shape[-1]:
        raise DimensionError(f"queries {queries.shape} and features {features.shape} differ in width")
    return T.attention(queries, features, features)


# Unit-scale queries (as DETR's query embeddings): with the 0.02 weight init every
# query would attend uniformly and all text queries would start out identical.
QUERY_INIT_STD = 1.0


class ManipulationQueries(Module):
    def __init__(self, dim: int, image_queries: int, text_queries: int, rng: np.random.Generator):
        self.q_im = parameter(trunc_normal(rng, (image_queries, dim), QUERY_INIT_STD), no_decay=True)
        self.q_tm = parameter(trunc_normal(rng, (text_queries, dim), QUERY_INIT_STD), no_decay=True)

    def aggregate_image(self, i_pat: Tensor) -> Tensor:
        return aggregate(self.q_im, i_pat)

    def aggregate_text(self, t_tok: Tensor) -> Tensor:
        return aggregate(self.q_tm, t_tok)


class BoxHead(Module):
    """3-layer perceptron -> sigmoid -> normalized (cx, cy, w, h)."""

    def __init__(self, dim: int, rng: np.random.Generator):
        self.mlp = MLP([dim, dim, dim, 4], rng)

    def __call__(self, f_im: Tensor) -> Tensor:
        if f_im.shape[-2] != 1:
            raise DimensionError(f"box head expects a single image query, got {f_im.shape}")
        out = T.sigmoid(self.mlp(f_im))
        return out.reshape(*out.shape[:-2], 4)


class TokenScorer(Module):
    """Per-token logits = reduce(t_tok) @ reduce(f_tm)^T (column 0 real, 1 manipulated)."""

    def __init__(self, dim: int, reduce_dim: int, text_queries: int, rng: np.random.Generator,
                 project: bool = False):
        if text_queries != 2 and not project:
            raise ConfigError("token scoring with text_queries != 2 needs the query-to-class projection")
        self.reduce = Linear(dim, reduce_dim, rng)
        self.to_classes = Linear(text_queries, 2, rng) if project else None

    def __call__(self, t_tok: Tensor, f_tm: Tensor) -> Tensor:
        if t_tok.shape[-1] != f_tm.shape[-1]:
            raise DimensionError(f"t_tok {t_tok.shape} and f_tm {f_tm.shape} differ in width")
        logits = T.matmul(self.reduce(t_tok), self.reduce(f_tm).swapaxes(-1, -2))
        if self.to_classes is not None:
            logits = self.to_classes(logits)
        return logits


class TokenMLP(Module):
    """Query-free per-token classifier used when text queries are ablated."""

    def __init__(self, dim: int, rng: np.random.Generator):
        self.mlp = MLP([dim, dim, 2], rng)

    def __call__(self, t_tok: Tensor) -> Tensor:
        return self.mlp(t_tok)


def mean_pool(features: Tensor) -> Tensor:
    """Mean over the row axis, kept as a single row (replacement for the image query)."""
    return features.mean(axis=-2, keepdims=True)


def cxcywh_to_xyxy(box: Tensor) -> Tensor:
    cx, cy, w, h = box[..., 0:1], box[..., 1:2], box[..., 2:3], box[..., 3:4]
    return T.concat([cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h], axis=-1)
