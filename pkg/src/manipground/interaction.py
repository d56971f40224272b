"""Dual-branch cross-attention between image and text streams.

Each layer runs, per branch, pre-norm self-attention, then cross-attention
whose queries come from the branch and whose keys/values come from the other
modality, then a feed-forward block. Both branches are updated every layer;
the cross-attention step reads the other branch's post-self-attention state.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import FeedForward, LayerNorm, Module, MultiHeadAttention
from .tensor import DimensionError, Tensor


@dataclass
class FusedFeatures:
    i_cls: Tensor
    i_pat: Tensor
    t_cls: Tensor
    t_tok: Tensor


class _Branch(Module):
    def __init__(self, dim, heads, ffn_mult, rng, cross: bool, dropout=0.0, dropout_rng=None):
        self.sa_norm = LayerNorm(dim)
        self.sa = MultiHeadAttention(dim, heads, rng, dropout, dropout_rng)
        if cross:
            self.ca_norm = LayerNorm(dim)
            self.ca_context_norm = LayerNorm(dim)
            self.ca = MultiHeadAttention(dim, heads, rng, dropout, dropout_rng)
        else:
            self.ca = None
        self.ff_norm = LayerNorm(dim)
        self.ff = FeedForward(dim, ffn_mult, rng, dropout, dropout_rng)

    def self_attend(self, x: Tensor) -> Tensor:
        h = self.sa_norm(x)
        return x + self.sa(h, h)

    def cross_attend(self, x: Tensor, context: Tensor) -> Tensor:
        return x + self.ca(self.ca_norm(x), self.ca_context_norm(context))

    def feed_forward(self, x: Tensor) -> Tensor:
        return x + self.ff(self.ff_norm(x))


class InteractionLayer(Module):
    def __init__(self, dim: int, heads: int, rng: np.random.Generator, ffn_mult: int = 4,
                 text_cross: bool = True, dropout: float = 0.0, dropout_rng=None):
        self.image = _Branch(dim, heads, ffn_mult, rng, True, dropout, dropout_rng)
        self.text = _Branch(dim, heads, ffn_mult, rng, text_cross, dropout, dropout_rng)

    def __call__(self, x_i: Tensor, x_t: Tensor, cross: bool = True,
                 text_cross: bool = True) -> tuple[Tensor, Tensor]:
        x_i = self.image.self_attend(x_i)
        x_t = self.text.self_attend(x_t)
        if cross:
            new_i = self.image.cross_attend(x_i, x_t)
            if text_cross and self.text.ca is not None:
                x_t = self.text.cross_attend(x_t, x_i)
            x_i = new_i
        return self.image.feed_forward(x_i), self.text.feed_forward(x_t)


class InteractionStack(Module):
    """Stack of ``depth`` dual-branch layers followed by a final norm per branch.

    With ``text_cross=False`` the text branch carries no cross-attention, so
    text features never see the image (the single-stream ablation).
    """

    def __init__(self, dim: int, heads: int, depth: int, rng: np.random.Generator,
                 ffn_mult: int = 4, text_cross: bool = True, dropout: float = 0.0, dropout_rng=None):
        if depth < 1:
            raise ValueError("interaction depth must be >= 1")
        self.dim = dim
        self.text_cross = text_cross
        self.layers = [InteractionLayer(dim, heads, rng, ffn_mult, text_cross, dropout, dropout_rng)
                       for _ in range(depth)]
        self.image_norm = LayerNorm(dim)
        self.text_norm = LayerNorm(dim)

    def _run(self, f_i: Tensor, f_t: Tensor, cross: bool, text_cross: bool) -> FusedFeatures:
        if f_i.shape[-1] != self.dim or f_t.shape[-1] != self.dim:
            raise DimensionError(f"interaction expects width {self.dim}, got {f_i.shape} and {f_t.shape}")
        x_i, x_t = f_i, f_t
        for layer in self.layers:
            x_i, x_t = layer(x_i, x_t, cross=cross, text_cross=text_cross)
        x_i, x_t = self.image_norm(x_i), self.text_norm(x_t)
        return FusedFeatures(i_cls=x_i[..., 0, :], i_pat=x_i[..., 1:, :],
                             t_cls=x_t[..., 0, :], t_tok=x_t[..., 1:, :])

    def __call__(self, f_i: Tensor, f_t: Tensor) -> FusedFeatures:
        return self._run(f_i, f_t, cross=True, text_cross=self.text_cross)

    def single_stream(self, f_i: Tensor, f_t: Tensor) -> FusedFeatures:
        """Image branch cross-attends to text; text branch stays self-attention only."""
        return self._run(f_i, f_t, cross=True, text_cross=False)

    def self_only(self, f_i: Tensor, f_t: Tensor) -> FusedFeatures:
        """Both branches as independent self-attention stacks (no cross-attention)."""
        return self._run(f_i, f_t, cross=False, text_cross=False)

    def zero_cross_outputs(self) -> None:
        for layer in self.layers:
            for branch in (layer.image, layer.text):
                if branch.ca is not None:
                    branch.ca.out.zero_()


def interact(stack: InteractionStack, f_i: Tensor, f_t: Tensor) -> FusedFeatures:
    return stack(f_i, f_t)


def interact_single_stream(stack: InteractionStack, f_i: Tensor, f_t: Tensor) -> FusedFeatures:
    return stack.single_stream(f_i, f_t)
