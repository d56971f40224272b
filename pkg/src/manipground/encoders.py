"""Uni-modal encoders: patch transformer for images, token transformer for text."""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .config import ConfigError, InputError
from .nn import Linear, Module, TransformerLayer, parameter, trunc_normal
from .tensor import Tensor


def patchify(images: np.ndarray, patch_size: int) -> np.ndarray:
    """(B, H, W, C) -> (B, N, p*p*C) with patches in row-major grid order.

    Each patch is flattened row-major over (row, column, channel).
    """
    b, h, w, c = images.shape
    p = patch_size
    if h % p or w % p:
        raise ConfigError(f"image size {h}x{w} is not divisible by patch size {p}")
    x = images.reshape(b, h // p, p, w // p, p, c).transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(b, (h // p) * (w // p), p * p * c)


# Patch projections of [0, 1] pixels start near 0.02 * sqrt(192 * 0.3) ~ 0.15 per
# coordinate. Positions at the usual 0.02 would be a small perturbation of that and
# the box regressor would have nothing to read location from.
IMAGE_POS_INIT_STD = 0.2


class ImageEncoder(Module):
    def __init__(self, image_size: int, channels: int, patch_size: int, dim: int, heads: int,
                 depth: int, rng: np.random.Generator, ffn_mult: int = 4,
                 dropout: float = 0.0, dropout_rng=None):
        if image_size % patch_size:
            raise ConfigError(f"image size {image_size} is not divisible by patch size {patch_size}")
        self.patch_size = patch_size
        self.image_size = image_size
        self.num_patches = (image_size // patch_size) ** 2
        self.patch_proj = Linear(patch_size * patch_size * channels, dim, rng)
        self.cls = parameter(trunc_normal(rng, (1, dim)))
        self.pos = parameter(trunc_normal(rng, (self.num_patches + 1, dim), IMAGE_POS_INIT_STD))
        self.layers = [TransformerLayer(dim, heads, rng, ffn_mult, dropout, dropout_rng)
                       for _ in range(depth)]

    def embed(self, images: np.ndarray) -> Tensor:
        """Patch projection, [CLS] prepend and positions; the transformer input."""
        patches = T.linear(Tensor(patchify(images, self.patch_size)),
                           self.patch_proj.weight, self.patch_proj.bias)
        b = patches.shape[0]
        cls = self.cls.expand((b, 1, self.cls.shape[1]))
        return T.concat([cls, patches], axis=1) + self.pos

    def __call__(self, images) -> Tensor:
        images = np.asarray(images, dtype=np.float64)
        single = images.ndim == 3
        if single:
            images = images[None]
        x = self.embed(images)
        for layer in self.layers:
            x = layer(x)
        return x[0] if single else x


class TextEncoder(Module):
    def __init__(self, vocab_size: int, max_tokens: int, dim: int, heads: int, depth: int,
                 rng: np.random.Generator, ffn_mult: int = 4, dropout: float = 0.0, dropout_rng=None):
        self.vocab_size = vocab_size
        self.max_tokens = max_tokens
        self.table = parameter(trunc_normal(rng, (vocab_size, dim)))
        self.cls = parameter(trunc_normal(rng, (1, dim)))
        self.pos = parameter(trunc_normal(rng, (max_tokens + 1, dim)))
        self.layers = [TransformerLayer(dim, heads, rng, ffn_mult, dropout, dropout_rng)
                       for _ in range(depth)]

    def embed(self, tokens: np.ndarray) -> Tensor:
        tokens = np.asarray(tokens)
        if tokens.shape[-1] != self.max_tokens:
            raise InputError(f"expected {self.max_tokens} tokens per text, got {tokens.shape[-1]}")
        if tokens.size and (tokens.min() < 0 or tokens.max() >= self.vocab_size):
            bad = tokens[(tokens < 0) | (tokens >= self.vocab_size)]
            raise InputError(f"token id {int(bad[0])} outside vocabulary of size {self.vocab_size}")
        emb = T.embedding(self.table, tokens)
        b = emb.shape[0]
        cls = self.cls.expand((b, 1, self.cls.shape[1]))
        return T.concat([cls, emb], axis=1) + self.pos

    def __call__(self, tokens) -> Tensor:
        tokens = np.asarray(tokens, dtype=np.int64)
        single = tokens.ndim == 1
        if single:
            tokens = tokens[None]
        x = self.embed(tokens)
        for layer in self.layers:
            x = layer(x)
        return x[0] if single else x
