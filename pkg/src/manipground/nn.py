"""Parameterized layers built on :mod:`manipground.tensor`."""
from __future__ import annotations

from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor

INIT_STD = 0.02


def trunc_normal(rng: np.random.Generator, shape, std: float = INIT_STD) -> np.ndarray:
    """Normal(0, std) truncated to +-2 std by redrawing."""
    x = rng.standard_normal(shape)
    bad = np.abs(x) > 2.0
    while bad.any():
        x[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(x) > 2.0
    return x * std


def parameter(data, no_decay: bool = False) -> Tensor:
    p = Tensor(data, requires_grad=True)
    p.no_decay = no_decay
    return p


class Module:
    """Base class; parameters are discovered from attributes in definition order."""

    training = True

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def modules(self) -> Iterator[Module]:
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode: bool = True) -> Module:
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> Module:
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, bias: bool = True,
                 std: float = INIT_STD):
        self.weight = parameter(trunc_normal(rng, (out_dim, in_dim), std))
        self.bias = parameter(np.zeros(out_dim), no_decay=True) if bias else None

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    def zero_(self) -> None:
        self.weight.data[...] = 0.0
        if self.bias is not None:
            self.bias.data[...] = 0.0

    def __call__(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.scale = parameter(np.ones(dim), no_decay=True)
        self.shift = parameter(np.zeros(dim), no_decay=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return T.layernorm_rows(x, self.eps) * self.scale + self.shift


class MLP(Module):
    """Linear layers with GELU in between (none after the last).

    Weights use fan-in scaling (std 1/sqrt(in_dim)) instead of the 0.02 of the
    transformer stack: three 0.02 layers in a row shrink the input signal, and
    its gradient, by about (0.02 sqrt(D))^3.
    """

    def __init__(self, dims: list[int], rng: np.random.Generator):
        self.layers = [Linear(a, b, rng, std=1.0 / np.sqrt(a)) for a, b in zip(dims[:-1], dims[1:])]

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = T.gelu(x)
        return x


class MultiHeadAttention(Module):
    def __init__(self, dim: int, heads: int, rng: np.random.Generator,
                 dropout: float = 0.0, dropout_rng: np.random.Generator | None = None):
        if heads <= 0 or dim % heads:
            raise ValueError(f"model width {dim} is not divisible by head count {heads}")
        self.heads = heads
        self.query = Linear(dim, dim, rng)
        self.key = Linear(dim, dim, rng)
        self.value = Linear(dim, dim, rng)
        self.out = Linear(dim, dim, rng)
        self.dropout = dropout
        self._rng = dropout_rng

    def _split(self, x: Tensor) -> Tensor:
        *lead, n, d = x.shape
        h = self.heads
        x = x.reshape(*lead, n, h, d // h)
        axes = list(range(len(lead))) + [len(lead) + 1, len(lead), len(lead) + 2]
        return x.transpose(axes)

    def _merge(self, x: Tensor) -> Tensor:
        *lead, h, n, dh = x.shape
        axes = list(range(len(lead))) + [len(lead) + 1, len(lead), len(lead) + 2]
        return x.transpose(axes).reshape(*lead, n, h * dh)

    def __call__(self, q_in: Tensor, kv_in: Tensor) -> Tensor:
        q = self._split(self.query(q_in))
        k = self._split(self.key(kv_in))
        v = self._split(self.value(kv_in))
        ctx = self._merge(T.attention(q, k, v))
        out = self.out(ctx)
        return T.dropout(out, self.dropout, self._rng, self.training)


class FeedForward(Module):
    def __init__(self, dim: int, mult: int, rng: np.random.Generator,
                 dropout: float = 0.0, dropout_rng: np.random.Generator | None = None):
        self.fc1 = Linear(dim, mult * dim, rng)
        self.fc2 = Linear(mult * dim, dim, rng)
        self.dropout = dropout
        self._rng = dropout_rng

    def __call__(self, x: Tensor) -> Tensor:
        out = self.fc2(T.gelu(self.fc1(x)))
        return T.dropout(out, self.dropout, self._rng, self.training)


class TransformerLayer(Module):
    """Pre-norm block: ``x + SA(LN(x))`` then ``+ FFN(LN(.))``."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator, ffn_mult: int = 4,
                 dropout: float = 0.0, dropout_rng: np.random.Generator | None = None):
        self.norm1 = LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads, rng, dropout, dropout_rng)
        self.norm2 = LayerNorm(dim)
        self.ffn = FeedForward(dim, ffn_mult, rng, dropout, dropout_rng)

    def __call__(self, x: Tensor) -> Tensor:
        h = self.norm1(x)
        x = x + self.attn(h, h)
        return x + self.ffn(self.norm2(x))


def transformer_layer_param_count(dim: int, ffn_mult: int = 4) -> int:
    """Closed-form parameter count of one :class:`TransformerLayer`."""
    norms = 2 * 2 * dim
    attn = 4 * (dim * dim + dim)
    ffn = 2 * ffn_mult * dim * dim + ffn_mult * dim + dim
    return norms + attn + ffn
