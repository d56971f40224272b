import numpy as np
import pytest

from manipground import tensor as T
from manipground.nn import (
    INIT_STD, MLP, FeedForward, LayerNorm, Linear, MultiHeadAttention, TransformerLayer,
    transformer_layer_param_count, trunc_normal,
)
from manipground.tensor import Tensor

from conftest import check_grads


def test_trunc_normal_bounds(rng):
    x = trunc_normal(rng, (200, 200))
    assert np.abs(x).max() <= 2 * INIT_STD
    assert abs(x.std() - INIT_STD * 0.88) < 2e-3  # std of a +-2 sigma truncated normal


def test_linear_shape_and_value(rng):
    lin = Linear(3, 5, rng)
    x = rng.normal(size=(2, 4, 3))
    assert np.allclose(lin(Tensor(x)).data, x @ lin.weight.data.T + lin.bias.data, atol=1e-15)


def test_no_decay_flags(rng):
    lin, ln = Linear(3, 5, rng), LayerNorm(5)
    assert not lin.weight.no_decay and lin.bias.no_decay
    assert ln.scale.no_decay and ln.shift.no_decay


@pytest.mark.parametrize("dim,mult", [(8, 4), (16, 2), (64, 4)])
def test_layer_param_count_formula(rng, dim, mult):
    layer = TransformerLayer(dim, 2, rng, ffn_mult=mult)
    assert layer.num_parameters() == transformer_layer_param_count(dim, mult)
    assert transformer_layer_param_count(dim, mult) == (
        4 * dim + 4 * (dim * dim + dim) + 2 * mult * dim * dim + mult * dim + dim)


def test_named_parameters_unique_and_ordered(rng):
    layer = TransformerLayer(8, 2, rng)
    names = [n for n, _ in layer.named_parameters()]
    assert len(names) == len(set(names))
    assert names[:2] == ["norm1.scale", "norm1.shift"] and names[2] == "attn.query.weight"


def test_head_divisibility(rng):
    with pytest.raises(ValueError):
        MultiHeadAttention(10, 3, rng)


def test_single_head_identity_projections_reduce_to_attention(rng):
    mha = MultiHeadAttention(4, 1, rng)
    for lin in (mha.query, mha.key, mha.value, mha.out):
        lin.weight.data[...] = np.eye(4)
        lin.bias.data[...] = 0
    q, kv = rng.normal(size=(3, 4)), rng.normal(size=(5, 4))
    expected = T.attention(Tensor(q), Tensor(kv), Tensor(kv)).data
    assert np.allclose(mha(Tensor(q), Tensor(kv)).data, expected, atol=1e-14)


def test_multi_head_matches_per_head_loop(rng):
    dim, heads = 8, 2
    mha = MultiHeadAttention(dim, heads, rng, dropout=0.0)
    for lin in (mha.query, mha.key, mha.value, mha.out):
        lin.weight.data[...] = rng.normal(size=lin.weight.shape) * 0.3
    x = rng.normal(size=(2, 5, dim))
    q = x @ mha.query.weight.data.T
    k = x @ mha.key.weight.data.T
    v = x @ mha.value.weight.data.T
    dh = dim // heads
    outs = []
    for h in range(heads):
        s = q[..., h * dh:(h + 1) * dh] @ np.swapaxes(k[..., h * dh:(h + 1) * dh], -1, -2) / np.sqrt(dh)
        w = np.exp(s - s.max(-1, keepdims=True))
        w /= w.sum(-1, keepdims=True)
        outs.append(w @ v[..., h * dh:(h + 1) * dh])
    expected = np.concatenate(outs, -1) @ mha.out.weight.data.T
    assert np.allclose(mha(Tensor(x), Tensor(x)).data, expected, atol=1e-13)


def test_zeroed_residual_branches_give_identity(rng):
    layer = TransformerLayer(8, 2, rng)
    layer.attn.out.zero_()
    layer.ffn.fc2.zero_()
    x = rng.normal(size=(2, 5, 8))
    assert np.array_equal(layer(Tensor(x)).data, x)


def test_layer_gradients(rng):
    layer = TransformerLayer(4, 2, rng)
    for p in layer.parameters():
        p.data += rng.normal(0, 0.3, size=p.shape)
    x = Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
    w = rng.normal(size=(2, 3, 4))
    params = [p for n, p in layer.named_parameters() if n != "attn.key.bias"]
    assert check_grads(lambda: (layer(x) * w).sum(), x, *params) < 1e-5
    # softmax ignores a per-row shift, so the key bias gets no gradient
    assert np.abs(layer.attn.key.bias.grad).max() < 1e-15


def test_mlp_and_ffn_shapes(rng):
    assert MLP([4, 6, 3], rng)(Tensor(np.ones((2, 4)))).shape == (2, 3)
    assert FeedForward(4, 4, rng)(Tensor(np.ones((2, 4)))).shape == (2, 4)


def test_dropout_only_in_training(rng):
    mha = MultiHeadAttention(4, 1, rng, dropout=0.5, dropout_rng=np.random.default_rng(0))
    x = Tensor(rng.normal(size=(3, 4)))
    mha.eval()
    a, b = mha(x, x).data, mha(x, x).data
    assert np.array_equal(a, b)
    mha.train()
    assert not np.array_equal(mha(x, x).data, a)
