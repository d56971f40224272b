import numpy as np
import pytest

from manipground.interaction import InteractionStack, interact, interact_single_stream
from manipground.tensor import DimensionError, Tensor

D, HEADS, N, M = 8, 2, 5, 4


@pytest.fixture
def stack(rng):
    s = InteractionStack(D, HEADS, 2, rng)
    # larger weights than the init so cross-modal effects are far above round-off
    for p in s.parameters():
        p.data += rng.normal(0, 0.2, size=p.shape)
    return s


@pytest.fixture
def feats(rng):
    return rng.normal(size=(2, N + 1, D)), rng.normal(size=(2, M + 1, D))


def test_shapes(stack, feats):
    out = interact(stack, Tensor(feats[0]), Tensor(feats[1]))
    assert out.i_cls.shape == (2, D) and out.i_pat.shape == (2, N, D)
    assert out.t_cls.shape == (2, D) and out.t_tok.shape == (2, M, D)


# perturbations are random vectors: a constant shift of a row is removed by LayerNorm
def test_text_perturbation_reaches_image_cls(stack, feats, rng):
    f_i, f_t = feats
    g_t = f_t.copy()
    g_t[:, 2] += rng.normal(size=D)
    a = stack(Tensor(f_i), Tensor(f_t)).i_cls.data
    b = stack(Tensor(f_i), Tensor(g_t)).i_cls.data
    assert np.abs(a - b).max() > 1e-6


def test_image_perturbation_reaches_text_cls(stack, feats, rng):
    f_i, f_t = feats
    g_i = f_i.copy()
    g_i[:, 3] += rng.normal(size=D)
    a = stack(Tensor(f_i), Tensor(f_t)).t_cls.data
    b = stack(Tensor(g_i), Tensor(f_t)).t_cls.data
    assert np.abs(a - b).max() > 1e-6


def test_zeroed_cross_projections_give_independent_stacks(stack, feats, rng):
    f_i, f_t = feats
    stack.zero_cross_outputs()
    full = stack(Tensor(f_i), Tensor(f_t))
    alone = stack.self_only(Tensor(f_i), Tensor(f_t))
    for name in ("i_cls", "i_pat", "t_cls", "t_tok"):
        assert np.array_equal(getattr(full, name).data, getattr(alone, name).data)
    # and the text side no longer depends on the image at all
    other = stack(Tensor(f_i + rng.normal(size=f_i.shape)), Tensor(f_t))
    assert np.array_equal(other.t_tok.data, full.t_tok.data)


def test_single_stream_text_ignores_image(stack, feats, rng):
    f_i, f_t = feats
    a = interact_single_stream(stack, Tensor(f_i), Tensor(f_t))
    b = interact_single_stream(stack, Tensor(f_i + rng.normal(size=f_i.shape)), Tensor(f_t))
    assert np.array_equal(a.t_tok.data, b.t_tok.data)
    assert not np.array_equal(a.i_cls.data, b.i_cls.data)


def test_stack_without_text_cross_attention(rng, feats):
    s = InteractionStack(D, HEADS, 2, rng, text_cross=False)
    assert all(layer.text.ca is None for layer in s.layers)
    names = [n for n, _ in s.named_parameters()]
    assert not any(n.startswith("layers.0.text.ca") for n in names)
    f_i, f_t = feats
    a = s(Tensor(f_i), Tensor(f_t)).t_cls.data
    b = s(Tensor(f_i + rng.normal(size=f_i.shape)), Tensor(f_t)).t_cls.data
    assert np.array_equal(a, b)


def test_patch_permutation_equivariance(stack, rng):
    f_i = rng.normal(size=(N + 1, D))
    f_t = rng.normal(size=(M + 1, D))
    perm = rng.permutation(N)
    g_i = f_i.copy()
    g_i[1:] = f_i[1:][perm]
    a = stack(Tensor(f_i), Tensor(f_t))
    b = stack(Tensor(g_i), Tensor(f_t))
    assert np.allclose(b.i_pat.data, a.i_pat.data[perm], atol=1e-9)
    assert np.allclose(b.t_cls.data, a.t_cls.data, atol=1e-9)


def test_width_mismatch(stack):
    with pytest.raises(DimensionError):
        stack(Tensor(np.zeros((3, D + 1))), Tensor(np.zeros((3, D))))


def test_depth_validation(rng):
    with pytest.raises(ValueError):
        InteractionStack(D, HEADS, 0, rng)
