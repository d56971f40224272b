# ---
# jupyter:
#   jupytext:
#     formats: py:light
#     text_representation:
#       extension: .py
#       format_name: light
# ---

# # Tensors, gradients and attention
#
# Everything in `manipground` runs on a small reverse-mode autodiff core over
# float64 numpy arrays. This walkthrough builds a few expressions, checks a
# gradient against finite differences and looks at scaled dot-product attention.

import numpy as np

from manipground import tensor as T
from manipground.tensor import Tensor

rng = np.random.default_rng(0)

# A leaf that requires gradients, a small expression, and `backward()`.

x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
loss = (T.gelu(x) * x).sum()
loss.backward()
print("loss", loss.item())
print("grad\n", x.grad)

# Central differences agree with the tape to round-off.

eps = 1e-6
i, j = 1, 2
bumped = x.data.copy()
bumped[i, j] += eps
up = (T.gelu(Tensor(bumped)) * Tensor(bumped)).sum().item()
bumped[i, j] -= 2 * eps
down = (T.gelu(Tensor(bumped)) * Tensor(bumped)).sum().item()
print("analytic", x.grad[i, j], "numeric", (up - down) / (2 * eps))

# A graph can only be consumed once.

try:
    loss.backward()
except T.GraphError as exc:
    print("second backward:", exc)

# ## Attention
#
# `attention(q, k, v)` is `softmax(q k^T / sqrt(d)) v`. With a single key
# the output is that key's value row, whatever the queries are.

q = Tensor(rng.normal(size=(3, 4)))
k = Tensor(rng.normal(size=(1, 4)))
v = Tensor(rng.normal(size=(1, 4)))
print(T.attention(q, k, v).data)

# Softmax rows sum to one and ignore a constant shift.

s = T.softmax_rows(Tensor([[1.0, 2.0, 3.0]]))
print(s.data, s.data.sum())
print(T.softmax_rows(Tensor([[101.0, 102.0, 103.0]])).data)
