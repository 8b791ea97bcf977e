# coding: utf-8

# # Reverse-mode gradients with numpy

# Every op records its parents and a backward closure. `backward` sorts the graph once and replays it in reverse.

import numpy as np

from biatt_hatexplain import tensor as T

x = T.Tensor(np.array([[1.0, -2.0, 0.5]]), requires_grad=True, name="x")
w = T.Tensor(np.array([[0.3], [0.1], [-0.4]]), requires_grad=True, name="w")
y = T.sum(T.tanh(T.matmul(x, w)))
tape = T.backward(y)
print("y =", y.item())
print("dy/dw =", w.grad.ravel())
print("nodes replayed:", len(tape.nodes))


# The analytic gradient of tanh(x.w) with respect to w is (1 - tanh^2) x. Compare:

print(np.allclose(w.grad.ravel(), (1 - np.tanh(x.data @ w.data) ** 2).item() * x.data.ravel()))


# A graph can only be replayed once. Build it again for a second pass.

try:
    T.backward(y)
except T.BackwardError as exc:
    print("second backward:", exc)


# # Checking a whole layer against finite differences

# `gradient_check` rebuilds the loss for each nudged entry, so the closure must construct the graph from scratch.

rng = np.random.default_rng(0)
W = T.Tensor(rng.normal(size=(4, 3)), requires_grad=True)
X = rng.normal(size=(5, 4))


def loss():
    h = T.sigmoid(T.matmul(T.Tensor(X), W))
    return T.sum(T.mul(h, h))


print(T.gradient_check(loss, {"W": W}))
