"""
Reverse-mode autodiff on a tiny conv net
========================================

Build a small graph out of the tensor ops, run backward() and compare the
result with central finite differences.
"""

import numpy as np

from mtlseg.tensor import Tensor, backward, conv2d, finite_diff_grad, max_pool2, relu, sigmoid, tensor_sum, upsample2

rng = np.random.default_rng(0)

# a 1x2x4x4 input, one 3x3 conv with 3 output channels, then pool and upsample
x = rng.uniform(-1, 1, size=(1, 2, 4, 4))
w = rng.uniform(-1, 1, size=(3, 2, 3, 3))
b = np.zeros(3)


def net(v):
    h = relu(conv2d(v, w, b, stride=1, padding=1))
    return tensor_sum(sigmoid(upsample2(max_pool2(h))))


# analytic gradient: the tape is walked once in reverse and then discarded
xt = Tensor(x.astype(np.float32), requires_grad=True)
out = net(xt)
backward(out)
print("output:", out.item())
print("analytic d out / d x[0,0]:\n", xt.grad[0, 0])

# numeric gradient, evaluated in double precision
numeric = finite_diff_grad(net, x, eps=1e-3).data
print("numeric  d out / d x[0,0]:\n", numeric[0, 0].round(6))
print("max abs difference:", np.abs(xt.grad - numeric).max())
