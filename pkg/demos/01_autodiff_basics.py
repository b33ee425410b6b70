"""Tour of the tensor core: rank-4 tensors, the tape, and gradient checking.

Every value in the library is a 4-axis tensor (batch, channel, height,
width).  Ops run eagerly in numpy; wrapping a region in `record()` builds a
tape that `backward` walks once, in reverse, accumulating gradients into
Parameters.
"""

import numpy as np

import ssmfuse as sf
from ssmfuse import ops

# A tensor is constructed from any nested structure with exactly 4 axes.
x = sf.Tensor(np.arange(6.0).reshape(1, 2, 3, 1))
print("shape:", x.shape, "dtype:", x.dtype)

# Elementwise vocabulary, either through named functions or the dispatcher.
print("tanh(0) =", sf.elementwise_map(sf.Tensor(np.zeros((1, 1, 1, 1))),
                                      kind="tanh").item())
a = sf.Tensor(np.array([1.0, 5.0]).reshape(1, 1, 1, 2))
b = sf.Tensor(np.array([4.0, 2.0]).reshape(1, 1, 1, 2))
print("max([1,5],[4,2]) =", sf.elementwise_map(a, b, kind="max").data.ravel())

# Parameters carry a gradient accumulator and a stable name.
p = sf.Parameter(np.array([[3.0]]).reshape(1, 1, 1, 1), "p", dtype=np.float64)

# Record a forward pass, then pull the gradient back: d/dp mean(p*p) = 2p.
with sf.record():
    loss = ops.mean_all(ops.mul(p, p))
    sf.backward(loss)
print("d(p^2)/dp at p=3:", p.grad.ravel()[0])

# The same tape cannot be walked twice; gradients accumulate across tapes.
p.zero_grad()
for _ in range(2):
    with sf.record():
        sf.backward(ops.mean_all(ops.mul(p, p)))
print("two backward passes accumulate:", p.grad.ravel()[0])

# grad_check compares the tape gradient against central finite differences
# for every coordinate and reports the worst relative error.
q = sf.Parameter(np.array([1.0, 2.0]).reshape(1, 1, 1, 2), "q", dtype=np.float64)
err = sf.grad_check(lambda: ops.mean_all(ops.mul(q, q)), [q], epsilon=1e-4)
print("grad_check worst relative error:", err)

# Convolution follows the cross-correlation convention; a 1x1 identity
# kernel reproduces its input exactly.
img = sf.Tensor(np.random.default_rng(0).random((1, 3, 5, 5)))
ident = sf.Tensor(np.eye(3, dtype=np.float32).reshape(3, 3, 1, 1))
print("identity conv matches input:",
      bool(np.allclose(ops.conv2d(img, ident).data, img.data)))
