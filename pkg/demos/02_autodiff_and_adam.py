"""
Reverse-mode autodiff from the ground up
========================================

Tensors record the ops that made them, ``backward`` walks the graph in
reverse, and central differences confirm the result. Then Adam fits a
tiny convolution to a known kernel.
"""

import numpy as np

from mistnet.diffcore import (Adam, Parameter, Tensor, backward, check_gradients, conv2d, mse,
                              no_grad, ops, relu)

rng = np.random.default_rng(0)

# a small composite: conv -> relu -> softmax over channels -> mean
x = Tensor(rng.standard_normal((1, 2, 6, 6)))
w = Parameter(rng.standard_normal((3, 2, 3, 3)) * 0.5)
b = Parameter(rng.standard_normal(3) * 0.1)


def loss():
    h = relu(conv2d(x, w, b, padding=1))
    return ops.mean(ops.softmax(h, axis=1) * h)


out = loss()
backward(out)
print("loss %.6f" % float(out.data))
print("dL/dw shape", w.grad.shape, " |dL/dw|max %.3e" % np.abs(w.grad).max())

err = check_gradients(loss, [w, b], h=1e-6)
print("worst relative error vs central differences: %.2e" % err)

# fit a conv to reproduce a horizontal Sobel filter
target_kernel = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])[None, None]
images = [Tensor(rng.standard_normal((1, 1, 16, 16))) for _ in range(8)]
with no_grad():
    targets = [conv2d(im, Tensor(target_kernel)) for im in images]

kernel = Parameter(rng.standard_normal((1, 1, 3, 3)) * 0.1)
opt = Adam([kernel], lr=0.05)
for step in range(121):
    total = 0.0
    for im, tg in zip(images, targets):
        opt.zero_grad()
        l = mse(conv2d(im, kernel), tg)
        backward(l)
        opt.step()
        total += float(l.data)
    if step % 30 == 0:
        print(f"step {step:3d}  mean loss {total / len(images):.3e}")

print("learned kernel:\n", np.round(kernel.data[0, 0], 3))
