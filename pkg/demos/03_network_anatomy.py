"""
Inside the sub-networks
=======================

Trace channel widths through the encoder-decoder and the edge network,
look at the Sobel bank the edge network starts from, and inspect one
shifted-window attention layer: the cross-region mask and the fact that
every attention row is a probability distribution.
"""

import numpy as np

from mistnet import edgenet, recformer, unets
from mistnet.diffcore import Tensor, no_grad

rng = np.random.default_rng(0)


def spy(block, label, log):
    inner = block.forward

    def forward(*args, **kwargs):
        out = inner(*args, **kwargs)
        log.append((label, out.shape[1]))
        return out

    block.forward = forward


# encoder-decoder at the large preset: 32 -> 512 and back
net = unets.EncoderDecoder(unets.EncoderDecoderConfig.paper(), seed=0)
print("encoder-decoder parameters: %d" % net.num_parameters())
widths = []
for label, block in net.named_blocks():
    spy(block, label, widths)
with no_grad():
    net(Tensor(rng.standard_normal((1, 1, 32, 32))))
print("level widths:", widths)

# the edge network's first layer is a bank of Sobel filters
image = np.zeros((1, 1, 24, 24))
image[..., 12:] = 1.0
gx, gy, mag, direction = edgenet.sobel_gradients(image)
print("step edge: max |Gx| %.1f, max |Gy| %.1f" % (np.abs(gx).max(), np.abs(gy).max()))
bank = edgenet.sobel_kernels(8, rng)
print("bank kernel sums:", np.round(bank.sum(axis=(1, 2, 3)), 12))

en = edgenet.EdgeNet(32, 8, seed=0)
with no_grad():
    en(Tensor(image))
print("edge net concatenation widths:", en.trace)

# one shifted-window layer on an 8x8 map with 4x4 windows
m, shift = 4, 2
mask = recformer.shift_mask(8, 8, m, shift)
print("mask: %d windows, %d of %d token pairs blocked" % (mask.shape[0], (mask < 0).sum(), mask.size))

layer = recformer.SwinLayer(16, 2, m, shift, 4.0, rng)
seen = []
orig_softmax = recformer.ops.softmax


def keep(x, axis=-1):
    out = orig_softmax(x, axis=axis)
    seen.append(out.data)
    return out


recformer.ops.softmax = keep
with no_grad():
    y = layer(Tensor(rng.standard_normal((1, 8, 8, 16))))
recformer.ops.softmax = orig_softmax
rows = seen[0].sum(axis=-1)
print("attention tensor", seen[0].shape, " row sums in [%.12f, %.12f]" % (rows.min(), rows.max()))

for name in ("T", "S", "B", "L"):
    p = recformer.SwinConfig.preset(name)
    print(f"preset {name}: C={p.embed_dim} M={p.window_size} layers={p.stc_layers} heads={p.heads}")
