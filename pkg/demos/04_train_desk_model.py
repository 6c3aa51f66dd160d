"""
A short training run against the interpolation baseline
=======================================================

Simulate a handful of random ellipse phantoms, train the full pipeline for
a few epochs with Adam, and compare held-out PSNR with linear view
interpolation + FBP. An untrained model reproduces the baseline exactly,
so any gap is learned. The command-line tool runs the same loop at scale
(``mistnet train``).
"""

import time

import numpy as np
from threadpoolctl import threadpool_limits

from mistnet.pipeline import (ModelConfig, MistModel, TrainConfig, baseline, compute_metrics,
                              evaluate, smoothed, train, train_test_split)

threadpool_limits(1)
model_cfg = ModelConfig(variant="MIST")
train_set, test_set = train_test_split(model_cfg, n_train=8, n_test=4, seed=0)
model = MistModel(model_cfg, seed=0)
print("MIST parameters: %d" % model.num_parameters())

before = [r.psnr for r in evaluate(model, test_set)]
base = [compute_metrics(baseline(model, s), s.phantom.array).psnr for s in test_set]
print("untrained equals baseline:", np.allclose(before, base))

t0 = time.time()
result = train(model, TrainConfig(epochs=4, seed=0), train_set)
print("%d steps in %.0f s" % (len(result.losses), time.time() - t0))
curve = smoothed(result.losses)
print("smoothed loss: start %.3e  end %.3e" % (curve[min(7, len(curve) - 1)], curve[-1]))

after = [r.psnr for r in evaluate(result.model, test_set)]
for s, b, a in zip(test_set, base, after):
    print(f"{s.id}  baseline {b:6.2f} dB   MIST {a:6.2f} dB")
print("mean gain %.2f dB" % (np.mean(after) - np.mean(base)))
