"""The three training losses and the quality metrics, on analytic cases.

The losses drive the fused image toward structural similarity with both
sources, the pointwise strongest source gradients, and the pointwise source
maximum.  The metrics score a fused result without any reference output.
"""

import numpy as np

import ssmfuse as sf
from ssmfuse.losses import LossWeights, loss_int, loss_text, \
    loss_total, ssim
from ssmfuse.metrics import (avg_gradient, entropy, metrics_report,
                             mutual_information, spatial_frequency, std_dev)

rng = np.random.default_rng(0)
img = lambda a: sf.Tensor(np.asarray(a, dtype=np.float64).reshape(1, 1, *a.shape),
                          dtype=np.float64)

x = rng.random((16, 16))
print("ssim(x, x) =", ssim(img(x), img(x)).item())
i, j = np.indices((16, 16))
board = ((i + j) % 2).astype(np.float64)
print("ssim(board, 1-board) =", ssim(img(board), img(1 - board)).item())

# Fixed points: identical images zero every term.
total, parts = loss_total(img(x), img(x), img(x), LossWeights())
print("identical images -> total %.2e  (ssim %.2e, text %.2e, int %.2e)"
      % (total.item(), parts["ssim"].item(), parts["text"].item(),
         parts["int"].item()))

# The intensity term vanishes exactly on the pointwise maximum...
ir, vi = rng.random((12, 12)), rng.random((12, 12))
print("int loss at the pointwise max:",
      loss_int(img(np.maximum(ir, vi)), img(ir), img(vi)).item())
# ...and the texture term on any fused image matching the stronger gradients.
flat = np.full((12, 12), 0.5)
print("text loss when one source is flat:",
      loss_text(img(ir), img(ir), img(flat)).item())

# Metrics on constructed images with known values.
uniform = np.arange(256, dtype=np.float64).reshape(16, 16)
print("entropy(uniform 256 levels) =", entropy(uniform), "bits")
print("sd(half 0 / half 255) =",
      std_dev(np.concatenate([np.zeros((8, 16)), np.full((8, 16), 255.0)])))
print("sf(checkerboard) =", spatial_frequency(board), "(sqrt 2)")
ramp = np.tile(np.arange(12, dtype=np.float64), (8, 1))
print("ag(unit ramp) =", avg_gradient(ramp), "(1/sqrt 2)")
quant = np.floor(rng.random((32, 32)) * 8) * 30
print("mi(x; x) + mi(x; x) =", mutual_information(quant, quant, quant),
      "= 2 *", entropy(quant))

# The report surface used by the command line.
rows = [(rng.random((16, 16)), rng.random((16, 16)), rng.random((16, 16)))]
print()
print(metrics_report(rows, names=["demo"]))
