"""Difference-guided extraction on a synthetic infrared/visible pair.

A weight-shared branch produces comparable features for both modalities;
tanh of their absolute difference becomes a mask in [0, 1) that decides,
pixel by pixel, how strongly each modality's own stream absorbs the other.
Where the modalities agree the mask vanishes and nothing mixes.
"""

import numpy as np

import ssmfuse as sf
from ssmfuse.extract import (diff_guide_mix, diff_mask, extract,
                             make_extract_params, DiffMask)
from ssmfuse.tensor import ParamStore

rng = np.random.default_rng(0)

# A hot blob that only the infrared channel sees, over a shared background.
i, j = np.indices((16, 16))
background = 0.3 + 0.2 * np.sin(j / 3.0)
hot = np.exp(-((i - 5.0) ** 2 + (j - 10.0) ** 2) / 6.0)
ir = np.clip(background + 0.6 * hot, 0, 1)[None, None]
vi_y = np.clip(background, 0, 1)[None, None]
vi = np.repeat(vi_y, 3, axis=1)

store = ParamStore(np.float64)
params = make_extract_params(store, rng, "ex", channels=4, n_state=4, n_stages=2)

# The mask lights up exactly where the modalities disagree.
mask = diff_mask(sf.Tensor(vi_y, dtype=np.float64), sf.Tensor(ir, dtype=np.float64))
m = mask.mask.data[0, 0]
print("mask at blob centre %.3f, far corner %.3f" % (m[5, 10], m[15, 0]))

# The mixing arithmetic, on scalars: mask 0.5, ir stream 0, vi stream 1.
# Sequential mixing updates ir first, then vi sees the updated ir.
s = lambda v: sf.Tensor(np.full((1, 1, 1, 1), v), dtype=np.float64)
ir2, vi2 = diff_guide_mix(s(0.0), s(1.0), DiffMask(s(0.5)), "default")
print("sequential blend:  ir' = %.2f  vi' = %.2f" % (ir2.item(), vi2.item()))
ir2, vi2 = diff_guide_mix(s(0.0), s(1.0), DiffMask(s(0.5)), "v2")
print("parallel blend:    ir' = %.2f  vi' = %.2f" % (ir2.item(), vi2.item()))

# The full extractor: stems, then per stage a shared step, mask, guidance.
f_vi, f_ir = extract(sf.Tensor(ir, dtype=np.float64),
                     sf.Tensor(vi, dtype=np.float64), params, "default")
print("extracted feature shapes:", f_vi.shape, f_ir.shape)

# Guidance modes change the result whenever the mask is non-zero.
for mode in ("default", "v1", "v2", "none"):
    out_vi, _ = extract(sf.Tensor(ir, dtype=np.float64),
                        sf.Tensor(vi, dtype=np.float64), params, mode)
    print(f"mode {mode:8s} visible-stream mean {out_vi.data.mean():+.5f}")
