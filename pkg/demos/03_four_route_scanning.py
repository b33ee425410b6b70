"""Scanning a 2D map along four routes, and why the cost stays linear.

A feature map flattens into row-major, reversed row-major, column-major and
reversed column-major token orders; each order is scanned independently and
the results realign and sum.  With identity transforms the merge returns
exactly four times the input.
"""

import time

import numpy as np

import ssmfuse as sf
from ssmfuse.ssm import cross_merge, cross_scan, flops_vss, make_vss_params, \
    vss_block
from ssmfuse.tensor import ParamStore

# The four orders on a 2x2 map [[a, b], [c, d]].
tiny = sf.Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2),
                 dtype=np.float64)
for route in cross_scan(tiny):
    print(f"{route.route:13s}", route.tokens.data.ravel())

# Merging the untouched routes sums four aligned copies.
merged = cross_merge(cross_scan(tiny))
print("merge(scan(x)) == 4x:", bool(np.allclose(merged.data, 4 * tiny.data)))

# The full 2D block: norm, inner projection, depthwise conv, the four-route
# scan, a sigmoid gate and a residual path.  Shape in == shape out.
store = ParamStore(np.float32)
params = make_vss_params(store, np.random.default_rng(0), "blk", channels=2,
                         n_state=4)
x = sf.Tensor(np.random.default_rng(1).standard_normal((1, 2, 32, 32)),
              dtype=np.float32)
print("block output shape:", vss_block(x, params).shape)

# Wall-clock scaling: quadrupling the token count should roughly quadruple
# the runtime (a quadratic token mixer would go up sixteenfold).
big = sf.Tensor(np.random.default_rng(2).standard_normal((1, 2, 64, 64)),
                dtype=np.float32)


def median_seconds(t, runs=5):
    times = []
    for _ in range(runs):
        t0 = time.perf_counter()
        vss_block(t, params)
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


median_seconds(x, runs=1)  # warm up
small_t = median_seconds(x)
large_t = median_seconds(big)
print(f"L=1024: {small_t * 1e3:.1f} ms   L=4096: {large_t * 1e3:.1f} ms   "
      f"ratio {large_t / small_t:.2f} (linear would be ~4)")

# The analytic scan cost next to its quadratic replacement at one shape.
scan = flops_vss(1, 512, 512, 32, 16)
attn = 4 * 1 * (512 * 512) ** 2 * 32
print(f"scan core {scan:,} FLOPs vs attention {attn:,.0f} "
      f"(ratio = HW/N = {attn // scan})")
