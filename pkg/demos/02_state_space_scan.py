"""The scan core: zero-order-hold discretization and the selective scan.

A diagonal continuous system (A, B) becomes a discrete recurrence
h_k = a_bar * h_{k-1} + b_bar * x_k through a per-token timescale; the
selective scan derives the timescale and both state maps from the tokens
themselves, which keeps the whole thing linear in sequence length.
"""

import numpy as np

import ssmfuse as sf
from ssmfuse import ops
from ssmfuse.ssm import discretize, make_ssm_params, selective_scan
from ssmfuse.tensor import ParamStore


def scalar(v):
    return sf.Tensor(np.full((1, 1, 1, 1), v), dtype=np.float64)


# Hand-checkable discretizations.  With A = -1 and timescale ln 2 the decay
# factor is exactly one half, and the input factor works out to one half too.
a_bar, b_bar = discretize(scalar(-1.0), scalar(1.0), scalar(np.log(2.0)))
print("A=-1, dt=ln2  ->  a_bar=%.4f  b_bar=%.4f" % (a_bar.item(), b_bar.item()))

a_bar, b_bar = discretize(scalar(-2.0), scalar(1.0), scalar(1.0))
print("A=-2, dt=1    ->  a_bar=%.4f  b_bar=%.4f" % (a_bar.item(), b_bar.item()))

# Near dt*A = 0 the exact expression cancels catastrophically, so the
# implementation switches to its Taylor form: b_bar -> dt * B.
a_bar, b_bar = discretize(scalar(-1e-11), scalar(2.0), scalar(0.1))
print("dt*A ~ 1e-12  ->  b_bar=%.6f (Taylor branch, expect 0.2)" % b_bar.item())

# The recurrence itself: a fixed decay of 0.5 on a unit impulse yields the
# geometric sequence 1, 0.5, 0.25, ...
decay = sf.Tensor(np.full((1, 5, 1, 1), 0.5), dtype=np.float64)
impulse = sf.Tensor(np.array([1.0, 0, 0, 0, 0]).reshape(1, 5, 1, 1),
                    dtype=np.float64)
print("impulse response:", ops.linear_scan(decay, impulse).data.ravel())

# Full selectivity: timescales and state maps are projections of the input.
store = ParamStore(np.float64)
rng = np.random.default_rng(0)
params = make_ssm_params(store, rng, "demo", width=3, n_state=4, groups=1)
tokens = sf.Tensor(rng.standard_normal((1, 12, 3, 1)), dtype=np.float64)
y = selective_scan(tokens, params)
print("selective scan keeps shape:", tokens.shape, "->", y.shape)

# Against a brute-force per-step evaluation (independent numpy loops).
x = tokens.data[..., 0]
h = np.zeros((3, 4))
y0 = np.zeros_like(x)
dw = params.delta_w.data[0, :, :, 0]
db = params.delta_b.data[0, :, 0, 0]
bcw = params.bc_w.data[0, :, :, 0]
a = -np.exp(params.a_log.data[0, :, :, 0])
for k in range(12):
    tok = x[0, k]
    delta = np.logaddexp(0.0, dw @ tok + db)
    bc = bcw @ tok
    da = delta[:, None] * a
    h = np.exp(da) * h + (np.exp(da) - 1.0) / a * bc[None, :4] * tok[:, None]
    y0[0, k] = h @ bc[4:] + params.skip.data[0, :, 0, 0] * tok
print("max gap to the naive recurrence:", np.abs(y0 - y.data[..., 0]).max())
