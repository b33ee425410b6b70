import time

import numpy as np
import pytest

import ssmfuse as sf
from ssmfuse import ops
from ssmfuse.ssm import (SsmParams, TokenSequence, cross_merge,
                         cross_scan, discretize, flops_vss, make_ssm_params,
                         make_vss_params, selective_scan, vss_block)
from ssmfuse.tensor import ContractError, ParamStore, ShapeError, StabilityError


def scalarT(v, dtype=np.float64):
    return sf.Tensor(np.full((1, 1, 1, 1), v, dtype=dtype))


# ---------------------------------------------------------------------------
# discretization


def test_discretize_hand_values_a1():
    a_bar, b_bar = discretize(scalarT(-1.0), scalarT(1.0), scalarT(np.log(2.0)))
    assert a_bar.item() == pytest.approx(0.5, abs=1e-10)
    assert b_bar.item() == pytest.approx(0.5, abs=1e-10)


def test_discretize_hand_values_a2():
    a_bar, b_bar = discretize(scalarT(-2.0), scalarT(1.0), scalarT(1.0))
    assert a_bar.item() == pytest.approx(np.exp(-2.0), abs=1e-10)
    assert b_bar.item() == pytest.approx(0.5 * (1.0 - np.exp(-2.0)), abs=1e-10)


def test_discretize_taylor_limit():
    # |delta*A| ~ 1e-12 forces the series branch: b_bar -> delta * b
    a_bar, b_bar = discretize(scalarT(-1e-11), scalarT(2.0), scalarT(0.1))
    assert a_bar.item() == pytest.approx(1.0, abs=1e-9)
    assert b_bar.item() == pytest.approx(0.2, rel=1e-9)


def test_discretize_contracts():
    with pytest.raises(StabilityError):
        discretize(scalarT(1.0), scalarT(1.0), scalarT(1.0))
    with pytest.raises(ContractError):
        discretize(scalarT(-1.0), scalarT(1.0), scalarT(-0.5))


def test_discretize_range_property():
    rng = np.random.default_rng(3)
    a = sf.Tensor(-np.abs(rng.standard_normal((3, 4, 1, 1))) - 1e-3, dtype=np.float64)
    b = sf.Tensor(rng.standard_normal((2, 5, 4, 1)), dtype=np.float64)
    d = sf.Tensor(np.abs(rng.standard_normal((2, 5, 3, 1))) + 1e-4, dtype=np.float64)
    a_bar, b_bar = discretize(a, b, d)
    assert np.all(a_bar.data > 0.0) and np.all(a_bar.data < 1.0)
    assert np.all(np.isfinite(b_bar.data))


# ---------------------------------------------------------------------------
# the scan against a brute-force oracle


def naive_selective_scan(x, p: SsmParams):
    """Independent per-step recurrence in plain numpy loops.

    x: (B, L, C) for a single-group parameter set.
    """
    B, L, C = x.shape
    n = p.n_state
    dw = p.delta_w.data[0, :, :, 0]          # (C, C)
    db = p.delta_b.data[0, :, 0, 0]          # (C,)
    bcw = p.bc_w.data[0, :, :, 0]            # (2N, C)
    a = -np.exp(p.a_log.data[0, :, :, 0])    # (C, N)
    skip = p.skip.data[0, :, 0, 0]           # (C,)
    y = np.zeros_like(x)
    for bi in range(B):
        h = np.zeros((C, n))
        for k in range(L):
            tok = x[bi, k]
            delta = np.logaddexp(0.0, dw @ tok + db)      # softplus
            bc = bcw @ tok
            bmat, cmat = bc[:n], bc[n:]
            da = delta[:, None] * a
            a_bar = np.exp(da)
            small = np.abs(da) < 1e-6
            exact = (a_bar - 1.0) / a * bmat[None, :]
            taylor = (delta[:, None] * bmat[None, :]) * (1.0 + 0.5 * da)
            b_bar = np.where(small, taylor, exact)
            h = a_bar * h + b_bar * tok[:, None]
            y[bi, k] = h @ cmat + skip * tok
    return y


def test_selective_scan_matches_oracle_100_instances():
    rng = np.random.default_rng(0)
    worst = 0.0
    for trial in range(100):
        C = int(rng.integers(1, 5))
        n = int(rng.integers(1, 9))
        L = int(rng.integers(1, 65))
        B = int(rng.integers(1, 3))
        store = ParamStore(np.float64)
        p = make_ssm_params(store, rng, f"t{trial}", width=C, n_state=n, groups=1)
        x = rng.standard_normal((B, L, C))
        got = selective_scan(sf.Tensor(x.reshape(B, L, C, 1), dtype=np.float64), p)
        want = naive_selective_scan(x, p)
        worst = max(worst, float(np.abs(got.data[..., 0] - want).max()))
    assert worst <= 1e-6


def test_scan_fixed_coefficient_unroll():
    # h_k = 0.5 h_{k-1} + x_k with C=1, y = h: impulse gives geometric decay
    a = sf.Tensor(np.full((1, 3, 1, 1), 0.5), dtype=np.float64)
    x = sf.Tensor(np.array([1.0, 0.0, 0.0]).reshape(1, 3, 1, 1), dtype=np.float64)
    y = ops.linear_scan(a, x)
    assert np.allclose(y.data.ravel(), [1.0, 0.5, 0.25])


def test_scan_zero_input_stays_zero():
    rng = np.random.default_rng(1)
    store = ParamStore(np.float64)
    p = make_ssm_params(store, rng, "z", width=3, n_state=4, groups=1)
    x = sf.Tensor(np.zeros((2, 6, 3, 1)), dtype=np.float64)
    assert np.all(selective_scan(x, p).data == 0.0)


def test_scan_pure_skip_path():
    a = sf.Tensor(np.zeros((1, 4, 2, 1)), dtype=np.float64)
    b = sf.Tensor(np.zeros((1, 4, 2, 1)), dtype=np.float64)
    h = ops.linear_scan(a, b)
    assert np.all(h.data == 0.0)  # with D=1 the block output would equal x


# ---------------------------------------------------------------------------
# cross scan / merge


def test_cross_scan_2x2_routes():
    vals = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2)
    routes = {r.route: r.tokens.data.ravel().tolist()
              for r in cross_scan(sf.Tensor(vals, dtype=np.float64))}
    assert routes["row_forward"] == [1.0, 2.0, 3.0, 4.0]
    assert routes["row_backward"] == [4.0, 3.0, 2.0, 1.0]
    assert routes["col_forward"] == [1.0, 3.0, 2.0, 4.0]
    assert routes["col_backward"] == [4.0, 2.0, 3.0, 1.0]


def test_cross_scan_degenerate_shapes():
    one = sf.Tensor(np.array([[[[7.0]]]]), dtype=np.float64)
    for r in cross_scan(one):
        assert r.tokens.data.ravel().tolist() == [7.0]
    row = sf.Tensor(np.arange(5.0).reshape(1, 1, 1, 5), dtype=np.float64)
    rs = {r.route: r.tokens.data.ravel().tolist() for r in cross_scan(row)}
    assert rs["col_forward"] == rs["row_forward"]


def test_cross_scan_routes_are_permutations():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((1, 1, 3, 5))
    for r in cross_scan(sf.Tensor(x, dtype=np.float64)):
        assert sorted(r.tokens.data.ravel()) == sorted(x.ravel())


def test_cross_merge_identity_exhaustive_small_shapes():
    rng = np.random.default_rng(4)
    for h in range(1, 9):
        for w in range(1, 9):
            x = sf.Tensor(rng.standard_normal((1, 2, h, w)), dtype=np.float64)
            merged = cross_merge(cross_scan(x))
            assert np.allclose(merged.data, 4.0 * x.data, atol=1e-12)


def test_cross_merge_single_live_route():
    rng = np.random.default_rng(5)
    x = sf.Tensor(rng.standard_normal((1, 2, 3, 4)), dtype=np.float64)
    routes = cross_scan(x)
    zeroed = [TokenSequence(ops.affine(r.tokens, 0.0), r.route, r.origin)
              if i else r for i, r in enumerate(routes)]
    assert np.allclose(cross_merge(zeroed).data, x.data)


def test_cross_merge_rejects_mismatched_origins():
    a = cross_scan(sf.Tensor(np.zeros((1, 1, 2, 3))))
    b = cross_scan(sf.Tensor(np.zeros((1, 1, 3, 2))))
    with pytest.raises(ShapeError):
        cross_merge(a[:2] + b[2:])


# ---------------------------------------------------------------------------
# the 2D block


def test_vss_block_zero_out_projection_is_identity():
    rng = np.random.default_rng(6)
    store = ParamStore(np.float64)
    p = make_vss_params(store, rng, "b", channels=3, n_state=4)
    p.out_w.assign(np.zeros_like(p.out_w.data))
    p.out_b.assign(np.zeros_like(p.out_b.data))
    x = sf.Tensor(rng.standard_normal((2, 3, 4, 5)), dtype=np.float64)
    assert np.allclose(vss_block(x, p).data, x.data)


def test_vss_block_preserves_shape():
    rng = np.random.default_rng(7)
    store = ParamStore(np.float64)
    p = make_vss_params(store, rng, "b", channels=8, n_state=4)
    x = sf.Tensor(rng.standard_normal((2, 8, 5, 7)), dtype=np.float64)
    assert vss_block(x, p).shape == (2, 8, 5, 7)


def test_vss_block_gradient():
    rng = np.random.default_rng(8)
    store = ParamStore(np.float64)
    p = make_vss_params(store, rng, "b", channels=4, n_state=4)
    x = sf.Tensor(rng.standard_normal((1, 4, 4, 4)), dtype=np.float64)
    w = sf.Tensor(rng.standard_normal((1, 4, 4, 4)), dtype=np.float64)
    err = sf.grad_check(lambda: ops.mean_all(ops.mul(vss_block(x, p), w)),
                        store.all(), 1e-4)
    assert err <= 1e-4


def _median_block_seconds(p, x, runs=5):
    times = []
    for _ in range(runs):
        t0 = time.perf_counter()
        vss_block(x, p)
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def test_vss_block_linear_time_in_sequence_length():
    rng = np.random.default_rng(9)
    store = ParamStore(np.float32)
    p = make_vss_params(store, rng, "b", channels=2, n_state=4)
    small = sf.Tensor(rng.standard_normal((1, 2, 32, 32)), dtype=np.float32)   # L=1024
    large = sf.Tensor(rng.standard_normal((1, 2, 64, 64)), dtype=np.float32)   # L=4096
    _median_block_seconds(p, small, runs=1)  # warm caches
    ratio = _median_block_seconds(p, large) / _median_block_seconds(p, small)
    assert ratio <= 6.0, f"time(4L)/time(L) = {ratio:.2f}"


# ---------------------------------------------------------------------------
# flop accounting


def test_flops_vss_values():
    assert flops_vss(1, 512, 512, 32, 16) == 536_870_912
    assert flops_vss(1, 0, 512, 32, 16) == 0
    assert flops_vss(2, 8, 8, 4, 8) == 2 * flops_vss(2, 8, 8, 4, 4)
