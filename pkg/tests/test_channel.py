import numpy as np
import pytest

import ssmfuse as sf
from ssmfuse import ops
from ssmfuse.channel import (channel_exchange_module, channel_reweight,
                             gate_generator, make_channel_exchange_params,
                             residual_gate, ssd_exchange)
from ssmfuse.checks import check_anchored
from ssmfuse.tensor import ContractError, ParamStore, ShapeError


def make_params(channels=2, n_state=4, seed=0, **kw):
    store = ParamStore(np.float64)
    rng = np.random.default_rng(seed)
    p = make_channel_exchange_params(store, rng, "ce", channels, n_state, **kw)
    return store, p


def rand_features(c=2, h=3, w=5, seed=1):
    rng = np.random.default_rng(seed)
    a = sf.Tensor(rng.standard_normal((1, c, h, w)), dtype=np.float64)
    b = sf.Tensor(rng.standard_normal((1, c, h, w)), dtype=np.float64)
    return a, b


def scalarT(v):
    return sf.Tensor(np.full((1, 1, 1, 1), v), dtype=np.float64)


# ---------------------------------------------------------------------------
# the exchange scan


def test_exchange_identical_inputs_shared_projections_variant_invariant():
    store, p = make_params(share_projections=True)
    rng = np.random.default_rng(2)
    f = sf.Tensor(rng.standard_normal((1, 2, 3, 4)), dtype=np.float64)
    outs = {v: ssd_exchange(f, f, p, v) for v in ("mutual", "v1", "v2", "none")}
    base_vi, base_ir = outs["mutual"]
    for v, (ovi, oir) in outs.items():
        assert np.allclose(ovi.data, base_vi.data), v
        assert np.allclose(oir.data, base_ir.data), v
    assert np.allclose(base_vi.data, base_ir.data)


def test_exchange_variant_none_is_two_independent_scans():
    store, p = make_params()
    f_vi, f_ir = rand_features(seed=3)
    vi_none, ir_none = ssd_exchange(f_vi, f_ir, p, "none")
    other = sf.Tensor(np.random.default_rng(9).standard_normal(f_ir.shape),
                      dtype=np.float64)
    vi_again, _ = ssd_exchange(f_vi, other, p, "none")
    assert np.allclose(vi_none.data, vi_again.data)  # vi path ignores ir


def test_exchange_variants_differ_on_distinct_inputs():
    store, p = make_params()
    f_vi, f_ir = rand_features(seed=4)
    outs = {v: ssd_exchange(f_vi, f_ir, p, v) for v in ("mutual", "v1", "v2", "none")}
    assert not np.allclose(outs["mutual"][0].data, outs["none"][0].data)
    assert not np.allclose(outs["v1"][1].data, outs["v2"][1].data)
    # v1 leaves the visible stream on its own maps, v2 leaves the infrared
    assert np.allclose(outs["v1"][0].data, outs["none"][0].data)
    assert np.allclose(outs["v2"][1].data, outs["none"][1].data)
    assert np.allclose(outs["mutual"][0].data, outs["v2"][0].data)
    assert np.allclose(outs["mutual"][1].data, outs["v1"][1].data)


def test_exchange_preserves_shape():
    store, p = make_params(channels=4)
    rng = np.random.default_rng(5)
    f_vi = sf.Tensor(rng.standard_normal((1, 4, 3, 5)), dtype=np.float64)
    f_ir = sf.Tensor(rng.standard_normal((1, 4, 3, 5)), dtype=np.float64)
    ovi, oir = ssd_exchange(f_vi, f_ir, p, "mutual")
    assert ovi.shape == (1, 4, 3, 5) and oir.shape == (1, 4, 3, 5)


def test_exchange_rejects_mismatched_shapes_and_variant():
    store, p = make_params()
    a = sf.Tensor(np.zeros((1, 2, 3, 3)))
    b = sf.Tensor(np.zeros((1, 2, 3, 4)))
    with pytest.raises(ShapeError):
        ssd_exchange(a, b, p, "mutual")
    with pytest.raises(ContractError):
        ssd_exchange(a, a, p, "v3")


# ---------------------------------------------------------------------------
# calibration gate


def test_residual_gate_zero_coeff_saturated_gate():
    store, _ = make_params()
    gw = sf.Parameter(np.zeros((2, 2, 1, 1)), "gw", dtype=np.float64)
    gb = sf.Parameter(np.full((2, 1, 1, 1), 40.0), "gb", dtype=np.float64)
    f_ex, f_in = rand_features(seed=6)
    out = residual_gate(f_ex, f_in, scalarT(0.0), gw, gb)
    assert np.allclose(out.data, f_ex.data, atol=1e-12)


def test_residual_gate_hand_value():
    gw = sf.Parameter(np.zeros((1, 1, 1, 1)), "gw", dtype=np.float64)
    gb = sf.Parameter(np.zeros((1, 1, 1, 1)), "gb", dtype=np.float64)  # gate 0.5
    one = sf.Tensor(np.ones((1, 1, 1, 1)), dtype=np.float64)
    out = residual_gate(one, one, scalarT(1.0), gw, gb)
    assert out.item() == pytest.approx(1.0, abs=1e-12)


def test_residual_gate_disabled_ignores_residual_input():
    rng = np.random.default_rng(7)
    gw = sf.Parameter(rng.standard_normal((2, 2, 1, 1)), "gw", dtype=np.float64)
    gb = sf.Parameter(np.zeros((2, 1, 1, 1)), "gb", dtype=np.float64)
    f_ex, f_in = rand_features(seed=8)
    other = sf.Tensor(rng.standard_normal(f_in.shape), dtype=np.float64)
    a = residual_gate(f_ex, f_in, scalarT(3.7), gw, gb, residual=False)
    b = residual_gate(f_ex, other, scalarT(3.7), gw, gb, residual=False)
    assert np.array_equal(a.data, b.data)


# ---------------------------------------------------------------------------
# blend weight


def test_gate_generator_zero_init_gives_half():
    store, p = make_params()
    f_ir, f_vi = rand_features(seed=9)
    omega = gate_generator(f_ir, f_vi, p)
    assert omega.shape == (1, 2, 1, 1)
    assert np.allclose(omega.data, 0.5)


def test_gate_generator_open_interval():
    store, p = make_params()
    p.omega_w.assign(np.random.default_rng(10).standard_normal(p.omega_w.shape) * 5)
    f_ir, f_vi = rand_features(seed=11)
    omega = gate_generator(f_ir, f_vi, p)
    assert np.all(omega.data > 0.0) and np.all(omega.data < 1.0)


def test_gate_generator_swap_symmetry_at_equal_inputs():
    store, p = make_params()
    p.omega_w.assign(np.random.default_rng(12).standard_normal(p.omega_w.shape))
    f = rand_features(seed=13)[0]
    assert np.array_equal(gate_generator(f, f, p).data,
                          gate_generator(f, f, p).data)


# ---------------------------------------------------------------------------
# reweighting


def test_channel_reweight_hand_values():
    f_ir = scalarT(2.0)
    f_vi = scalarT(4.0)
    ir_c, vi_c = channel_reweight(f_ir, f_vi, scalarT(0.25))
    assert ir_c.item() == pytest.approx(2.5, abs=1e-15)
    assert vi_c.item() == pytest.approx(3.5, abs=1e-15)
    ir_h, vi_h = channel_reweight(f_ir, f_vi, scalarT(0.5))
    assert ir_h.item() == pytest.approx(3.0) and vi_h.item() == pytest.approx(3.0)


def test_channel_reweight_near_zero_weight_is_identity():
    f_ir, f_vi = rand_features(seed=14)
    ir_c, vi_c = channel_reweight(f_ir, f_vi, scalarT(1e-12))
    assert np.allclose(ir_c.data, f_ir.data, atol=1e-10)
    assert np.allclose(vi_c.data, f_vi.data, atol=1e-10)


def test_channel_reweight_preserves_sum():
    rng = np.random.default_rng(15)
    for trial in range(30):
        f_ir, f_vi = rand_features(c=3, seed=100 + trial)
        omega = sf.Tensor(rng.uniform(0.01, 0.99, (1, 3, 1, 1)), dtype=np.float64)
        ir_c, vi_c = channel_reweight(f_ir, f_vi, omega)
        assert np.allclose(ir_c.data + vi_c.data, f_ir.data + f_vi.data, atol=1e-6)


def test_channel_reweight_rejects_out_of_range():
    f_ir, f_vi = rand_features(seed=16)
    with pytest.raises(ContractError):
        channel_reweight(f_ir, f_vi, scalarT(0.0))
    with pytest.raises(ContractError):
        channel_reweight(f_ir, f_vi, scalarT(1.3))


# ---------------------------------------------------------------------------
# whole module


def test_module_disabled_is_identity():
    store, p = make_params()
    f_vi, f_ir = rand_features(seed=17)
    ovi, oir = channel_exchange_module(f_vi, f_ir, p, enabled=False)
    assert ovi is f_vi and oir is f_ir


def test_module_preserves_shapes_and_is_finite():
    for variant in ("mutual", "v1", "v2", "none"):
        for residual in (True, False):
            store, p = make_params(seed=18)
            f_vi, f_ir = rand_features(seed=19)
            ovi, oir = channel_exchange_module(f_vi, f_ir, p, variant, residual)
            assert ovi.shape == f_vi.shape and oir.shape == f_ir.shape
            assert np.all(np.isfinite(ovi.data)) and np.all(np.isfinite(oir.data))


def test_module_zero_gate_init_blend_averages_streams():
    store, p = make_params(seed=20)
    f_vi, f_ir = rand_features(seed=21)
    f_vi_x, f_ir_x = ssd_exchange(f_vi, f_ir, p, "mutual")
    from ssmfuse.channel import _pooled_coeff
    alpha = _pooled_coeff(f_ir, p.alpha_w, p.alpha_b, p.scalar_coeff)
    beta = _pooled_coeff(f_vi, p.beta_w, p.beta_b, p.scalar_coeff)
    f_ir2 = residual_gate(f_ir_x, f_ir, alpha, p.cal_ir_w, p.cal_ir_b)
    f_vi2 = residual_gate(f_vi_x, f_vi, beta, p.cal_vi_w, p.cal_vi_b)
    ovi, oir = channel_exchange_module(f_vi, f_ir, p, "mutual", True)
    assert np.allclose(oir.data, 0.5 * (f_ir2.data + f_vi2.data), atol=1e-12)
    assert np.allclose(ovi.data, 0.5 * (f_ir2.data + f_vi2.data), atol=1e-12)


def test_scalar_coeff_config_builds_and_runs():
    store, p = make_params(seed=22, scalar_coeff=True)
    f_vi, f_ir = rand_features(seed=23)
    ovi, oir = channel_exchange_module(f_vi, f_ir, p)
    assert np.all(np.isfinite(ovi.data))


def test_module_gradient():
    store, p = make_params(seed=24)
    rng = np.random.default_rng(25)
    f_vi = sf.Tensor(rng.standard_normal((1, 2, 4, 4)), dtype=np.float64)
    f_ir = sf.Tensor(rng.standard_normal((1, 2, 4, 4)), dtype=np.float64)
    w = sf.Tensor(rng.standard_normal((1, 2, 4, 4)), dtype=np.float64)

    def f():
        ovi, oir = channel_exchange_module(f_vi, f_ir, p)
        return ops.mean_all(ops.mul(ops.add(ovi, oir), w))

    assert check_anchored(f, store.all()) <= 1e-4
