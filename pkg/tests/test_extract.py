import numpy as np
import pytest

import ssmfuse as sf
from ssmfuse import ops
from ssmfuse.extract import (BranchState, DiffMask, diff_guide_mix, diff_mask,
                             extract, guide, make_extract_params, shared_step,
                             stem_embed)
from ssmfuse.tensor import ContractError, ParamStore, ShapeError


def make_params(channels=2, stages=1, seed=0, dtype=np.float64):
    store = ParamStore(dtype)
    rng = np.random.default_rng(seed)
    p = make_extract_params(store, rng, "ex", channels, n_state=4, n_stages=stages)
    return store, p


def rand_pair(h=4, w=4, seed=0, dtype=np.float64):
    rng = np.random.default_rng(seed)
    ir = sf.Tensor(rng.random((1, 1, h, w)), dtype=dtype)
    vi = sf.Tensor(rng.random((1, 3, h, w)), dtype=dtype)
    return ir, vi


def scalarT(v):
    return sf.Tensor(np.full((1, 1, 1, 1), v), dtype=np.float64)


# ---------------------------------------------------------------------------
# stem


def test_stem_shapes_and_determinism():
    store, p = make_params(channels=3)
    ir, vi = rand_pair()
    state = stem_embed(ir, vi, p)
    assert state.vi_self.shape == (1, 3, 4, 4)
    assert state.ir_share.shape == (1, 3, 4, 4)
    again = stem_embed(ir, vi, p)
    assert np.array_equal(state.vi_self.data, again.vi_self.data)


def test_stem_rejects_out_of_range_pixels():
    store, p = make_params()
    ir, vi = rand_pair()
    bad = sf.Tensor(np.full((1, 1, 4, 4), 1.5), dtype=np.float64)
    with pytest.raises(ContractError):
        stem_embed(bad, vi, p)


def test_stem_zero_input_zero_bias_gives_zero():
    store, p = make_params()
    z_ir = sf.Tensor(np.zeros((1, 1, 4, 4)), dtype=np.float64)
    z_vi = sf.Tensor(np.zeros((1, 3, 4, 4)), dtype=np.float64)
    state = stem_embed(z_ir, z_vi, p)
    assert np.all(state.ir_self.data == 0.0)
    assert np.all(state.vi_self.data == 0.0)


def test_stem_identical_content_identical_stems_match():
    # force both stems to the same single-channel-summing kernel
    store, p = make_params(channels=2)
    k = np.zeros_like(p.stem_vi_w.data)
    k[:, 0] = p.stem_ir_w.data[:, 0]
    p.stem_vi_w.assign(k)
    rng = np.random.default_rng(1)
    gray = rng.random((1, 1, 4, 4))
    ir = sf.Tensor(gray, dtype=np.float64)
    vi = sf.Tensor(np.concatenate([gray, np.zeros_like(gray), np.zeros_like(gray)], 1),
                   dtype=np.float64)
    state = stem_embed(ir, vi, p)
    assert np.allclose(state.vi_share.data, state.ir_share.data)


# ---------------------------------------------------------------------------
# shared branch


def test_shared_step_identical_inputs_identical_outputs():
    store, p = make_params()
    rng = np.random.default_rng(2)
    f = sf.Tensor(rng.standard_normal((1, 2, 4, 4)), dtype=np.float64)
    state = BranchState(vi_self=f, ir_self=f, vi_share=f, ir_share=f)
    out = shared_step(state, p.stages[0])
    assert np.array_equal(out.vi_share.data, out.ir_share.data)
    assert out.vi_share.shape == f.shape


def test_shared_step_gradient_doubles_at_symmetric_inputs():
    # the shared weights see both modality paths; at identical inputs the
    # two-path gradient is exactly twice the single-path gradient
    store, p = make_params()
    rng = np.random.default_rng(3)
    f = sf.Tensor(rng.standard_normal((1, 2, 4, 4)), dtype=np.float64)
    state = BranchState(vi_self=f, ir_self=f, vi_share=f, ir_share=f)
    w = p.stages[0].share_conv_w

    w.zero_grad()
    with sf.record():
        out = shared_step(state, p.stages[0])
        sf.backward(ops.mean_all(ops.add(out.vi_share, out.ir_share)))
    both = w.grad.copy()

    w.zero_grad()
    with sf.record():
        out = shared_step(state, p.stages[0])
        sf.backward(ops.mean_all(ops.add(out.vi_share, out.vi_share)))
    single_doubled = w.grad.copy()
    assert np.allclose(both, single_doubled, atol=1e-12)


# ---------------------------------------------------------------------------
# the mask


def test_diff_mask_equal_inputs_zero():
    rng = np.random.default_rng(4)
    f = sf.Tensor(rng.standard_normal((1, 2, 3, 3)), dtype=np.float64)
    assert np.all(diff_mask(f, f).mask.data == 0.0)


def test_diff_mask_values():
    m = diff_mask(scalarT(0.5), scalarT(0.1)).mask.item()
    assert m == pytest.approx(np.tanh(0.4), abs=1e-12)
    m2 = diff_mask(scalarT(3.0), scalarT(0.0)).mask.item()
    assert m2 == pytest.approx(np.tanh(3.0), abs=1e-12)
    assert m2 < 1.0


def test_diff_mask_range_property():
    rng = np.random.default_rng(5)
    for _ in range(50):
        a = sf.Tensor(rng.standard_normal((1, 2, 3, 4)) * 10, dtype=np.float64)
        b = sf.Tensor(rng.standard_normal((1, 2, 3, 4)) * 10, dtype=np.float64)
        m = diff_mask(a, b).mask.data
        assert np.all(m >= 0.0) and np.all(m < 1.0)


def test_diff_mask_shape_mismatch():
    with pytest.raises(ShapeError):
        diff_mask(sf.Tensor(np.zeros((1, 2, 3, 3))), sf.Tensor(np.zeros((1, 2, 3, 4))))


# ---------------------------------------------------------------------------
# guidance


def test_guide_mix_zero_mask_is_identity_all_modes():
    rng = np.random.default_rng(6)
    fi = sf.Tensor(rng.standard_normal((1, 2, 3, 3)), dtype=np.float64)
    fv = sf.Tensor(rng.standard_normal((1, 2, 3, 3)), dtype=np.float64)
    zero = DiffMask(sf.Tensor(np.zeros((1, 2, 3, 3)), dtype=np.float64))
    for mode in ("default", "v1", "v2", "none"):
        ir2, vi2 = diff_guide_mix(fi, fv, zero, mode)
        assert np.allclose(ir2.data, fi.data)
        assert np.allclose(vi2.data, fv.data)


def test_guide_mix_scalar_substitution():
    d = DiffMask(scalarT(0.5))
    ir2, vi2 = diff_guide_mix(scalarT(0.0), scalarT(1.0), d, "default")
    assert ir2.item() == pytest.approx(0.5, abs=1e-15)
    assert vi2.item() == pytest.approx(0.75, abs=1e-15)


def test_guide_mix_saturated_mask_converges_to_visible():
    d = DiffMask(scalarT(1.0 - 1e-12))
    ir2, vi2 = diff_guide_mix(scalarT(0.0), scalarT(1.0), d, "default")
    assert ir2.item() == pytest.approx(1.0, abs=1e-9)
    assert vi2.item() == pytest.approx(1.0, abs=1e-9)


def test_guide_modes_differ_on_random_mask():
    rng = np.random.default_rng(7)
    fi = sf.Tensor(rng.standard_normal((1, 2, 3, 3)), dtype=np.float64)
    fv = sf.Tensor(rng.standard_normal((1, 2, 3, 3)), dtype=np.float64)
    d = DiffMask(sf.Tensor(rng.random((1, 2, 3, 3)) * 0.9 + 0.05, dtype=np.float64))
    outs = {m: diff_guide_mix(fi, fv, d, m) for m in ("default", "v1", "v2")}
    assert not np.allclose(outs["default"][0].data, outs["v1"][0].data)
    assert not np.allclose(outs["default"][1].data, outs["v2"][1].data)
    assert not np.allclose(outs["v1"][0].data, outs["v2"][0].data)


def test_guide_with_zero_mask_is_identity_after_blocks():
    store, p = make_params()
    rng = np.random.default_rng(8)
    f = sf.Tensor(rng.standard_normal((1, 2, 4, 4)), dtype=np.float64)
    state = BranchState(vi_self=f, ir_self=f, vi_share=f, ir_share=f)
    zero = DiffMask(sf.Tensor(np.zeros((1, 2, 4, 4)), dtype=np.float64))
    from ssmfuse.ssm import vss_block
    out = guide(state, zero, "default", p.stages[0])
    assert np.allclose(out.vi_self.data, vss_block(f, p.stages[0].self_vi).data)
    assert np.allclose(out.ir_self.data, vss_block(f, p.stages[0].self_ir).data)


# ---------------------------------------------------------------------------
# the whole extractor


def test_extract_single_stage_equals_manual_composition():
    store, p = make_params(stages=1)
    ir, vi = rand_pair(seed=9)
    got_vi, got_ir = extract(ir, vi, p, "default")
    state = stem_embed(ir, vi, p)
    state = shared_step(state, p.stages[0])
    mask = diff_mask(state.vi_share, state.ir_share)
    state = guide(state, mask, "default", p.stages[0])
    assert np.array_equal(got_vi.data, state.vi_self.data)
    assert np.array_equal(got_ir.data, state.ir_self.data)


def test_extract_identical_modalities_degenerate_mask():
    # same content and matched stems: masks vanish at every stage, so the
    # output equals the per-branch scan stack with no mixing
    store, p = make_params(channels=2, stages=2)
    k = np.zeros_like(p.stem_vi_w.data)
    k[:, 0] = p.stem_ir_w.data[:, 0]
    p.stem_vi_w.assign(k)
    rng = np.random.default_rng(10)
    gray = rng.random((1, 1, 5, 5))
    ir = sf.Tensor(gray, dtype=np.float64)
    vi = sf.Tensor(np.concatenate([gray, np.zeros_like(gray), np.zeros_like(gray)], 1),
                   dtype=np.float64)
    got_vi, got_ir = extract(ir, vi, p, "default")
    pure_vi, pure_ir = extract(ir, vi, p, "none")
    assert np.allclose(got_vi.data, pure_vi.data)
    assert np.allclose(got_ir.data, pure_ir.data)


def test_extract_output_shapes():
    store, p = make_params(channels=3, stages=2)
    ir, vi = rand_pair(h=5, w=6, seed=11)
    f_vi, f_ir = extract(ir, vi, p)
    assert f_vi.shape == (1, 3, 5, 6)
    assert f_ir.shape == (1, 3, 5, 6)


def test_extract_gradient():
    from ssmfuse.checks import check_anchored
    store, p = make_params(channels=2, stages=1)
    ir, vi = rand_pair(seed=12)
    rng = np.random.default_rng(13)
    w = sf.Tensor(rng.standard_normal((1, 2, 4, 4)), dtype=np.float64)

    def f():
        f_vi, f_ir = extract(ir, vi, p, "default")
        return ops.mean_all(ops.mul(ops.add(f_vi, f_ir), w))

    assert check_anchored(f, store.all()) <= 1e-4
