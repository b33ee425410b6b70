"""Finite-difference verification suite for every differentiable operation.

Each named check builds a small double-precision scenario and compares tape
gradients against central finite differences.  Single ops use the step 1e-4;
deep compositions use 1e-5, where truncation from their larger third
derivatives stays below the tolerance while roundoff remains negligible.

The relative error metric |a - b| / max(|a|, |b|, 1e-8) blows up on
coordinates whose true gradient is near zero, so composite checks add a
fixed random linear term per parameter, which lifts every coordinate's
gradient to O(1) without touching the nonlinear path under test -- a wrong
backward rule still shows up as an absolute discrepancy far above the
tolerance.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import ops
from .tensor import ParamStore, Parameter, Tensor, grad_check

TOLERANCE = 1e-4


def anchored(loss_fn, params, seed: int = 0):
    """Wrap a scalar objective with sum(p * r) anchors, r ~ U(0.5, 1.5)."""
    rng = np.random.default_rng(seed)
    anchors = [Tensor(rng.uniform(0.5, 1.5, p.shape), dtype=p.data.dtype)
               for p in params]

    def f():
        total = loss_fn()
        for p, r in zip(params, anchors):
            total = ops.add(total, ops.affine(ops.mean_all(ops.mul(p, r)),
                                              float(p.size)))
        return total

    return f


def check_anchored(loss_fn, params, epsilon: float = 1e-5, seed: int = 0) -> float:
    return grad_check(anchored(loss_fn, params, seed), params, epsilon)


@dataclass
class CheckResult:
    name: str
    error: float
    tolerance: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.error <= self.tolerance


def _rand(shape, seed=0):
    return np.random.default_rng(seed).standard_normal(shape)


def primitive_checks() -> dict:
    """name -> (objective, params); every backward rule, one scenario each."""
    P = lambda shape, nm, seed: Parameter(_rand(shape, seed), nm, dtype=np.float64)
    W = lambda shape, seed: Tensor(_rand(shape, seed), dtype=np.float64)
    a = P((2, 3, 4, 5), "a", 1)
    b = P((2, 3, 4, 5), "b", 2)
    bc = P((2, 1, 4, 1), "bc", 3)
    w = W((2, 3, 4, 5), 4)
    pos = Parameter(np.abs(_rand((2, 3, 4, 5), 5)) + 0.5, "pos", dtype=np.float64)
    cases = {
        "add": (lambda: ops.mean_all(ops.mul(ops.add(a, bc), w)), [a, bc]),
        "sub": (lambda: ops.mean_all(ops.mul(ops.sub(a, bc), w)), [a, bc]),
        "mul": (lambda: ops.mean_all(ops.mul(ops.mul(a, bc), w)), [a, bc]),
        "div": (lambda: ops.mean_all(ops.mul(ops.div(a, pos), w)), [a, pos]),
        "max": (lambda: ops.mean_all(ops.mul(ops.maximum(a, b), w)), [a, b]),
        "abs": (lambda: ops.mean_all(ops.mul(ops.absolute(a), w)), [a]),
        "tanh": (lambda: ops.mean_all(ops.mul(ops.tanh(a), w)), [a]),
        "sigmoid": (lambda: ops.mean_all(ops.mul(ops.sigmoid(a), w)), [a]),
        "softplus": (lambda: ops.mean_all(ops.mul(ops.softplus(a), w)), [a]),
        "exp": (lambda: ops.mean_all(ops.mul(ops.exp(a), w)), [a]),
        "sqrt": (lambda: ops.mean_all(ops.mul(ops.sqrt(pos), w)), [pos]),
        "affine": (lambda: ops.mean_all(ops.mul(ops.affine(a, -1.7, 0.3), w)), [a]),
        "sum_axes": (lambda: ops.mean_all(ops.mul(ops.sum_axes(a, (1, 3)),
                                                  W((2, 1, 4, 1), 9))), [a]),
        "reshape": (lambda: ops.mean_all(ops.mul(ops.reshape(a, (3, 2, 5, 4)),
                                                 W((3, 2, 5, 4), 10))), [a]),
        "permute": (lambda: ops.mean_all(ops.mul(ops.permute(a, (2, 0, 3, 1)),
                                                 W((4, 2, 5, 3), 11))), [a]),
        "flip": (lambda: ops.mean_all(ops.mul(ops.flip(a, 2), w)), [a]),
        "concat": (lambda: ops.mean_all(ops.mul(ops.concat([a, b], 1),
                                                W((2, 6, 4, 5), 12))), [a, b]),
        "narrow": (lambda: ops.mean_all(ops.mul(ops.narrow(a, 3, 1, 3),
                                                W((2, 3, 4, 3), 13))), [a]),
        "stride_slice": (lambda: ops.mean_all(ops.mul(ops.stride_slice(a, 3, 1, 2),
                                                      W((2, 3, 4, 2), 14))), [a]),
        "interleave": (lambda: ops.mean_all(ops.mul(ops.interleave(a, b, 1),
                                                    W((2, 6, 4, 5), 15))), [a, b]),
        "repeat_axis": (lambda: ops.mean_all(ops.mul(ops.repeat_axis(a, 2, 3),
                                                     W((2, 3, 12, 5), 16))), [a]),
        "pad_reflect": (lambda: ops.mean_all(ops.mul(ops.pad_reflect(a, 2),
                                                     W((2, 3, 8, 9), 24))), [a]),
        "avg_pool2": (lambda: ops.mean_all(ops.mul(ops.avg_pool2(a),
                                                   W((2, 3, 2, 2), 25))), [a]),
        "upsample2": (lambda: ops.mean_all(ops.mul(ops.upsample2(a, (7, 9)),
                                                   W((2, 3, 7, 9), 26))), [a]),
    }
    mask = _rand((2, 3, 4, 5), 8) > 0
    cases["where_mask"] = (lambda: ops.mean_all(ops.mul(ops.where_mask(mask, a, b),
                                                        w)), [a, b])
    lw = P((3, 6, 5, 1), "lw", 17)
    lb = P((3, 6, 1, 1), "lb", 18)
    xl = P((2, 4, 3, 5), "xl", 19)
    cases["linear"] = (lambda: ops.mean_all(ops.mul(ops.linear(xl, lw, lb),
                                                    W((2, 4, 3, 6), 20))), [xl, lw, lb])
    kc = P((4, 3, 3, 3), "kc", 21)
    cases["conv2d"] = (lambda: ops.mean_all(ops.mul(ops.conv2d(a, kc, padding=1),
                                                    W((2, 4, 4, 5), 22))), [a, kc])
    kd = P((3, 1, 3, 3), "kd", 23)
    cases["conv2d_depthwise"] = (lambda: ops.mean_all(ops.mul(
        ops.conv2d(a, kd, padding=1, groups=3), w)), [a, kd])
    ks = P((2, 3, 3, 3), "ks", 30)
    xs = P((1, 3, 7, 7), "xs", 31)
    cases["conv2d_strided"] = (lambda: ops.mean_all(ops.mul(
        ops.conv2d(xs, ks, stride=2, padding=1), W((1, 2, 4, 4), 32))), [xs, ks])
    sa = Parameter(np.abs(_rand((2, 6, 3, 4), 27)) * 0.4 + 0.2, "sa", dtype=np.float64)
    sb = P((2, 6, 3, 4), "sb", 28)
    cases["linear_scan"] = (lambda: ops.mean_all(ops.mul(ops.linear_scan(sa, sb),
                                                         W((2, 6, 3, 4), 29))), [sa, sb])
    g = P((1, 3, 1, 1), "g", 33)
    be = P((1, 3, 1, 1), "be", 34)
    cases["channel_layernorm"] = (lambda: ops.mean_all(ops.mul(
        ops.channel_layernorm(a, g, be), w)), [a, g, be])
    return cases


def composite_checks() -> dict:
    """name -> (objective, params); block-level and model-level scenarios."""
    from .channel import channel_exchange_module, make_channel_exchange_params
    from .extract import extract, make_extract_params
    from .losses import loss_int, loss_ssim, loss_text, loss_total
    from .model import ModelConfig, build_model, luminance_target
    from .spatial import (decode, make_decoder_params, make_spatial_params,
                          multi_scale_fuse)
    from .ssm import discretize, make_ssm_params, make_vss_params, \
        selective_scan, vss_block

    rng = np.random.default_rng(40)
    cases = {}

    # discretization
    aye = Parameter(-np.abs(_rand((3, 4, 1, 1), 41)) - 0.2, "aye", dtype=np.float64)
    bee = Parameter(_rand((1, 5, 4, 1), 42), "bee", dtype=np.float64)
    dee = Parameter(np.abs(_rand((1, 5, 3, 1), 43)) * 0.4 + 0.05, "dee",
                    dtype=np.float64)
    wd = Tensor(_rand((1, 5, 3, 4), 44), dtype=np.float64)

    def f_disc():
        a_bar, b_bar = discretize(aye, bee, dee)
        return ops.mean_all(ops.mul(ops.add(a_bar, b_bar), wd))

    cases["discretize"] = (f_disc, [aye, bee, dee])

    st_scan = ParamStore(np.float64)
    sp = make_ssm_params(st_scan, rng, "scan", width=3, n_state=4, groups=1)
    x_scan = Parameter(_rand((1, 9, 3, 1), 45), "x_scan", dtype=np.float64)
    w_scan = Tensor(_rand((1, 9, 3, 1), 46), dtype=np.float64)
    cases["selective_scan"] = (
        lambda: ops.mean_all(ops.mul(selective_scan(x_scan, sp), w_scan)),
        [x_scan] + st_scan.all())

    st_vss = ParamStore(np.float64)
    vp = make_vss_params(st_vss, rng, "vss", channels=4, n_state=4)
    x_vss = Tensor(_rand((1, 4, 4, 4), 47), dtype=np.float64)
    w_vss = Tensor(_rand((1, 4, 4, 4), 48), dtype=np.float64)
    cases["vss_block"] = (
        lambda: ops.mean_all(ops.mul(vss_block(x_vss, vp), w_vss)), st_vss.all())

    st_ex = ParamStore(np.float64)
    xp = make_extract_params(st_ex, rng, "ex", channels=2, n_state=4, n_stages=1)
    ir_px = Tensor(np.random.default_rng(49).random((1, 1, 4, 4)), dtype=np.float64)
    vi_px = Tensor(np.random.default_rng(50).random((1, 3, 4, 4)), dtype=np.float64)
    w_ex = Tensor(_rand((1, 2, 4, 4), 51), dtype=np.float64)

    def f_extract():
        f_vi, f_ir = extract(ir_px, vi_px, xp, "default")
        return ops.mean_all(ops.mul(ops.add(f_vi, f_ir), w_ex))

    cases["extract"] = (f_extract, st_ex.all())

    st_ce = ParamStore(np.float64)
    cep = make_channel_exchange_params(st_ce, rng, "ce", channels=2, n_state=4)
    fvi = Tensor(_rand((1, 2, 4, 4), 52), dtype=np.float64)
    fir = Tensor(_rand((1, 2, 4, 4), 53), dtype=np.float64)
    w_ce = Tensor(_rand((1, 2, 4, 4), 54), dtype=np.float64)

    def f_channel():
        ovi, oir = channel_exchange_module(fvi, fir, cep)
        return ops.mean_all(ops.mul(ops.add(ovi, oir), w_ce))

    cases["channel_exchange"] = (f_channel, st_ce.all())

    st_sp = ParamStore(np.float64)
    spp = make_spatial_params(st_sp, rng, "sp", channels=2, n_state=4, scale_count=2)
    dpp = make_decoder_params(st_sp, rng, "dec", channels=2)
    m_ir = Tensor(_rand((1, 2, 4, 4), 55), dtype=np.float64)
    m_vi = Tensor(_rand((1, 2, 4, 4), 56), dtype=np.float64)
    w_sp = Tensor(_rand((1, 1, 4, 4), 57), dtype=np.float64)

    def f_spatial():
        return ops.mean_all(ops.mul(decode(multi_scale_fuse(m_ir, m_vi, spp), dpp),
                                    w_sp))

    cases["spatial_decode"] = (f_spatial, st_sp.all())

    # losses w.r.t. the fused image
    fused = Parameter(np.random.default_rng(58).random((1, 1, 12, 12)), "fused",
                      dtype=np.float64)
    ir_img = Tensor(np.random.default_rng(59).random((1, 1, 12, 12)), dtype=np.float64)
    vi_img = Tensor(np.random.default_rng(60).random((1, 1, 12, 12)), dtype=np.float64)
    cases["loss_ssim"] = (lambda: loss_ssim(fused, ir_img, vi_img), [fused])
    cases["loss_text"] = (lambda: loss_text(fused, ir_img, vi_img), [fused])
    cases["loss_int"] = (lambda: loss_int(fused, ir_img, vi_img), [fused])

    # the end-to-end model through the full training loss
    cfg = ModelConfig(channels=2, state_dim=4, stages=1, scale_count=1,
                      ssim_window=7, dtype="float64", seed=8,
                      lambda_ssim=1.0, lambda_text=10.0, lambda_int=10.0)
    model = build_model(cfg)
    rng_px = np.random.default_rng(61)
    ir8 = rng_px.random((1, 1, 8, 8))
    vi8 = rng_px.random((1, 3, 8, 8))
    ir_t = Tensor(ir8, dtype=np.float64)
    tgt = Tensor(luminance_target(vi8), dtype=np.float64)
    vi_t = Tensor(vi8, dtype=np.float64)

    def f_model():
        out = model.forward(ir_t, vi_t)
        total, _ = loss_total(out, ir_t, tgt, cfg.loss_weights(),
                              window=cfg.ssim_window)
        return total

    cases["model_with_loss"] = (f_model, model.parameters())
    return cases


def run_gradient_suite(report=None) -> list[CheckResult]:
    """Run every named check; returns results (primitives first)."""
    results = []
    for name, (f, params) in primitive_checks().items():
        t0 = time.perf_counter()
        err = grad_check(f, params, 1e-4)
        results.append(CheckResult(name, err, TOLERANCE, time.perf_counter() - t0))
        if report:
            r = results[-1]
            report(f"{'pass' if r.passed else 'FAIL'}\t{r.name}\t{r.error:.3e}"
                   f"\t{r.seconds:.1f}s")
    for name, (f, params) in composite_checks().items():
        t0 = time.perf_counter()
        err = check_anchored(f, params)
        results.append(CheckResult(name, err, TOLERANCE, time.perf_counter() - t0))
        if report:
            r = results[-1]
            report(f"{'pass' if r.passed else 'FAIL'}\t{r.name}\t{r.error:.3e}"
                   f"\t{r.seconds:.1f}s")
    return results
