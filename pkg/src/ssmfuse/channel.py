"""Cross-modal channel exchange.

Token streams from the two modalities are projected and split into a value
part plus the two per-token state maps of a selective scan; the state maps
are swapped between modalities before each stream is reprojected, scanned
and merged back to a spatial map.  A gated calibration with a pooled
residual coefficient and a learned convex channel blend follow.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .ssm import SsmParams, _scan_grouped, _stack_routes, _unstack_routes, \
    cross_merge, cross_scan, make_ssm_params
from .tensor import ContractError, ParamStore, Parameter, ShapeError, Tensor

EXCHANGE_VARIANTS = ("mutual", "v1", "v2", "none")


@dataclass
class ExchangeStream:
    """Per-modality projections around the four-route exchange scan."""
    in_w: Parameter   # (4, 2C+2N, C, 1): token -> value(2C) + state maps(2N)
    re_w: Parameter   # (4, C, 2C+2N, 1): recombined triple -> scan width
    scan: SsmParams   # groups=4, width=C


@dataclass
class ChannelExchangeParams:
    vi: ExchangeStream
    ir: ExchangeStream          # same object as vi when projections are shared
    shared: bool
    scalar_coeff: bool
    alpha_w: Parameter          # residual coefficient generators (or scalars)
    alpha_b: Parameter
    beta_w: Parameter
    beta_b: Parameter
    cal_ir_w: Parameter         # sigmoid calibration projections
    cal_ir_b: Parameter
    cal_vi_w: Parameter
    cal_vi_b: Parameter
    omega_w: Parameter          # blend weight generator, zero-initialized
    omega_b: Parameter
    channels: int


def _uniform(rng, shape, scale):
    return (rng.random(shape) * 2.0 - 1.0) * scale


def _make_stream(store, rng, prefix, c, n) -> ExchangeStream:
    width = 2 * c + 2 * n
    return ExchangeStream(
        in_w=store.make(f"{prefix}.in_w", _uniform(rng, (4, width, c, 1), c ** -0.5)),
        re_w=store.make(f"{prefix}.re_w",
                        _uniform(rng, (4, c, width, 1), width ** -0.5)),
        scan=make_ssm_params(store, rng, f"{prefix}.scan", c, n, groups=4))


def make_channel_exchange_params(store: ParamStore, rng, prefix: str,
                                 channels: int, n_state: int,
                                 share_projections: bool = False,
                                 scalar_coeff: bool = False) -> ChannelExchangeParams:
    c = channels
    vi = _make_stream(store, rng, f"{prefix}.vi", c, n_state)
    ir = vi if share_projections else _make_stream(store, rng, f"{prefix}.ir", c, n_state)
    if scalar_coeff:
        alpha_w = store.make(f"{prefix}.alpha", np.ones((1, 1, 1, 1)))
        alpha_b = store.make(f"{prefix}.alpha_unused", np.zeros((1, 1, 1, 1)))
        beta_w = store.make(f"{prefix}.beta", np.ones((1, 1, 1, 1)))
        beta_b = store.make(f"{prefix}.beta_unused", np.zeros((1, 1, 1, 1)))
    else:
        alpha_w = store.make(f"{prefix}.alpha_w", _uniform(rng, (c, c, 1, 1), c ** -0.5))
        alpha_b = store.make(f"{prefix}.alpha_b", np.full((c, 1, 1, 1), 1.0))
        beta_w = store.make(f"{prefix}.beta_w", _uniform(rng, (c, c, 1, 1), c ** -0.5))
        beta_b = store.make(f"{prefix}.beta_b", np.full((c, 1, 1, 1), 1.0))
    return ChannelExchangeParams(
        vi=vi, ir=ir, shared=share_projections, scalar_coeff=scalar_coeff,
        alpha_w=alpha_w, alpha_b=alpha_b, beta_w=beta_w, beta_b=beta_b,
        cal_ir_w=store.make(f"{prefix}.cal_ir_w", _uniform(rng, (c, c, 1, 1), c ** -0.5)),
        cal_ir_b=store.make(f"{prefix}.cal_ir_b", np.zeros((c, 1, 1, 1))),
        cal_vi_w=store.make(f"{prefix}.cal_vi_w", _uniform(rng, (c, c, 1, 1), c ** -0.5)),
        cal_vi_b=store.make(f"{prefix}.cal_vi_b", np.zeros((c, 1, 1, 1))),
        # zero init: the blend starts as an unbiased 0.5/0.5 average
        omega_w=store.make(f"{prefix}.omega_w", np.zeros((c, 2 * c, 1, 1))),
        omega_b=store.make(f"{prefix}.omega_b", np.zeros((c, 1, 1, 1))),
        channels=c)


# ---------------------------------------------------------------------------
# the exchange scan


def ssd_exchange(f_vi: Tensor, f_ir: Tensor, params: ChannelExchangeParams,
                 variant: str = "mutual"):
    """Swap per-token state maps between modality scans.

    Per route: cross-scan both maps, project each token stream and split it
    into a value part and the (input, output) state maps; recombine per
    variant (mutual swaps both directions, v1 pushes the visible maps into
    the infrared scan only, v2 the reverse, none keeps own); reproject the
    triple to scan width, scan, merge.  Returns (f_vi', f_ir').
    """
    if variant not in EXCHANGE_VARIANTS:
        raise ContractError(f"unknown exchange variant {variant!r}")
    if f_vi.shape != f_ir.shape:
        raise ShapeError(f"ssd_exchange: shapes differ {f_vi.shape} vs {f_ir.shape}")
    B, C, H, W = f_vi.shape
    if C != params.channels:
        raise ShapeError(f"ssd_exchange: {C} channels, params built for "
                         f"{params.channels}")
    n = params.vi.scan.n_state

    def split(feature, stream):
        stacked = _stack_routes(cross_scan(feature))       # (B, L, 4, C)
        proj = ops.linear(stacked, stream.in_w)            # (B, L, 4, 2C+2N)
        return (ops.narrow(proj, 3, 0, 2 * C),
                ops.narrow(proj, 3, 2 * C, n),
                ops.narrow(proj, 3, 2 * C + n, n))

    x_vi, b_vi, c_vi = split(f_vi, params.vi)
    x_ir, b_ir, c_ir = split(f_ir, params.ir)

    if variant == "mutual":
        vi_triple = (x_vi, b_ir, c_ir)
        ir_triple = (x_ir, b_vi, c_vi)
    elif variant == "v1":
        vi_triple = (x_vi, b_vi, c_vi)
        ir_triple = (x_ir, b_vi, c_vi)
    elif variant == "v2":
        vi_triple = (x_vi, b_ir, c_ir)
        ir_triple = (x_ir, b_ir, c_ir)
    else:
        vi_triple = (x_vi, b_vi, c_vi)
        ir_triple = (x_ir, b_ir, c_ir)

    def rescan(triple, stream):
        fused = ops.concat(list(triple), axis=3)
        tokens = ops.linear(fused, stream.re_w)            # (B, L, 4, C)
        y = _scan_grouped(tokens, stream.scan)
        return cross_merge(_unstack_routes(y, (H, W)))

    return rescan(vi_triple, params.vi), rescan(ir_triple, params.ir)


# ---------------------------------------------------------------------------
# calibration and reweighting


def residual_gate(f_ex: Tensor, f_in: Tensor, coeff: Tensor, gate_w: Parameter,
                  gate_b: Parameter, residual: bool = True) -> Tensor:
    """(f_ex + coeff * f_in) gated by a sigmoid channel projection of f_ex.

    With residual disabled the coeff term is dropped and the output no
    longer depends on f_in.
    """
    if f_ex.shape != f_in.shape:
        raise ShapeError(f"residual_gate: shapes differ {f_ex.shape} vs {f_in.shape}")
    c = f_ex.shape[1]
    gate = ops.sigmoid(ops.add(ops.conv2d(f_ex, gate_w),
                               ops.reshape(gate_b, (1, c, 1, 1))))
    base = ops.add(f_ex, ops.mul(f_in, coeff)) if residual else f_ex
    return ops.mul(base, gate)


def _pooled_coeff(feature, w, b, scalar: bool):
    if scalar:
        return w  # a single learned scalar, broadcast over (B, C, 1, 1)
    c = feature.shape[1]
    return ops.add(ops.conv2d(ops.spatial_mean(feature), w),
                   ops.reshape(b, (1, c, 1, 1)))


def gate_generator(f_ir_e: Tensor, f_vi_e: Tensor,
                   params: ChannelExchangeParams) -> Tensor:
    """Per-(batch, channel) blend weight in (0, 1) from pooled features."""
    if f_ir_e.shape != f_vi_e.shape:
        raise ShapeError("gate_generator: shapes differ "
                         f"{f_ir_e.shape} vs {f_vi_e.shape}")
    c = params.channels
    pooled = ops.concat([ops.spatial_mean(f_ir_e), ops.spatial_mean(f_vi_e)], axis=1)
    return ops.sigmoid(ops.add(ops.conv2d(pooled, params.omega_w),
                               ops.reshape(params.omega_b, (1, c, 1, 1))))


def channel_reweight(f_ir2: Tensor, f_vi2: Tensor, omega: Tensor):
    """Convex per-channel blend; the stream sum is preserved exactly."""
    if np.any(omega.data <= 0.0) or np.any(omega.data >= 1.0):
        raise ContractError("channel_reweight: blend weight must lie in (0, 1)")
    keep = ops.affine(omega, -1.0, 1.0)
    f_ir_c = ops.add(ops.mul(keep, f_ir2), ops.mul(omega, f_vi2))
    f_vi_c = ops.add(ops.mul(keep, f_vi2), ops.mul(omega, f_ir2))
    return f_ir_c, f_vi_c


def channel_exchange_module(f_vi_e: Tensor, f_ir_e: Tensor,
                            params: ChannelExchangeParams,
                            variant: str = "mutual", residual: bool = True,
                            enabled: bool = True):
    """Full channel-dimension fusion; identity passthrough when disabled."""
    if not enabled:
        return f_vi_e, f_ir_e
    f_vi_x, f_ir_x = ssd_exchange(f_vi_e, f_ir_e, params, variant)
    alpha = _pooled_coeff(f_ir_e, params.alpha_w, params.alpha_b, params.scalar_coeff)
    beta = _pooled_coeff(f_vi_e, params.beta_w, params.beta_b, params.scalar_coeff)
    f_ir2 = residual_gate(f_ir_x, f_ir_e, alpha, params.cal_ir_w,
                          params.cal_ir_b, residual)
    f_vi2 = residual_gate(f_vi_x, f_vi_e, beta, params.cal_vi_w,
                          params.cal_vi_b, residual)
    omega = gate_generator(f_ir_e, f_vi_e, params)
    f_ir_c, f_vi_c = channel_reweight(f_ir2, f_vi2, omega)
    return f_vi_c, f_ir_c
