"""Selective-scan state space machinery for 2D feature maps.

Covers zero-order-hold discretization, the input-selective scan recurrence,
the four-route cross-scan / cross-merge pair and the full 2D scan block
(norm -> project -> depthwise conv -> four directional scans -> merge ->
gate -> project back, with a residual path).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import (ContractError, ParamStore, Parameter, ShapeError,
                     StabilityError, Tensor)
from . import ops

ROUTES = ("row_forward", "row_backward", "col_forward", "col_backward")

# Below this |delta*A| the exact ZOH input factor loses precision to
# cancellation; switch to its second-order Taylor form.
_TAYLOR_THRESHOLD = 1e-6


@dataclass
class TokenSequence:
    """One directional flattening of a (B,C,H,W) map, hosted as (B,L,C,1)."""
    tokens: Tensor
    route: str
    origin: tuple  # (H, W)


@dataclass
class SsmParams:
    """Per-route scan parameters; `groups` routes share one container.

    a_log:   (G, C, N, 1) log of the negated diagonal state coefficients
    skip:    (G, C, 1, 1) direct input passthrough
    delta_w: (G, C, C, 1), delta_b: (G, C, 1, 1) timescale projection
    bc_w:    (G, 2N, C, 1) joint projection to the input/output state maps
    """
    a_log: Parameter
    skip: Parameter
    delta_w: Parameter
    delta_b: Parameter
    bc_w: Parameter
    n_state: int
    groups: int
    width: int


@dataclass
class VssBlockParams:
    norm_gamma: Parameter
    norm_beta: Parameter
    in_w: Parameter
    in_b: Parameter
    gate_w: Parameter
    gate_b: Parameter
    dw_w: Parameter
    dw_b: Parameter
    scan: SsmParams
    out_w: Parameter
    out_b: Parameter
    channels: int
    inner: int


def _uniform(rng, shape, scale):
    return (rng.random(shape) * 2.0 - 1.0) * scale


def make_ssm_params(store: ParamStore, rng, prefix: str, width: int,
                    n_state: int, groups: int = 1) -> SsmParams:
    g, c, n = groups, width, n_state
    # negated state coefficients span [1, n] per state index
    a_log = np.tile(np.log(np.arange(1, n + 1, dtype=np.float64)), (g, c, 1))[..., None]
    # timescale starts near 0.1: bias at the softplus preimage
    delta_b = np.full((g, c, 1, 1), math.log(math.expm1(0.1)))
    return SsmParams(
        a_log=store.make(f"{prefix}.a_log", a_log),
        skip=store.make(f"{prefix}.skip", np.ones((g, c, 1, 1))),
        delta_w=store.make(f"{prefix}.delta_w", _uniform(rng, (g, c, c, 1), c ** -0.5)),
        delta_b=store.make(f"{prefix}.delta_b", delta_b),
        bc_w=store.make(f"{prefix}.bc_w", _uniform(rng, (g, 2 * n, c, 1), c ** -0.5)),
        n_state=n, groups=g, width=c)


def make_vss_params(store: ParamStore, rng, prefix: str, channels: int,
                    n_state: int, expand: int = 2) -> VssBlockParams:
    c = channels
    ci = expand * c
    return VssBlockParams(
        norm_gamma=store.make(f"{prefix}.norm_g", np.ones((1, c, 1, 1))),
        norm_beta=store.make(f"{prefix}.norm_b", np.zeros((1, c, 1, 1))),
        in_w=store.make(f"{prefix}.in_w", _uniform(rng, (ci, c, 1, 1), c ** -0.5)),
        in_b=store.make(f"{prefix}.in_b", np.zeros((ci, 1, 1, 1))),
        gate_w=store.make(f"{prefix}.gate_w", _uniform(rng, (ci, c, 1, 1), c ** -0.5)),
        gate_b=store.make(f"{prefix}.gate_b", np.zeros((ci, 1, 1, 1))),
        dw_w=store.make(f"{prefix}.dw_w", _uniform(rng, (ci, 1, 3, 3), 1.0 / 3.0)),
        dw_b=store.make(f"{prefix}.dw_b", np.zeros((ci, 1, 1, 1))),
        scan=make_ssm_params(store, rng, f"{prefix}.scan", ci, n_state, groups=4),
        out_w=store.make(f"{prefix}.out_w", _uniform(rng, (c, ci, 1, 1), ci ** -0.5)),
        out_b=store.make(f"{prefix}.out_b", np.zeros((c, 1, 1, 1))),
        channels=c, inner=ci)


# ---------------------------------------------------------------------------
# discretization


def _discretize_aligned(a: Tensor, b: Tensor, delta: Tensor):
    """ZOH on broadcast-aligned operands.

    a: (1,1,M,N) negative; delta: (B,L,M,1) positive; b broadcastable to
    (B,L,M,N).  Returns (a_bar, b_bar) at (B,L,M,N).
    """
    da = ops.mul(delta, a)
    a_bar = ops.exp(da)
    exact = ops.mul(ops.div(ops.affine(a_bar, 1.0, -1.0), a), b)
    taylor = ops.mul(ops.mul(delta, b), ops.affine(da, 0.5, 1.0))
    b_bar = ops.where_mask(np.abs(da.data) < _TAYLOR_THRESHOLD, taylor, exact)
    return a_bar, b_bar


def discretize(a: Tensor, b: Tensor, delta: Tensor):
    """Zero-order-hold discretization of a diagonal continuous system.

    a:     (C, N, 1, 1) strictly negative diagonal coefficients
    b:     (B, L, N, 1) input map per token
    delta: (B, L, C, 1) strictly positive timescales
    Returns (a_bar, b_bar), each (B, L, C, N):
    a_bar = exp(delta a) and b_bar = (delta a)^-1 (exp(delta a) - 1) delta b,
    with the Taylor fallback delta*b*(1 + delta*a/2) near delta*a = 0.
    """
    if np.any(a.data >= 0):
        raise StabilityError("discretize: state coefficients must be negative")
    if np.any(delta.data <= 0):
        raise ContractError("discretize: timescales must be positive")
    c, n = a.shape[0], a.shape[1]
    bsz, length = delta.shape[0], delta.shape[1]
    if b.shape != (bsz, length, n, 1):
        raise ShapeError(f"discretize: input map {b.shape} does not match "
                         f"(B,L,N,1)=({bsz},{length},{n},1)")
    a4 = ops.reshape(a, (1, 1, c, n))
    b4 = ops.reshape(b, (bsz, length, 1, n))
    return _discretize_aligned(a4, b4, delta)


# ---------------------------------------------------------------------------
# the selective scan


def _scan_grouped(x: Tensor, p: SsmParams) -> Tensor:
    """Input-selective scan over stacked route groups.

    x: (B, L, G, C) tokens.  Timescales and both state maps are projected
    from the tokens themselves; the recurrence runs once over the folded
    (G*C) channel axis.  Returns (B, L, G, C).
    """
    B, L, G, C = x.shape
    if G != p.groups or C != p.width:
        raise ShapeError(f"selective scan: tokens {x.shape} do not match params "
                         f"(groups={p.groups}, width={p.width})")
    n = p.n_state
    delta = ops.softplus(ops.linear(x, p.delta_w, p.delta_b))      # (B,L,G,C)
    bc = ops.linear(x, p.bc_w)                                     # (B,L,G,2N)
    bmat = ops.narrow(bc, 3, 0, n)
    cmat = ops.narrow(bc, 3, n, n)

    a = ops.affine(ops.exp(ops.reshape(p.a_log, (1, 1, G * C, n))), -1.0)
    xf = ops.reshape(x, (B, L, G * C, 1))
    df = ops.reshape(delta, (B, L, G * C, 1))
    bf = ops.repeat_axis(bmat, 2, C)                               # (B,L,G*C,N)
    cf = ops.repeat_axis(cmat, 2, C)

    a_bar, b_bar = _discretize_aligned(a, bf, df)
    h = ops.linear_scan(a_bar, ops.mul(b_bar, xf))                 # (B,L,G*C,N)
    y = ops.sum_axes(ops.mul(cf, h), (3,))                         # (B,L,G*C,1)
    y = ops.add(y, ops.mul(xf, ops.reshape(p.skip, (1, 1, G * C, 1))))
    return ops.reshape(y, (B, L, G, C))


def selective_scan(tokens: Tensor, params: SsmParams) -> Tensor:
    """Selective scan over one token sequence hosted as (B, L, C, 1)."""
    if params.groups != 1:
        raise ContractError("selective_scan: params carry multiple route groups; "
                            "use the block-level entry points")
    B, L, C, one = tokens.shape
    if one != 1 or C != params.width:
        raise ShapeError(f"selective_scan: tokens {tokens.shape} do not match "
                         f"width {params.width}")
    y = _scan_grouped(ops.reshape(tokens, (B, L, 1, C)), params)
    return ops.reshape(y, (B, L, C, 1))


# ---------------------------------------------------------------------------
# four-route 2D scanning


def cross_scan(feature: Tensor) -> list[TokenSequence]:
    """Flatten a map into the four directional token orders.

    row_forward is row-major, col_forward column-major; the *_backward
    routes are their reversals.  Each sequence is a permutation of the
    H*W positions.
    """
    B, C, H, W = feature.shape
    L = H * W
    rf = ops.reshape(ops.permute(feature, (0, 2, 3, 1)), (B, L, C, 1))
    cf = ops.reshape(ops.permute(feature, (0, 3, 2, 1)), (B, L, C, 1))
    return [TokenSequence(rf, "row_forward", (H, W)),
            TokenSequence(ops.flip(rf, 1), "row_backward", (H, W)),
            TokenSequence(cf, "col_forward", (H, W)),
            TokenSequence(ops.flip(cf, 1), "col_backward", (H, W))]


def cross_merge(routes: list[TokenSequence]) -> Tensor:
    """Undo each route's ordering and sum the four spatial maps."""
    if len(routes) != 4:
        raise ShapeError(f"cross_merge: expected 4 routes, got {len(routes)}")
    origin = routes[0].origin
    shapes = {r.tokens.shape for r in routes}
    if any(r.origin != origin for r in routes) or len(shapes) != 1:
        raise ShapeError("cross_merge: routes disagree on origin shape")
    H, W = origin
    B, L, C, _ = routes[0].tokens.shape
    if L != H * W:
        raise ShapeError(f"cross_merge: sequence length {L} != H*W = {H * W}")

    total = None
    for r in routes:
        t = r.tokens
        if r.route.endswith("backward"):
            t = ops.flip(t, 1)
        if r.route.startswith("row"):
            m = ops.permute(ops.reshape(t, (B, H, W, C)), (0, 3, 1, 2))
        elif r.route.startswith("col"):
            m = ops.permute(ops.reshape(t, (B, W, H, C)), (0, 3, 2, 1))
        else:
            raise ContractError(f"cross_merge: unknown route {r.route!r}")
        total = m if total is None else ops.add(total, m)
    return total


def _stack_routes(routes: list[TokenSequence]) -> Tensor:
    B, L, C, _ = routes[0].tokens.shape
    parts = [ops.reshape(r.tokens, (B, L, 1, C)) for r in routes]
    return ops.concat(parts, axis=2)


def _unstack_routes(y: Tensor, origin: tuple) -> list[TokenSequence]:
    B, L, G, C = y.shape
    return [TokenSequence(ops.reshape(ops.narrow(y, 2, i, 1), (B, L, C, 1)),
                          ROUTES[i], origin) for i in range(G)]


def vss_block(feature: Tensor, params: VssBlockParams) -> Tensor:
    """2D selective-scan block, shape preserving.

    norm -> 1x1 projection to the inner width -> 3x3 depthwise conv + silu
    -> selective scan along all four routes -> merge -> sigmoid gate from a
    parallel projection -> 1x1 projection back -> residual add.
    """
    B, C, H, W = feature.shape
    if C != params.channels:
        raise ShapeError(f"vss_block: {C} channels, params built for {params.channels}")
    h = ops.channel_layernorm(feature, params.norm_gamma, params.norm_beta)
    gate = ops.sigmoid(ops.add(ops.conv2d(h, params.gate_w),
                               ops.reshape(params.gate_b, (1, params.inner, 1, 1))))
    main = ops.add(ops.conv2d(h, params.in_w),
                   ops.reshape(params.in_b, (1, params.inner, 1, 1)))
    main = ops.silu(ops.add(ops.conv2d(main, params.dw_w, padding=1, groups=params.inner),
                            ops.reshape(params.dw_b, (1, params.inner, 1, 1))))
    stacked = _stack_routes(cross_scan(main))          # (B, L, 4, inner)
    scanned = _scan_grouped(stacked, params.scan)
    merged = cross_merge(_unstack_routes(scanned, (H, W)))
    out = ops.mul(merged, gate)
    out = ops.add(ops.conv2d(out, params.out_w),
                  ops.reshape(params.out_b, (1, C, 1, 1)))
    return ops.add(out, feature)


def flops_vss(b: int, h: int, w: int, d: int, n: int) -> int:
    """Scan-core FLOP count of one four-route block: 4*B*H*W*D*N."""
    for v in (b, h, w, d, n):
        if v < 0:
            raise ContractError("flops_vss: arguments must be non-negative")
    return 4 * b * h * w * d * n
