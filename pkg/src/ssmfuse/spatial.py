"""Cross-modal spatial scanning and the decoder.

The two modality maps are realigned into a single map three ways (channel
interleave, channel stack, side-by-side along width) so that one scan
traverses both modalities' tokens; each realignment passes a scan block,
collapses back to one modality width, and the results are mixed by a 1x1
projection.  The whole block runs over an average-pooled pyramid whose
outputs are summed at full resolution and decoded to one channel in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .ssm import make_vss_params, vss_block
from .tensor import ContractError, ParamStore, Parameter, ShapeError, Tensor

REALIGN_MODES = ("column", "row", "concat")


@dataclass
class SssBlockParams:
    """One spatial-exchange block: a scan per realignment plus the mixer."""
    blocks: dict                  # mode -> VssBlockParams
    mix_w: Parameter              # (C, len(modes)*C, 1, 1)
    mix_b: Parameter
    channels: int
    concat_on_width: bool


@dataclass
class SpatialParams:
    scales: list                  # SssBlockParams per level; empty when ablated
    scale_count: int
    fuse_w: Parameter             # (C, C, 1, 1) after the scale sum
    fuse_b: Parameter
    channels: int


@dataclass
class DecoderParams:
    conv1_w: Parameter
    conv1_b: Parameter
    conv2_w: Parameter
    conv2_b: Parameter
    head_w: Parameter             # (1, C, 1, 1)
    head_b: Parameter
    channels: int


def _uniform(rng, shape, scale):
    return (rng.random(shape) * 2.0 - 1.0) * scale


def make_sss_params(store: ParamStore, rng, prefix: str, channels: int,
                    n_state: int, modes=REALIGN_MODES,
                    concat_on_width: bool = True) -> SssBlockParams:
    c = channels
    if not modes or any(m not in REALIGN_MODES for m in modes):
        raise ContractError(f"invalid realign mode set {modes!r}")
    blocks = {}
    for mode in modes:
        # width-axis concat keeps C channels; the channel realignments double them
        width = c if (mode == "concat" and concat_on_width) else 2 * c
        blocks[mode] = make_vss_params(store, rng, f"{prefix}.{mode}", width, n_state)
    k = len(modes)
    return SssBlockParams(
        blocks=blocks,
        mix_w=store.make(f"{prefix}.mix_w", _uniform(rng, (c, k * c, 1, 1),
                                                     (k * c) ** -0.5)),
        mix_b=store.make(f"{prefix}.mix_b", np.zeros((c, 1, 1, 1))),
        channels=c, concat_on_width=concat_on_width)


def make_spatial_params(store: ParamStore, rng, prefix: str, channels: int,
                        n_state: int, scale_count: int, modes=REALIGN_MODES,
                        concat_on_width: bool = True,
                        with_blocks: bool = True) -> SpatialParams:
    scales = [make_sss_params(store, rng, f"{prefix}.scale{i}", channels,
                              n_state, modes, concat_on_width)
              for i in range(scale_count)] if with_blocks else []
    return SpatialParams(
        scales=scales, scale_count=scale_count,
        fuse_w=store.make(f"{prefix}.fuse_w",
                          _uniform(rng, (channels, channels, 1, 1), channels ** -0.5)),
        fuse_b=store.make(f"{prefix}.fuse_b", np.zeros((channels, 1, 1, 1))),
        channels=channels)


def make_decoder_params(store: ParamStore, rng, prefix: str,
                        channels: int) -> DecoderParams:
    c = channels
    return DecoderParams(
        conv1_w=store.make(f"{prefix}.conv1_w", _uniform(rng, (c, c, 3, 3),
                                                         (9 * c) ** -0.5)),
        conv1_b=store.make(f"{prefix}.conv1_b", np.zeros((c, 1, 1, 1))),
        conv2_w=store.make(f"{prefix}.conv2_w", _uniform(rng, (c, c, 3, 3),
                                                         (9 * c) ** -0.5)),
        conv2_b=store.make(f"{prefix}.conv2_b", np.zeros((c, 1, 1, 1))),
        head_w=store.make(f"{prefix}.head_w", _uniform(rng, (1, c, 1, 1), c ** -0.5)),
        head_b=store.make(f"{prefix}.head_b", np.zeros((1, 1, 1, 1))),
        channels=c)


# ---------------------------------------------------------------------------
# realignment


def realign(m_ir: Tensor, m_vi: Tensor, mode: str,
            concat_on_width: bool = True) -> Tensor:
    """Merge two (B,C,H,W) maps into one scannable map.

    column: channel interleave [ir1, vi1, ir2, vi2, ...] -> (B, 2C, H, W)
    row:    channel stack [ir..., vi...] -> (B, 2C, H, W)
    concat: side by side along width -> (B, C, H, 2W); a channel-axis
            reading (equivalent to row) stays selectable via the flag.
    """
    if m_ir.shape != m_vi.shape:
        raise ShapeError(f"realign: shapes differ {m_ir.shape} vs {m_vi.shape}")
    if mode == "column":
        return ops.interleave(m_ir, m_vi, axis=1)
    if mode == "row":
        return ops.concat([m_ir, m_vi], axis=1)
    if mode == "concat":
        return ops.concat([m_ir, m_vi], axis=3 if concat_on_width else 1)
    raise ContractError(f"unknown realign mode {mode!r}")


def collapse(fused: Tensor, mode: str, concat_on_width: bool = True) -> Tensor:
    """Split a realigned map back into its two halves and average them."""
    if mode == "column":
        if fused.shape[1] % 2:
            raise ShapeError(f"collapse: odd channel count in {fused.shape}")
        a = ops.stride_slice(fused, 1, 0, 2)
        b = ops.stride_slice(fused, 1, 1, 2)
    elif mode == "row" or (mode == "concat" and not concat_on_width):
        c2 = fused.shape[1]
        if c2 % 2:
            raise ShapeError(f"collapse: odd channel count in {fused.shape}")
        a = ops.narrow(fused, 1, 0, c2 // 2)
        b = ops.narrow(fused, 1, c2 // 2, c2 // 2)
    elif mode == "concat":
        w2 = fused.shape[3]
        if w2 % 2:
            raise ShapeError(f"collapse: odd width in {fused.shape}")
        a = ops.narrow(fused, 3, 0, w2 // 2)
        b = ops.narrow(fused, 3, w2 // 2, w2 // 2)
    else:
        raise ContractError(f"unknown realign mode {mode!r}")
    return ops.affine(ops.add(a, b), 0.5)


def sss_block(m_ir: Tensor, m_vi: Tensor, params: SssBlockParams,
              enabled: bool = True) -> Tensor:
    """One spatial-exchange block at a single scale.

    The disabled form is the plain stream average, the documented
    ablation path; it touches no parameters.
    """
    if m_ir.shape != m_vi.shape:
        raise ShapeError(f"sss_block: shapes differ {m_ir.shape} vs {m_vi.shape}")
    if not enabled:
        return ops.affine(ops.add(m_ir, m_vi), 0.5)
    branches = []
    for mode, block in params.blocks.items():
        fused = realign(m_ir, m_vi, mode, params.concat_on_width)
        branches.append(collapse(vss_block(fused, block), mode,
                                 params.concat_on_width))
    mixed = ops.concat(branches, axis=1) if len(branches) > 1 else branches[0]
    c = params.channels
    return ops.add(ops.conv2d(mixed, params.mix_w),
                   ops.reshape(params.mix_b, (1, c, 1, 1)))


def multi_scale_fuse(f_ir_c: Tensor, f_vi_c: Tensor, params: SpatialParams,
                     enabled: bool = True) -> Tensor:
    """Run the spatial exchange over an average-pooled pyramid.

    Levels halve each spatial extent; inputs too small to pool simply use
    fewer scales.  Lower levels are upsampled (nearest) back through the
    pyramid, summed at full resolution and mixed by a 1x1 projection.
    """
    if f_ir_c.shape != f_vi_c.shape:
        raise ShapeError(f"multi_scale_fuse: shapes differ {f_ir_c.shape} "
                         f"vs {f_vi_c.shape}")
    if enabled and len(params.scales) != params.scale_count:
        raise ContractError("multi_scale_fuse: scan blocks were not allocated")
    levels = [(f_ir_c, f_vi_c)]
    while len(levels) < params.scale_count:
        ir_prev, vi_prev = levels[-1]
        if ir_prev.shape[2] < 2 or ir_prev.shape[3] < 2:
            break  # degenerate input: fall back to the scales that fit
        levels.append((ops.avg_pool2(ir_prev), ops.avg_pool2(vi_prev)))

    fused = [sss_block(ir_s, vi_s, params.scales[i] if enabled else None,
                       enabled) for i, (ir_s, vi_s) in enumerate(levels)]
    total = fused[0]
    for i in range(len(fused) - 1, 0, -1):
        up = fused[i]
        for j in range(i - 1, -1, -1):  # climb back through recorded extents
            up = ops.upsample2(up, levels[j][0].shape[2:])
        total = ops.add(total, up)
    c = params.channels
    return ops.add(ops.conv2d(total, params.fuse_w),
                   ops.reshape(params.fuse_b, (1, c, 1, 1)))


def decode(m_fused: Tensor, params: DecoderParams) -> Tensor:
    """Two 3x3 conv stages with silu, a 1-channel head, sigmoid to [0, 1]."""
    c = params.channels
    h = ops.silu(ops.add(ops.conv2d(m_fused, params.conv1_w, padding=1),
                         ops.reshape(params.conv1_b, (1, c, 1, 1))))
    h = ops.silu(ops.add(ops.conv2d(h, params.conv2_w, padding=1),
                         ops.reshape(params.conv2_b, (1, c, 1, 1))))
    return ops.sigmoid(ops.add(ops.conv2d(h, params.head_w),
                               ops.reshape(params.head_b, (1, 1, 1, 1))))
