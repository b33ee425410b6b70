"""Difference-guided dual-branch feature extraction.

Two modalities run through paired branches: weight-dependent branches keep
modality-specific features, a weight-shared branch (one parameter set, two
invocations) produces comparable features whose absolute difference, squashed
by tanh, gates how much each modality's stream absorbs from the other.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .ssm import VssBlockParams, make_vss_params, vss_block
from .tensor import ContractError, ParamStore, Parameter, ShapeError, Tensor

GUIDANCE_MODES = ("default", "v1", "v2", "none")


@dataclass
class BranchState:
    """The four live feature streams at one extraction stage."""
    vi_self: Tensor
    ir_self: Tensor
    vi_share: Tensor
    ir_share: Tensor
    stage: int = 0


@dataclass
class DiffMask:
    """tanh of the absolute share-branch difference; values in [0, 1)."""
    mask: Tensor


@dataclass
class StageParams:
    self_vi: VssBlockParams
    self_ir: VssBlockParams
    share_conv_w: Parameter
    share_conv_b: Parameter
    share_vss: VssBlockParams


@dataclass
class ExtractParams:
    stem_ir_w: Parameter
    stem_ir_b: Parameter
    stem_vi_w: Parameter
    stem_vi_b: Parameter
    stages: list
    channels: int


def _uniform(rng, shape, scale):
    return (rng.random(shape) * 2.0 - 1.0) * scale


def make_extract_params(store: ParamStore, rng, prefix: str, channels: int,
                        n_state: int, n_stages: int) -> ExtractParams:
    c = channels
    stages = []
    for i in range(n_stages):
        sp = f"{prefix}.stage{i}"
        stages.append(StageParams(
            self_vi=make_vss_params(store, rng, f"{sp}.self_vi", c, n_state),
            self_ir=make_vss_params(store, rng, f"{sp}.self_ir", c, n_state),
            share_conv_w=store.make(f"{sp}.share_conv_w",
                                    _uniform(rng, (c, c, 3, 3), (9 * c) ** -0.5)),
            share_conv_b=store.make(f"{sp}.share_conv_b", np.zeros((c, 1, 1, 1))),
            share_vss=make_vss_params(store, rng, f"{sp}.share_vss", c, n_state)))
    return ExtractParams(
        stem_ir_w=store.make(f"{prefix}.stem_ir_w", _uniform(rng, (c, 1, 3, 3), 1 / 3)),
        stem_ir_b=store.make(f"{prefix}.stem_ir_b", np.zeros((c, 1, 1, 1))),
        stem_vi_w=store.make(f"{prefix}.stem_vi_w",
                             _uniform(rng, (c, 3, 3, 3), 27 ** -0.5)),
        stem_vi_b=store.make(f"{prefix}.stem_vi_b", np.zeros((c, 1, 1, 1))),
        stages=stages, channels=c)


def stem_embed(i_ir: Tensor, i_vi: Tensor, params: ExtractParams) -> BranchState:
    """Map pixel inputs (B,1,H,W) and (B,3,H,W) to C-channel features.

    Self and share streams start from the same stem output per modality.
    """
    if i_ir.shape[1] != 1 or i_vi.shape[1] != 3:
        raise ShapeError(f"stem_embed: expected 1- and 3-channel inputs, got "
                         f"{i_ir.shape} / {i_vi.shape}")
    for img, name in ((i_ir, "infrared"), (i_vi, "visible")):
        if img.data.min() < 0.0 or img.data.max() > 1.0:
            raise ContractError(f"stem_embed: {name} pixels outside [0, 1]")
    c = params.channels
    f_ir = ops.add(ops.conv2d(i_ir, params.stem_ir_w, padding=1),
                   ops.reshape(params.stem_ir_b, (1, c, 1, 1)))
    f_vi = ops.add(ops.conv2d(i_vi, params.stem_vi_w, padding=1),
                   ops.reshape(params.stem_vi_b, (1, c, 1, 1)))
    return BranchState(vi_self=f_vi, ir_self=f_ir, vi_share=f_vi, ir_share=f_ir)


def shared_step(state: BranchState, stage: StageParams) -> BranchState:
    """Advance both share streams through the one shared conv + scan block."""
    c = stage.share_conv_w.shape[0]
    bias = ops.reshape(stage.share_conv_b, (1, c, 1, 1))

    def run(feat):
        return vss_block(ops.add(ops.conv2d(feat, stage.share_conv_w, padding=1),
                                 bias), stage.share_vss)

    return BranchState(vi_self=state.vi_self, ir_self=state.ir_self,
                       vi_share=run(state.vi_share), ir_share=run(state.ir_share),
                       stage=state.stage)


def diff_mask(f_vi_share: Tensor, f_ir_share: Tensor) -> DiffMask:
    """tanh(|vi - ir|) elementwise, kept strictly below 1.

    tanh rounds to exactly 1.0 in floating point once the difference passes
    ~19; the mask contract is [0, 1), so saturated entries are pinned to the
    largest representable value below one.
    """
    if f_vi_share.shape != f_ir_share.shape:
        raise ShapeError(f"diff_mask: shapes differ {f_vi_share.shape} vs "
                         f"{f_ir_share.shape}")
    m = ops.tanh(ops.absolute(ops.sub(f_vi_share, f_ir_share)))
    if np.any(m.data >= 1.0):
        below_one = np.nextafter(m.data.dtype.type(1.0), m.data.dtype.type(0.0))
        m = ops.where_mask(m.data >= 1.0, ops.const(below_one, m.data.dtype), m)
    return DiffMask(m)


def diff_guide_mix(f_ir: Tensor, f_vi: Tensor, diff: DiffMask, mode: str):
    """Cross-modal blend of the self streams under the difference mask.

    default: ir updates first, vi then mixes with the *updated* ir;
    v1: the same two steps with vi first; v2: both from pre-update values;
    none: no mixing.  Returns (ir, vi).
    """
    if mode not in GUIDANCE_MODES:
        raise ContractError(f"unknown guidance mode {mode!r}")
    if mode == "none":
        return f_ir, f_vi
    d = diff.mask
    keep = ops.affine(d, -1.0, 1.0)  # 1 - Diff

    def blend(own, other):
        return ops.add(ops.mul(keep, own), ops.mul(d, other))

    if mode == "default":
        ir2 = blend(f_ir, f_vi)
        return ir2, blend(f_vi, ir2)
    if mode == "v1":
        vi2 = blend(f_vi, f_ir)
        return blend(f_ir, vi2), vi2
    # v2: parallel
    return blend(f_ir, f_vi), blend(f_vi, f_ir)


def guide(state: BranchState, diff: DiffMask, mode: str,
          stage: StageParams) -> BranchState:
    """Run the weight-dependent scan blocks, then the masked cross blend."""
    vi = vss_block(state.vi_self, stage.self_vi)
    ir = vss_block(state.ir_self, stage.self_ir)
    ir2, vi2 = diff_guide_mix(ir, vi, diff, mode)
    return BranchState(vi_self=vi2, ir_self=ir2, vi_share=state.vi_share,
                       ir_share=state.ir_share, stage=state.stage + 1)


def extract(i_ir: Tensor, i_vi: Tensor, params: ExtractParams,
            mode: str = "default"):
    """Full difference-guided extraction.

    Stems, then per stage: shared step -> difference mask -> guided blend.
    Returns the final (vi, ir) self streams.
    """
    if not params.stages:
        raise ContractError("extract: needs at least one stage")
    state = stem_embed(i_ir, i_vi, params)
    for stage in params.stages:
        state = shared_step(state, stage)
        mask = diff_mask(state.vi_share, state.ir_share)
        state = guide(state, mask, mode, stage)
    return state.vi_self, state.ir_self
