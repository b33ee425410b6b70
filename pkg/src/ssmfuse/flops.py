"""Analytic FLOP model of the network, with an attention comparison column.

Every scan block contributes its four-route recurrence core 4*B*H*W*D*N;
the comparison column replaces that core with the quadratic attention cost
4*B*(H*W)^2*D at the same width.  Convolutions and projections count
2 * multiply-accumulates and appear identically in both columns, so the
per-block ratio of the two scan entries is exactly (H*W)/N.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from .model import ModelConfig
from .ssm import flops_vss
from .tensor import ContractError


def flops_attention(b: int, h: int, w: int, d: int) -> int:
    """Quadratic token-mixing cost at width d: 4*B*(HW)^2*D."""
    return 4 * b * (h * w) ** 2 * d


def _conv(b, cin, cout, k, h, w) -> int:
    return 2 * b * cout * cin * k * k * h * w


def _proj(b, length, groups, cin, cout) -> int:
    return 2 * b * length * groups * cin * cout


@dataclass
class BlockCost:
    name: str
    kind: str           # "scan" | "conv" | "proj"
    flops: int          # scan rows hold the recurrence-core count
    attention: int      # scan rows: quadratic replacement; others: = flops


def _vss_rows(name, b, c, h, w, n, expand=2):
    d = expand * c
    length = h * w
    rows = [
        BlockCost(f"{name}.in_proj", "conv", _conv(b, c, d, 1, h, w),
                  _conv(b, c, d, 1, h, w)),
        BlockCost(f"{name}.gate_proj", "conv", _conv(b, c, d, 1, h, w),
                  _conv(b, c, d, 1, h, w)),
        BlockCost(f"{name}.depthwise", "conv", _conv(b, 1, d, 3, h, w),
                  _conv(b, 1, d, 3, h, w)),
        BlockCost(f"{name}.route_proj", "proj",
                  _proj(b, length, 4, d, d + 2 * n),
                  _proj(b, length, 4, d, d + 2 * n)),
        BlockCost(f"{name}.scan", "scan", flops_vss(b, h, w, d, n),
                  flops_attention(b, h, w, d)),
        BlockCost(f"{name}.out_proj", "conv", _conv(b, d, c, 1, h, w),
                  _conv(b, d, c, 1, h, w)),
    ]
    return rows


def _exchange_rows(name, b, c, h, w, n):
    length = h * w
    width = 2 * c + 2 * n
    rows = []
    for m in ("vi", "ir"):
        rows += [
            BlockCost(f"{name}.{m}.in_proj", "proj",
                      _proj(b, length, 4, c, width),
                      _proj(b, length, 4, c, width)),
            BlockCost(f"{name}.{m}.reproject", "proj",
                      _proj(b, length, 4, width, c),
                      _proj(b, length, 4, width, c)),
            BlockCost(f"{name}.{m}.scan", "scan", flops_vss(b, h, w, c, n),
                      flops_attention(b, h, w, c)),
        ]
    return rows


def model_flops(config: ModelConfig, input_shape) -> list[BlockCost]:
    """Per-block costs for one forward pass at the given (B, 1, H, W)."""
    if len(input_shape) != 4:
        raise ContractError(f"input shape must be (B, C, H, W), got {input_shape}")
    b, _, h, w = (int(v) for v in input_shape)
    c, n = config.channels, config.state_dim
    rows = [
        BlockCost("stem.ir", "conv", _conv(b, 1, c, 3, h, w), _conv(b, 1, c, 3, h, w)),
        BlockCost("stem.vi", "conv", _conv(b, 3, c, 3, h, w), _conv(b, 3, c, 3, h, w)),
    ]
    if config.feature_extract:
        for i in range(config.stages):
            s = f"extract.stage{i}"
            rows += _vss_rows(f"{s}.self_vi", b, c, h, w, n)
            rows += _vss_rows(f"{s}.self_ir", b, c, h, w, n)
            rows.append(BlockCost(f"{s}.share_conv", "conv",
                                  2 * _conv(b, c, c, 3, h, w),
                                  2 * _conv(b, c, c, 3, h, w)))
            for m in ("vi", "ir"):
                rows += _vss_rows(f"{s}.share_vss.{m}", b, c, h, w, n)
    if config.channel_exchange:
        rows += _exchange_rows("exchange", b, c, h, w, n)
    hs, ws = h, w
    for i in range(config.scale_count):
        if i > 0:
            if hs < 2 or ws < 2:
                break
            hs, ws = hs // 2, ws // 2
        if config.spatial_exchange:
            for mode in config.spatial_modes:
                if mode == "concat" and config.concat_on_width:
                    rows += _vss_rows(f"spatial.scale{i}.{mode}", b, c, hs,
                                      2 * ws, n)
                else:
                    rows += _vss_rows(f"spatial.scale{i}.{mode}", b, 2 * c, hs,
                                      ws, n)
            k = len(config.spatial_modes)
            rows.append(BlockCost(f"spatial.scale{i}.mix", "conv",
                                  _conv(b, k * c, c, 1, hs, ws),
                                  _conv(b, k * c, c, 1, hs, ws)))
    rows += [
        BlockCost("spatial.fuse", "conv", _conv(b, c, c, 1, h, w),
                  _conv(b, c, c, 1, h, w)),
        BlockCost("decoder.conv1", "conv", _conv(b, c, c, 3, h, w),
                  _conv(b, c, c, 3, h, w)),
        BlockCost("decoder.conv2", "conv", _conv(b, c, c, 3, h, w),
                  _conv(b, c, c, 3, h, w)),
        BlockCost("decoder.head", "conv", _conv(b, c, 1, 1, h, w),
                  _conv(b, c, 1, 1, h, w)),
    ]
    return rows


def scan_attention_ratio(h: int, w: int, n: int) -> Fraction:
    """Exact per-block attention/scan ratio; always (H*W)/N."""
    ratio = Fraction(flops_attention(1, h, w, 1), flops_vss(1, h, w, 1, n))
    assert ratio == Fraction(h * w, n)
    return ratio


def flops_report(config: ModelConfig, input_shape) -> str:
    """Tab-delimited per-block table plus totals and the exact scan ratio."""
    rows = model_flops(config, input_shape)
    b, _, h, w = (int(v) for v in input_shape)
    lines = ["block\tkind\tflops_scan_model\tflops_attention_model"]
    for r in rows:
        lines.append(f"{r.name}\t{r.kind}\t{r.flops}\t{r.attention}")
    total = sum(r.flops for r in rows)
    total_attn = sum(r.attention for r in rows)
    ratio = scan_attention_ratio(h, w, config.state_dim)
    lines.append(f"TOTAL\t-\t{total}\t{total_attn}")
    lines.append(f"# totals: scan model {total / 1e9:.3f} GFLOPs vs attention "
                 f"model {total_attn / 1e9:.3f} GFLOPs")
    lines.append(f"# per-block attention/scan ratio = (H*W)/N = {ratio} "
                 f"(exact)")
    return "\n".join(lines) + "\n"
