"""Model assembly: configuration, the fusion network, color reinjection.

The network composes difference-guided extraction, the channel exchange and
the multi-scale spatial exchange into a map from an infrared image plus an
RGB visible image to a single fused luminance channel; `fuse` recombines
that channel with the visible chroma.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass

import numpy as np

from .channel import (EXCHANGE_VARIANTS, channel_exchange_module,
                      make_channel_exchange_params)
from .extract import GUIDANCE_MODES, extract, make_extract_params, stem_embed
from .imageio import luminance, rgb_to_ycbcr, ycbcr_to_rgb
from .spatial import (REALIGN_MODES, decode, make_decoder_params,
                      make_spatial_params, multi_scale_fuse)
from .losses import LossWeights
from .tensor import ContractError, ParamStore, Tensor


class ConfigError(ValueError):
    """A configuration field fails validation; the message names it."""


SEED_ENV_VAR = "SSMFUSE_SEED"


@dataclass
class ModelConfig:
    channels: int = 8
    state_dim: int = 16
    stages: int = 2
    guidance_mode: str = "default"
    exchange_variant: str = "mutual"
    feature_extract: bool = True
    channel_exchange: bool = True
    exchange_residual: bool = True
    spatial_exchange: bool = True
    spatial_modes: tuple = ("column", "row", "concat")
    scale_count: int = 3
    share_exchange_projections: bool = False
    scalar_exchange_coeff: bool = False
    concat_on_width: bool = True
    w1: float = 0.5
    w2: float = 0.5
    lambda_ssim: float = 1.0
    lambda_text: float = 1.0
    lambda_int: float = 1.0
    ssim_window: int = 11
    sobel_combine: str = "l1"
    intensity_aggregate: str = "max"
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        if isinstance(self.spatial_modes, (list, str)):
            modes = (self.spatial_modes.split(",") if isinstance(self.spatial_modes, str)
                     else self.spatial_modes)
            self.spatial_modes = tuple(m.strip() for m in modes if m != "")
        checks = [
            ("channels", self.channels >= 1),
            ("state_dim", self.state_dim >= 1),
            ("stages", self.stages >= 1),
            ("scale_count", self.scale_count >= 1),
            ("guidance_mode", self.guidance_mode in GUIDANCE_MODES),
            ("exchange_variant", self.exchange_variant in EXCHANGE_VARIANTS),
            ("spatial_modes", bool(self.spatial_modes)
             and all(m in REALIGN_MODES for m in self.spatial_modes)),
            ("ssim_window", self.ssim_window >= 3 and self.ssim_window % 2 == 1),
            ("sobel_combine", self.sobel_combine in ("l1", "l2")),
            ("intensity_aggregate", self.intensity_aggregate in ("max", "mean")),
            ("dtype", self.dtype in ("float32", "float64")),
        ]
        for name, ok in checks:
            if not ok:
                raise ConfigError(f"invalid config field {name} = "
                                  f"{getattr(self, name)!r}")

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.w1, self.w2, self.lambda_ssim,
                           self.lambda_text, self.lambda_int)

    # -- plain-text key=value round trip ------------------------------------

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, overrides: dict | None = None) -> "ModelConfig":
        raw = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
            key, val = line.split("=", 1)
            raw[key.strip()] = val.strip()
        if overrides:
            raw.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_mapping(raw)

    @classmethod
    def from_mapping(cls, raw: dict) -> "ModelConfig":
        kwargs = {}
        fields = {f.name: f for f in dataclasses.fields(cls)}
        for key, val in raw.items():
            if key not in fields:
                raise ConfigError(f"unknown config field {key!r}")
            if isinstance(val, str):
                typ = fields[key].type
                if typ == "int":
                    try:
                        val = int(val)
                    except ValueError:
                        raise ConfigError(f"field {key}: {val!r} is not an int") from None
                elif typ == "float":
                    try:
                        val = float(val)
                    except ValueError:
                        raise ConfigError(f"field {key}: {val!r} is not a number") from None
                elif typ == "bool":
                    if val.lower() not in ("true", "false", "1", "0"):
                        raise ConfigError(f"field {key}: {val!r} is not a bool")
                    val = val.lower() in ("true", "1")
                elif typ == "tuple":
                    val = tuple(v.strip() for v in val.split(",") if v.strip())
            kwargs[key] = val
        if SEED_ENV_VAR in os.environ and "seed" not in raw:
            kwargs["seed"] = int(os.environ[SEED_ENV_VAR])
        return cls(**kwargs)

    @classmethod
    def load(cls, path, overrides: dict | None = None) -> "ModelConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_text(fh.read(), overrides)


class Model:
    """The assembled fusion network over one ParamStore."""

    def __init__(self, config: ModelConfig):
        self.config = config
        self.store = ParamStore(np.float32 if config.dtype == "float32" else np.float64)
        rng = np.random.default_rng(config.seed)
        c, n = config.channels, config.state_dim
        self.extract_params = make_extract_params(
            self.store, rng, "extract", c, n,
            n_stages=config.stages if config.feature_extract else 0)
        self.exchange_params = make_channel_exchange_params(
            self.store, rng, "exchange", c, n,
            share_projections=config.share_exchange_projections,
            scalar_coeff=config.scalar_exchange_coeff) if config.channel_exchange \
            else None
        self.spatial_params = make_spatial_params(
            self.store, rng, "spatial", c, n, config.scale_count,
            modes=config.spatial_modes, concat_on_width=config.concat_on_width,
            with_blocks=config.spatial_exchange)
        self.decoder_params = make_decoder_params(self.store, rng, "decoder", c)

    def parameters(self):
        return self.store.all()

    def zero_grad(self):
        self.store.zero_grad()

    def param_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def _as_input(self, arr, channels, name) -> Tensor:
        t = arr if isinstance(arr, Tensor) else Tensor(arr, dtype=self.store.dtype)
        if t.data.dtype != self.store.dtype:
            t = Tensor(t.data, dtype=self.store.dtype)
        if t.shape[1] != channels:
            raise ContractError(f"{name}: expected {channels} channels, "
                                f"got shape {t.shape}")
        return t

    def forward(self, i_ir, i_vi) -> Tensor:
        """(B,1,H,W) infrared + (B,3,H,W) visible -> fused (B,1,H,W)."""
        i_ir = self._as_input(i_ir, 1, "infrared input")
        i_vi = self._as_input(i_vi, 3, "visible input")
        if i_ir.shape[2:] != i_vi.shape[2:]:
            raise ContractError(f"input sizes differ: {i_ir.shape} vs {i_vi.shape}")
        if self.config.feature_extract:
            f_vi, f_ir = extract(i_ir, i_vi, self.extract_params,
                                 self.config.guidance_mode)
        else:
            state = stem_embed(i_ir, i_vi, self.extract_params)
            f_vi, f_ir = state.vi_self, state.ir_self
        if self.config.channel_exchange:
            f_vi, f_ir = channel_exchange_module(
                f_vi, f_ir, self.exchange_params, self.config.exchange_variant,
                residual=self.config.exchange_residual)
        fused = multi_scale_fuse(f_ir, f_vi, self.spatial_params,
                                 enabled=self.config.spatial_exchange)
        return decode(fused, self.decoder_params)


def build_model(config: ModelConfig) -> Model:
    """Deterministic construction: one seed fixes every parameter."""
    return Model(config)


# named ablation axes; each entry overrides fields of a base config
ABLATION_VARIANTS = {
    "full": {},
    "no-feature-extract": {"feature_extract": False},
    "no-channel-exchange": {"channel_exchange": False},
    "no-spatial-exchange": {"spatial_exchange": False},
    "no-guidance": {"guidance_mode": "none"},
    "guidance-v1": {"guidance_mode": "v1"},
    "guidance-v2": {"guidance_mode": "v2"},
    "exchange-v1": {"exchange_variant": "v1"},
    "exchange-v2": {"exchange_variant": "v2"},
    "no-residual": {"exchange_residual": False},
}


def ablation_config(base: ModelConfig, variant: str) -> ModelConfig:
    if variant not in ABLATION_VARIANTS:
        raise ConfigError(f"unknown ablation variant {variant!r}; choose from "
                          + ", ".join(sorted(ABLATION_VARIANTS)))
    return dataclasses.replace(base, **ABLATION_VARIANTS[variant])


def fuse(model: Model, ir_gray: np.ndarray, vi_rgb: np.ndarray) -> np.ndarray:
    """Fuse one pair and recolor with the visible chroma.

    ir_gray: (H, W) in [0, 1]; vi_rgb: (H, W, 3) in [0, 1].
    Returns (H, W, 3) RGB in [0, 1].
    """
    ir_gray = np.asarray(ir_gray, dtype=np.float64)
    vi_rgb = np.asarray(vi_rgb, dtype=np.float64)
    if ir_gray.ndim != 2 or vi_rgb.ndim != 3 or vi_rgb.shape[2] != 3:
        raise ContractError(f"fuse: need (H,W) gray and (H,W,3) color, got "
                            f"{ir_gray.shape} / {vi_rgb.shape}")
    if ir_gray.shape != vi_rgb.shape[:2]:
        raise ContractError(f"fuse: sizes differ {ir_gray.shape} vs "
                            f"{vi_rgb.shape[:2]}")
    h, w = ir_gray.shape
    ycc = rgb_to_ycbcr(vi_rgb)
    fused_y = model.forward(ir_gray.reshape(1, 1, h, w),
                            np.moveaxis(vi_rgb, 2, 0).reshape(1, 3, h, w))
    out = ycc.copy()
    out[..., 0] = fused_y.data[0, 0]
    return ycbcr_to_rgb(out)


def luminance_target(vi_rgb_chw: np.ndarray) -> np.ndarray:
    """(B,3,H,W) visible -> (B,1,H,W) luminance, for the training losses."""
    y = luminance(np.moveaxis(vi_rgb_chw, 1, -1))
    return y[:, None, :, :]
