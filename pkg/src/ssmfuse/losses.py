"""Training losses: structural similarity, texture and intensity terms.

All three operate on single-channel images in [0, 1] and are differentiable
end to end; the total is their weighted sum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .tensor import ContractError, ShapeError, Tensor

SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_RANGE = 1.0


@dataclass
class LossWeights:
    """Source weights of the similarity term and the three mixing weights."""
    w1: float = 0.5
    w2: float = 0.5
    lambda_ssim: float = 1.0
    lambda_text: float = 1.0
    lambda_int: float = 1.0

    def __post_init__(self):
        vals = (self.w1, self.w2, self.lambda_ssim, self.lambda_text, self.lambda_int)
        if any(v < 0 for v in vals):
            raise ContractError("loss weights must be non-negative")
        if self.lambda_ssim == self.lambda_text == self.lambda_int == 0:
            raise ContractError("at least one loss term must carry weight")


def gaussian_window(size: int = 11, sigma: float = 1.5, dtype=np.float64) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2.0 * sigma ** 2))
    k = np.outer(g, g)
    return (k / k.sum()).astype(dtype)


def _check_pair(x: Tensor, y: Tensor, name: str) -> None:
    if x.shape != y.shape:
        raise ShapeError(f"{name}: shapes differ {x.shape} vs {y.shape}")
    if x.shape[1] != 1:
        raise ShapeError(f"{name}: expected single-channel images, got {x.shape}")


def ssim(x: Tensor, y: Tensor, window: int = 11, sigma: float = 1.5) -> Tensor:
    """Mean local structural similarity with a Gaussian window.

    Borders are reflection-padded; stability constants follow the usual
    K1=0.01, K2=0.03 at unit dynamic range.
    """
    _check_pair(x, y, "ssim")
    B, _, H, W = x.shape
    if H < window or W < window:
        raise ContractError(f"ssim: image {H}x{W} smaller than the "
                            f"{window}x{window} window")
    kern = Tensor(gaussian_window(window, sigma, x.data.dtype).reshape(1, 1, window, window))
    pad = window // 2
    c1 = (SSIM_K1 * SSIM_RANGE) ** 2
    c2 = (SSIM_K2 * SSIM_RANGE) ** 2

    def smooth(t):
        return ops.conv2d(ops.pad_reflect(t, pad), kern)

    mu_x = smooth(x)
    mu_y = smooth(y)
    mu_xx = ops.mul(mu_x, mu_x)
    mu_yy = ops.mul(mu_y, mu_y)
    mu_xy = ops.mul(mu_x, mu_y)
    var_x = ops.sub(smooth(ops.mul(x, x)), mu_xx)
    var_y = ops.sub(smooth(ops.mul(y, y)), mu_yy)
    cov = ops.sub(smooth(ops.mul(x, y)), mu_xy)

    num = ops.mul(ops.affine(mu_xy, 2.0, c1), ops.affine(cov, 2.0, c2))
    den = ops.mul(ops.affine(ops.add(mu_xx, mu_yy), 1.0, c1),
                  ops.affine(ops.add(var_x, var_y), 1.0, c2))
    return ops.mean_all(ops.div(num, den))


def loss_ssim(i_f: Tensor, i_ir: Tensor, i_vi: Tensor, w1: float = 0.5,
              w2: float = 0.5, window: int = 11) -> Tensor:
    """w1*(1 - ssim(f, ir)) + w2*(1 - ssim(f, vi))."""
    a = ops.affine(ssim(i_f, i_ir, window), -w1, w1)
    b = ops.affine(ssim(i_f, i_vi, window), -w2, w2)
    return ops.add(a, b)


_SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])


def sobel_magnitude(img: Tensor, combine: str = "l1") -> Tensor:
    """Per-pixel gradient magnitude from reflect-padded Sobel responses.

    l1 combines |gx| + |gy| (smoothly differentiable almost everywhere);
    l2 takes sqrt(gx^2 + gy^2 + tiny).
    """
    kx = Tensor(_SOBEL_X.reshape(1, 1, 3, 3).astype(img.data.dtype))
    ky = Tensor(_SOBEL_X.T.reshape(1, 1, 3, 3).astype(img.data.dtype))
    padded = ops.pad_reflect(img, 1)
    gx = ops.conv2d(padded, kx)
    gy = ops.conv2d(padded, ky)
    if combine == "l1":
        return ops.add(ops.absolute(gx), ops.absolute(gy))
    if combine == "l2":
        return ops.sqrt(ops.affine(ops.add(ops.mul(gx, gx), ops.mul(gy, gy)),
                                   1.0, 1e-12))
    raise ContractError(f"unknown sobel combination {combine!r}")


def loss_text(i_f: Tensor, i_ir: Tensor, i_vi: Tensor,
              combine: str = "l1") -> Tensor:
    """Mean absolute gap between the fused gradient map and the pointwise
    strongest source gradient map."""
    _check_pair(i_f, i_ir, "loss_text")
    _check_pair(i_f, i_vi, "loss_text")
    gf = sobel_magnitude(i_f, combine)
    strongest = ops.maximum(sobel_magnitude(i_ir, combine),
                            sobel_magnitude(i_vi, combine))
    return ops.mean_all(ops.absolute(ops.sub(gf, strongest)))


def loss_int(i_f: Tensor, i_ir: Tensor, i_vi: Tensor,
             aggregate: str = "max") -> Tensor:
    """Mean absolute gap to the pointwise source aggregate.

    The aggregate is the elementwise maximum for the thermal/visible
    setting; a mean aggregate stays selectable.
    """
    _check_pair(i_f, i_ir, "loss_int")
    _check_pair(i_f, i_vi, "loss_int")
    if aggregate == "max":
        target = ops.maximum(i_ir, i_vi)
    elif aggregate == "mean":
        target = ops.affine(ops.add(i_ir, i_vi), 0.5)
    else:
        raise ContractError(f"unknown intensity aggregate {aggregate!r}")
    return ops.mean_all(ops.absolute(ops.sub(i_f, target)))


def loss_total(i_f: Tensor, i_ir: Tensor, i_vi: Tensor, weights: LossWeights,
               window: int = 11, combine: str = "l1",
               aggregate: str = "max"):
    """Weighted sum of the three terms; returns (total, parts dict)."""
    parts = {
        "ssim": loss_ssim(i_f, i_ir, i_vi, weights.w1, weights.w2, window),
        "text": loss_text(i_f, i_ir, i_vi, combine),
        "int": loss_int(i_f, i_ir, i_vi, aggregate),
    }
    total = ops.add(ops.add(ops.affine(parts["ssim"], weights.lambda_ssim),
                            ops.affine(parts["text"], weights.lambda_text)),
                    ops.affine(parts["int"], weights.lambda_int))
    return total, parts
