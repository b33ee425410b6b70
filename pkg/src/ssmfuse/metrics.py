"""No-reference and cross-reference fusion quality metrics.

Plain numpy on 2D arrays.  Histogram metrics (entropy, mutual information)
quantize values to integer levels in [0, 255] by rounding; images loaded
from files in [0, 1] should be scaled by 255 first (the report helper does).
Gradient metrics use the real-valued view directly.
"""

from __future__ import annotations

import numpy as np

from .tensor import ContractError, ShapeError

EPS = 1e-12


def _as_image(img) -> np.ndarray:
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2 or arr.size == 0:
        raise ShapeError(f"metrics expect a non-empty 2D image, got {arr.shape}")
    return arr


def quantize_levels(img) -> np.ndarray:
    """Round to the 256 integer levels used by the histogram metrics."""
    return np.clip(np.rint(_as_image(img)), 0, 255).astype(np.int64)


def entropy(img) -> float:
    """Shannon entropy (bits) of the 256-bin gray histogram."""
    levels = quantize_levels(img)
    hist = np.bincount(levels.ravel(), minlength=256).astype(np.float64)
    p = hist / hist.sum()
    nz = p > 0
    return float(-(p[nz] * np.log2(p[nz])).sum())


def std_dev(img) -> float:
    """Population standard deviation of pixel values."""
    return float(_as_image(img).std())


def spatial_frequency(img) -> float:
    """sqrt(RF^2 + CF^2) from RMS first differences along rows and columns."""
    arr = _as_image(img)
    if arr.shape[0] < 2 or arr.shape[1] < 2:
        raise ContractError(f"spatial_frequency needs at least 2x2, got {arr.shape}")
    rf = np.sqrt(np.mean(np.diff(arr, axis=1) ** 2))
    cf = np.sqrt(np.mean(np.diff(arr, axis=0) ** 2))
    return float(np.hypot(rf, cf))


def _mutual_information_pair(a: np.ndarray, b: np.ndarray) -> float:
    joint = np.zeros((256, 256), dtype=np.float64)
    np.add.at(joint, (a.ravel(), b.ravel()), 1.0)
    joint /= joint.sum()
    pa = joint.sum(axis=1)
    pb = joint.sum(axis=0)
    nz = joint > 0
    denom = np.outer(pa, pb)
    return float((joint[nz] * np.log2(joint[nz] / denom[nz])).sum())


def mutual_information(fused, src_a, src_b) -> float:
    """MI(fused; a) + MI(fused; b) in bits, from 256x256 joint histograms."""
    f = quantize_levels(fused)
    a = quantize_levels(src_a)
    b = quantize_levels(src_b)
    if f.shape != a.shape or f.shape != b.shape:
        raise ShapeError("mutual_information: image shapes differ")
    return _mutual_information_pair(f, a) + _mutual_information_pair(f, b)


def avg_gradient(img) -> float:
    """Mean over interior pixels of sqrt((dx^2 + dy^2) / 2), forward diffs."""
    arr = _as_image(img)
    if arr.shape[0] < 2 or arr.shape[1] < 2:
        raise ContractError(f"avg_gradient needs at least 2x2, got {arr.shape}")
    dx = arr[:-1, 1:] - arr[:-1, :-1]
    dy = arr[1:, :-1] - arr[:-1, :-1]
    return float(np.sqrt((dx ** 2 + dy ** 2) / 2.0).mean())


METRIC_COLUMNS = ("EN", "SD", "SF", "MI", "VIF", "AG")


def evaluate_pair(fused, ir, vi) -> dict:
    """All metric columns for one image triple on the 0-255 scale.

    VIF is not computed here; the column is reported unavailable.
    """
    return {
        "EN": entropy(fused),
        "SD": std_dev(fused),
        "SF": spatial_frequency(fused),
        "MI": mutual_information(fused, ir, vi),
        "VIF": None,
        "AG": avg_gradient(fused),
    }


def metrics_report(rows, names=None) -> str:
    """Tab-delimited metric table for (fused, ir, vi) triples in [0, 1].

    One row per triple; a leading comment documents scaling and the MI
    convention (sum over both sources).  Unavailable columns print n/a.
    """
    lines = [
        "# pixel values scaled to [0, 255]; MI = MI(fused,ir) + MI(fused,vi); "
        "VIF not computed",
        "\t".join(("name",) + METRIC_COLUMNS),
    ]
    for i, (fused, ir, vi) in enumerate(rows):
        name = names[i] if names else f"pair{i:03d}"
        vals = evaluate_pair(np.asarray(fused) * 255.0, np.asarray(ir) * 255.0,
                             np.asarray(vi) * 255.0)
        cells = [name]
        for col in METRIC_COLUMNS:
            v = vals[col]
            cells.append("n/a" if v is None else f"{v:.6f}")
        lines.append("\t".join(cells))
    return "\n".join(lines) + "\n"
