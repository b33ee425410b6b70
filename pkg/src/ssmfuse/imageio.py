"""Binary PGM (P5) and PPM (P6) image files, plus luma/chroma conversion.

8-bit only; pixel values map to [0, 1] on read and quantize round-half-up
on write, so a write/read round trip moves each pixel by at most 1/255.
"""

from __future__ import annotations

import numpy as np


class FormatError(ValueError):
    """Malformed image file; the message carries the byte offset."""


def _read_header_token(data: bytes, pos: int) -> tuple[bytes, int]:
    n = len(data)
    while pos < n:
        if data[pos:pos + 1].isspace():
            pos += 1
        elif data[pos:pos + 1] == b"#":  # comment runs to end of line
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        else:
            break
    start = pos
    while pos < n and not data[pos:pos + 1].isspace():
        pos += 1
    if start == pos:
        raise FormatError(f"truncated header at byte {start}")
    return data[start:pos], pos


def read_image(path) -> np.ndarray:
    """Read a P5 file as (H, W) or a P6 file as (H, W, 3), values in [0, 1]."""
    with open(path, "rb") as fh:
        data = fh.read()
    magic, pos = _read_header_token(data, 0)
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"unsupported magic {magic!r} at byte 0 in {path}")
    fields = []
    for _ in range(3):
        tok, pos = _read_header_token(data, pos)
        try:
            fields.append(int(tok))
        except ValueError:
            raise FormatError(f"non-numeric header field {tok!r} near byte {pos} "
                              f"in {path}") from None
    width, height, maxval = fields
    if width <= 0 or height <= 0:
        raise FormatError(f"empty image {width}x{height} in {path}")
    if maxval != 255:
        raise FormatError(f"maxval {maxval} unsupported (8-bit only) in {path}")
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise FormatError(f"missing payload separator at byte {pos} in {path}")
    pos += 1  # exactly one whitespace byte before the payload
    channels = 1 if magic == b"P5" else 3
    need = width * height * channels
    payload = data[pos:pos + need]
    if len(payload) < need:
        raise FormatError(f"payload truncated at byte {pos + len(payload)} "
                          f"in {path}: need {need} bytes")
    arr = np.frombuffer(payload, dtype=np.uint8).astype(np.float32) / 255.0
    if channels == 1:
        return arr.reshape(height, width)
    return arr.reshape(height, width, 3)


def write_image(img, path) -> None:
    """Write (H, W) as P5 or (H, W, 3) as P6; values must lie in [0, 1]."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 2:
        magic, shape = b"P5", arr.shape
    elif arr.ndim == 3 and arr.shape[2] == 3:
        magic, shape = b"P6", arr.shape[:2]
    else:
        raise FormatError(f"cannot encode array of shape {arr.shape}")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise FormatError("pixel values outside [0, 1]")
    quant = np.floor(arr * 255.0 + 0.5).astype(np.uint8)  # round half up
    header = b"%s\n%d %d\n255\n" % (magic, shape[1], shape[0])
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(quant.tobytes())


# ---------------------------------------------------------------------------
# color space


_YCBCR = np.array([[0.299, 0.587, 0.114],
                   [-0.168736, -0.331264, 0.5],
                   [0.5, -0.418688, -0.081312]])
_RGB = np.array([[1.0, 0.0, 1.402],
                 [1.0, -0.344136, -0.714136],
                 [1.0, 1.772, 0.0]])


def rgb_to_ycbcr(rgb: np.ndarray) -> np.ndarray:
    """(H, W, 3) RGB in [0, 1] -> (H, W, 3) Y, Cb, Cr with chroma offset 0.5."""
    out = rgb @ _YCBCR.T
    out[..., 1:] += 0.5
    return out


def ycbcr_to_rgb(ycc: np.ndarray) -> np.ndarray:
    """Inverse conversion, clipped to [0, 1]."""
    shifted = ycc.copy()
    shifted[..., 1:] -= 0.5
    return np.clip(shifted @ _RGB.T, 0.0, 1.0)


def luminance(rgb: np.ndarray) -> np.ndarray:
    """The Y channel alone: 0.299 R + 0.587 G + 0.114 B."""
    return rgb @ _YCBCR[0]
