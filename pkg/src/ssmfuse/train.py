"""Training loop, Adam optimizer and binary checkpoints.

Training is deterministic given (seed, config, data order): pairs are
batched in fixed order, crops are centered, and the update itself has no
randomness.  Checkpoints are little-endian, length-prefixed records behind
a magic string and a version byte; a save/load/save round trip is
byte-identical.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

from .losses import loss_total
from .model import Model, ModelConfig, build_model, luminance_target
from .tensor import NumericError, record, backward, set_debug_checks, debug_checks

MAGIC = b"SFCKPT"
VERSION = 1


class IntegrityError(ValueError):
    """Checkpoint payload does not satisfy its own length/shape table."""


class TrainingAborted(RuntimeError):
    """Loss became non-finite; the message names the first bad tensor."""


@dataclass
class AdamState:
    """Step count and per-parameter first/second moments."""
    lr: float
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def ensure(self, params):
        for p in params:
            if p.name not in self.m:
                self.m[p.name] = np.zeros_like(p.data)
                self.v[p.name] = np.zeros_like(p.data)

    def update(self, params):
        self.step += 1
        b1, b2 = self.beta1, self.beta2
        mc = 1.0 - b1 ** self.step
        vc = 1.0 - b2 ** self.step
        for p in params:
            g = p.grad
            m = self.m[p.name]
            v = self.v[p.name]
            m += (1.0 - b1) * (g - m)
            v += (1.0 - b2) * (g * g - v)
            p.assign(p.data - self.lr * (m / mc) / (np.sqrt(v / vc) + self.eps))


@dataclass
class TrainSettings:
    lr: float = 2.0e-5
    batch_size: int = 2
    epochs: int = 1
    crop: int | None = 64
    log_every: int = 1


def _center_crop(arr: np.ndarray, h: int, w: int) -> np.ndarray:
    top = (arr.shape[0] - h) // 2
    left = (arr.shape[1] - w) // 2
    return arr[top:top + h, left:left + w]


def _make_batches(dataset, settings: TrainSettings):
    """Group pairs in fixed order; crop every member to the common extent."""
    batches = []
    for start in range(0, len(dataset), settings.batch_size):
        chunk = dataset[start:start + settings.batch_size]
        hs = [p[0].shape[0] for p in chunk]
        ws = [p[0].shape[1] for p in chunk]
        h, w = min(hs), min(ws)
        if settings.crop:
            h, w = min(h, settings.crop), min(w, settings.crop)
        if (len(set(hs)) > 1 or len(set(ws)) > 1) and not settings.crop:
            warnings.warn(f"batch at {start}: mixed sizes, center-cropping "
                          f"to {h}x{w}")
        ir = np.stack([_center_crop(np.asarray(p[0], dtype=np.float64), h, w)
                       for p in chunk])[:, None]
        vi = np.stack([np.moveaxis(_center_crop(np.asarray(p[1], dtype=np.float64),
                                                h, w), 2, 0) for p in chunk])
        batches.append((ir, vi))
    return batches


def _first_nonfinite_diagnostic(model: Model, ir, vi) -> str:
    was = debug_checks()
    set_debug_checks(True)
    try:
        model.forward(ir, vi)
        return "loss reduction"
    except NumericError as exc:
        return str(exc)
    finally:
        set_debug_checks(was)


def train_step(model: Model, state: AdamState, ir: np.ndarray, vi: np.ndarray):
    """One forward/backward/update; returns the loss parts as floats."""
    cfg = model.config
    state.ensure(model.parameters())
    target_vi = luminance_target(vi).astype(model.store.dtype)
    with record():
        fused = model.forward(ir, vi)
        total, parts = loss_total(
            fused, model._as_input(ir, 1, "infrared input"),
            model._as_input(target_vi, 1, "visible luminance"),
            cfg.loss_weights(), window=cfg.ssim_window,
            combine=cfg.sobel_combine, aggregate=cfg.intensity_aggregate)
        values = {"total": total.item(),
                  **{k: v.item() for k, v in parts.items()}}
        if not all(np.isfinite(v) for v in values.values()):
            raise TrainingAborted("non-finite loss at step "
                                  f"{state.step + 1}; first bad tensor: "
                                  + _first_nonfinite_diagnostic(model, ir, vi))
        model.zero_grad()
        backward(total)
    state.update(model.parameters())
    return values


def train(model: Model, dataset, settings: TrainSettings,
          state: AdamState | None = None):
    """Run the loop over the dataset; returns (history, optimizer state).

    history rows: (step, total, ssim, text, int).  Passing a saved state
    resumes exactly where it stopped.
    """
    if not dataset:
        raise TrainingAborted("empty dataset")
    if state is None:
        state = AdamState(lr=settings.lr)
    batches = _make_batches(dataset, settings)
    history = []
    for _ in range(settings.epochs):
        for ir, vi in batches:
            values = train_step(model, state, ir, vi)
            history.append((state.step, values["total"], values["ssim"],
                            values["text"], values["int"]))
    return history, state


def history_log(history) -> str:
    """Loss history as a tab-delimited table with a header row."""
    lines = ["step\ttotal\tssim\ttext\tint"]
    for step, total, s, t, i in history:
        lines.append(f"{step}\t{total!r}\t{s!r}\t{t!r}\t{i!r}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# checkpoints


def _dtype_code(dtype) -> int:
    return {np.dtype(np.float32): 0, np.dtype(np.float64): 1}[np.dtype(dtype)]


def _code_dtype(code: int):
    return {0: np.dtype("<f4"), 1: np.dtype("<f8")}[code]


def save_checkpoint(model: Model, state: AdamState | None, path) -> None:
    cfg_text = model.config.to_text().encode("utf-8")
    params = model.parameters()
    out = [MAGIC, bytes([VERSION])]
    out.append(struct.pack("<I", len(cfg_text)))
    out.append(cfg_text)
    out.append(struct.pack("<I", len(params)))
    for p in params:
        name = p.name.encode("utf-8")
        out.append(struct.pack("<H", len(name)))
        out.append(name)
        out.append(bytes([_dtype_code(p.data.dtype)]))
        out.append(struct.pack("<4I", *p.shape))
        out.append(np.ascontiguousarray(p.data,
                                        dtype=p.data.dtype.newbyteorder("<")).tobytes())
    if state is None:
        out.append(b"\x00")
    else:
        out.append(b"\x01")
        out.append(struct.pack("<Q", state.step))
        out.append(struct.pack("<d", state.lr))
        state.ensure(params)
        for p in params:
            for table in (state.m, state.v):
                arr = table[p.name]
                out.append(np.ascontiguousarray(
                    arr, dtype=arr.dtype.newbyteorder("<")).tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(out))


class _Reader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise IntegrityError(f"{self.path}: truncated at byte {self.pos}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path, into: Model | None = None):
    """Rebuild (model, optimizer state) from a checkpoint file.

    With `into`, weights load into the given model instead; a parameter
    whose stored shape disagrees raises with the parameter's name.
    """
    with open(path, "rb") as fh:
        r = _Reader(fh.read(), path)
    if r.take(len(MAGIC)) != MAGIC:
        raise IntegrityError(f"{path}: bad magic")
    version = r.take(1)[0]
    if version != VERSION:
        raise IntegrityError(f"{path}: checkpoint version {version}, "
                             f"this build reads version {VERSION}")
    (cfg_len,) = r.unpack("<I")
    config = ModelConfig.from_text(r.take(cfg_len).decode("utf-8"))
    model = into if into is not None else build_model(config)
    params = {p.name: p for p in model.parameters()}
    (count,) = r.unpack("<I")
    if count != len(params):
        raise IntegrityError(f"{path}: {count} stored parameters, model has "
                             f"{len(params)}")
    order = []
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        dtype = _code_dtype(r.take(1)[0])
        shape = r.unpack("<4I")
        values = np.frombuffer(r.take(dtype.itemsize * int(np.prod(shape))),
                               dtype=dtype).reshape(shape)
        if name not in params:
            raise IntegrityError(f"{path}: unknown parameter {name!r}")
        params[name].assign(values)  # ShapeError names the parameter
        order.append(name)
    state = None
    if r.take(1) == b"\x01":
        (step,) = r.unpack("<Q")
        (lr,) = r.unpack("<d")
        state = AdamState(lr=lr, step=step)
        for name in order:
            p = params[name]
            dtype = p.data.dtype.newbyteorder("<")
            n = dtype.itemsize * p.size
            state.m[name] = np.frombuffer(r.take(n), dtype=dtype).reshape(
                p.shape).astype(p.data.dtype)
            state.v[name] = np.frombuffer(r.take(n), dtype=dtype).reshape(
                p.shape).astype(p.data.dtype)
    if r.pos != len(r.data):
        raise IntegrityError(f"{path}: {len(r.data) - r.pos} trailing bytes")
    return model, state
