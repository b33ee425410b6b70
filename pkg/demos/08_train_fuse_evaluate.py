"""End to end at desk scale: train briefly, checkpoint, fuse, score.

Everything is deterministic given the seed: parameters, the loss history,
and the fused output.  The run takes well under a minute on a laptop core.
"""

import os
import tempfile

import numpy as np

from ssmfuse.imageio import write_image
from ssmfuse.metrics import metrics_report
from ssmfuse.model import ModelConfig, build_model, fuse
from ssmfuse.train import (TrainSettings, history_log, load_checkpoint,
                           save_checkpoint, train)

# A small but complete configuration.
config = ModelConfig(channels=4, state_dim=4, stages=1, scale_count=2,
                     lambda_ssim=1.0, lambda_text=10.0, lambda_int=10.0,
                     seed=1)
model = build_model(config)
print("parameters:", model.param_count())

# One synthetic pair: a thermal blob the visible channel cannot see.
i, j = np.indices((32, 32))
background = np.clip(0.3 + 0.2 * np.sin(j / 4.0) + 0.1 * np.cos(i / 5.0), 0, 1)
ir = np.clip(background + 0.6 * np.exp(-((i - 10.0) ** 2 + (j - 20.0) ** 2) / 14.0),
             0, 1)
vi = np.stack([background * 0.9 + 0.05, background, background * 0.8 + 0.1],
              axis=-1)

history, state = train(model, [(ir, vi)],
                       TrainSettings(lr=1e-3, batch_size=1, epochs=60, crop=32))
print("loss: %.3f -> %.3f over %d steps"
      % (history[0][1], history[-1][1], len(history)))
print(history_log(history[:3]), "...")

# Checkpoints round-trip exactly.
with tempfile.TemporaryDirectory() as tmp:
    path = os.path.join(tmp, "model.ckpt")
    save_checkpoint(model, state, path)
    restored, state2 = load_checkpoint(path)
    print("restored step count:", state2.step)

    # Fuse and recolor: the network produces the luminance channel, the
    # visible chroma rides along.
    out = fuse(restored, ir, vi)
    print("fused image:", out.shape, "range [%.3f, %.3f]" % (out.min(), out.max()))
    write_image(out, os.path.join(tmp, "fused.ppm"))

    # Score the fused luminance against both sources.
    fused_y = 0.299 * out[..., 0] + 0.587 * out[..., 1] + 0.114 * out[..., 2]
    print()
    print(metrics_report([(fused_y, ir, 0.299 * vi[..., 0] + 0.587 * vi[..., 1]
                           + 0.114 * vi[..., 2])], names=["demo_pair"]))
