"""Difference-driven channel-spatial state space image fusion, desk scale.

A minimal rank-4 tensor core with reverse-mode differentiation carries a
two-modality fusion network: difference-guided feature extraction, a
channel-exchange block built on cross-modal selective scans, multi-scale
spatial scanning, the training losses, fusion quality metrics and a small
training loop.  Everything is oracle-checkable on a CPU.
"""

from .tensor import (ContractError, NumericError, Parameter, ParamStore,
                     ShapeError, StabilityError, Tape, Tensor,
                     UnreliableCheckError, backward, grad_check, record,
                     set_debug_checks)
from .ops import (absolute, add, affine, avg_pool2, channel_layernorm, concat,
                  const, conv2d, div, elementwise_map, exp, flip, interleave,
                  linear, linear_project, linear_scan, maximum, mean_all, mul,
                  narrow, pad_reflect, permute, repeat_axis, reshape, sigmoid,
                  silu, softplus, spatial_mean, sqrt, stride_slice, sub,
                  sum_axes, tanh, upsample2, where_mask)
from .ssm import (SsmParams, TokenSequence, VssBlockParams, cross_merge,
                  cross_scan, discretize, flops_vss, make_ssm_params,
                  make_vss_params, selective_scan, vss_block)
from .extract import (BranchState, DiffMask, diff_guide_mix, diff_mask,
                      extract, guide, make_extract_params, shared_step,
                      stem_embed)
from .channel import (channel_exchange_module, channel_reweight,
                      gate_generator, make_channel_exchange_params,
                      residual_gate, ssd_exchange)
from .spatial import (collapse, decode, make_decoder_params,
                      make_spatial_params, make_sss_params, multi_scale_fuse,
                      realign, sss_block)
from .losses import (LossWeights, loss_int, loss_ssim, loss_text, loss_total,
                     sobel_magnitude, ssim)
from .metrics import (avg_gradient, entropy, evaluate_pair, metrics_report,
                      mutual_information, spatial_frequency, std_dev)
from .model import (ABLATION_VARIANTS, ConfigError, Model, ModelConfig,
                    ablation_config, build_model, fuse)
from .train import (AdamState, IntegrityError, TrainSettings, TrainingAborted,
                    history_log, load_checkpoint, save_checkpoint, train,
                    train_step)
from .flops import flops_attention, flops_report, model_flops
from .imageio import FormatError, read_image, write_image

__all__ = [n for n in dir() if not n.startswith("_")]
__version__ = "0.1.0"
