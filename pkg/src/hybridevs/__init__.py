"""Two-stage Quad Bayer + event-pixel demosaicing toolkit.

The public surface: CFA simulation (`cfa`), the autodiff core
(`tensor`, `ops`), network blocks and the two-stage model (`blocks`,
`model`), training (`train`), metrics (`metrics`), checkpoints
(`checkpoint`), and the CLI (`cli`).
"""

from .cfa import (
    CfaSpec,
    apply_event_mask,
    bilinear_demosaic,
    coarse_inpaint,
    make_position_maps,
    mosaic_quad_bayer,
    synth_clean_quad,
    synthetic_rgb,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import (
    ConfigError,
    DataError,
    HybridEvsError,
    ShapeError,
    VerificationError,
)
from .gradcheck import finite_diff_check
from .metrics import EvalReport, EvalRow, eval_dataset, psnr, ssim
from .model import (
    CostReport,
    ModelConfig,
    TwoStageModel,
    count_flops,
    count_params,
    demosaic_image,
    variant_config,
)
from .ops import global_attention_madds, sel_scan_1d, selective_scan
from .tensor import Tensor, count_madds, no_grad
from .train import (
    TrainConfig,
    charbonnier,
    cosine_lr,
    joint_finetune,
    pretrain_q2q,
    pretrain_q2r,
    train_phase,
)

__version__ = "0.1.0"

__all__ = [
    "CfaSpec",
    "ConfigError",
    "CostReport",
    "DataError",
    "EvalReport",
    "EvalRow",
    "HybridEvsError",
    "ModelConfig",
    "ShapeError",
    "Tensor",
    "TrainConfig",
    "TwoStageModel",
    "VerificationError",
    "apply_event_mask",
    "bilinear_demosaic",
    "charbonnier",
    "coarse_inpaint",
    "cosine_lr",
    "count_flops",
    "count_madds",
    "count_params",
    "demosaic_image",
    "eval_dataset",
    "finite_diff_check",
    "global_attention_madds",
    "joint_finetune",
    "load_checkpoint",
    "make_position_maps",
    "mosaic_quad_bayer",
    "no_grad",
    "pretrain_q2q",
    "pretrain_q2r",
    "psnr",
    "save_checkpoint",
    "sel_scan_1d",
    "selective_scan",
    "ssim",
    "synth_clean_quad",
    "synthetic_rgb",
    "train_phase",
    "variant_config",
    "__version__",
]
