"""Multi-resolution residual CNN for screen-moire removal.

Pure numpy, double precision, hand-written backward rules; every layer is
verifiable against central finite differences.
"""

from .errors import ConfigError, DivergenceError, FormatError, ShapeError
from .gradcheck import GradCheckReport, finite_diff_check
from .layers import (
    AdaIn,
    CdrBlock,
    ChannelAttention,
    Conv2d,
    DfeEncoderStep,
    DfeStats,
    Downsample,
    GlobalAvgPool,
    NonLocalBlock,
    Param,
    PixelShuffle,
    PReLU,
    UpsampleBlock,
    pixel_shuffle,
    pixel_unshuffle,
)
from .metrics import psnr, ssim
from .moire import (
    ImagePair,
    SynthRanges,
    SynthSpec,
    make_dataset,
    sample_patch,
    split_dataset,
    synth_pair,
)
from .network import (
    DemoireNet,
    LossConfig,
    ModelConfig,
    charbonnier_loss,
    count_flops,
    count_params,
    desk_config,
    grow_model,
    reconstruct,
    reference_config,
)
from .optim import Adam, Schedule, adam_step, lr_at
from .checkpoint import Checkpoint, load_checkpoint, restore, save_checkpoint
from .tensor import Tensor, add, elementwise_mul, from_array, full, mul_scalar, uniform, zeros
from .train import TrainResult, demoire_image, evaluate_pairs, train

__version__ = "0.1.0"

__all__ = [
    "Adam", "AdaIn", "CdrBlock", "ChannelAttention", "Checkpoint", "ConfigError",
    "Conv2d", "DemoireNet", "DfeEncoderStep", "DfeStats", "DivergenceError",
    "Downsample", "FormatError", "GlobalAvgPool", "GradCheckReport", "ImagePair",
    "LossConfig", "ModelConfig", "NonLocalBlock", "Param", "PixelShuffle", "PReLU",
    "Schedule", "ShapeError", "SynthRanges", "SynthSpec", "Tensor", "TrainResult",
    "UpsampleBlock", "add", "adam_step", "charbonnier_loss", "count_flops",
    "count_params", "demoire_image", "desk_config", "elementwise_mul",
    "evaluate_pairs", "finite_diff_check", "from_array", "full", "grow_model",
    "load_checkpoint", "lr_at", "make_dataset", "mul_scalar", "pixel_shuffle",
    "pixel_unshuffle", "psnr", "reconstruct", "reference_config", "restore",
    "sample_patch", "save_checkpoint", "split_dataset", "ssim", "synth_pair",
    "train", "uniform", "zeros",
]
