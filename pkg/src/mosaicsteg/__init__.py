"""Invertible mosaic multi-image steganography toolkit."""

from .autodiff import (
    AdamState,
    ContractError,
    DimensionError,
    Module,
    Tape,
    Tensor,
    adam_step,
    backward,
    gradcheck,
)
from .coupling import CInvBlock, CondExtractor, DenseSubnet, InvBlock, cond_features
from .metrics import CDPoint, cd_curve, mae, nmi, psnr, rmse, ssim
from .mosaic import MosaicLayout, grid_shape, splice, split
from .orthoconv import cayley, decompose, recompose
from .pipeline import (
    RevealOutput,
    SmileNet,
    StegoOutput,
    hide,
    quantize,
    reveal,
    reveal_full,
    sample_z,
)
from .training import LossWeights, TrainConfig, loss_aux, loss_hide, loss_sec, train
from .wavelet import dwt_haar, idwt_haar

__version__ = "0.1.0"

__all__ = [
    "AdamState", "ContractError", "DimensionError", "Module", "Tape", "Tensor",
    "adam_step", "backward", "gradcheck",
    "CInvBlock", "CondExtractor", "DenseSubnet", "InvBlock", "cond_features",
    "CDPoint", "cd_curve", "mae", "nmi", "psnr", "rmse", "ssim",
    "MosaicLayout", "grid_shape", "splice", "split",
    "cayley", "decompose", "recompose",
    "RevealOutput", "SmileNet", "StegoOutput", "hide", "quantize",
    "reveal", "reveal_full", "sample_z",
    "LossWeights", "TrainConfig", "loss_aux", "loss_hide", "loss_sec", "train",
    "dwt_haar", "idwt_haar",
    "__version__",
]
