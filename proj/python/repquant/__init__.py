"""Reparameterizable conv blocks, exact deploy-form fusion, and INT8
quantization primitives, backed by the C++ core."""

from repquant._core import (
    Block,
    RepqConfigError,
    RepqFusionError,
    RepqNumericError,
    batch_norm_infer,
    compute_scale,
    conv2d,
    cosine_lr,
    fake_quant,
    fold_bn,
    relu,
)

__all__ = [
    "Block",
    "RepqConfigError",
    "RepqFusionError",
    "RepqNumericError",
    "batch_norm_infer",
    "compute_scale",
    "conv2d",
    "cosine_lr",
    "fake_quant",
    "fold_bn",
    "relu",
]

__version__ = "0.1.0"
