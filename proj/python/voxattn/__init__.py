"""Python surface over the native volumetric attention kernels."""

from ._voxattn import (
    ConfigError,
    DimensionError,
    IoError,
    NumericError,
    ParseError,
    StateError,
    ca_forward,
    config_hash,
    conv3d,
    cosine_lr,
    da_forward,
    gap_global,
    gap_spatial,
    gradcheck_worst,
    maxpool3d,
    param_count,
    read_volume,
    relu,
    roc_auc,
    run_cli,
    sigmoid,
    write_volume,
)

__all__ = [
    "ConfigError",
    "DimensionError",
    "IoError",
    "NumericError",
    "ParseError",
    "StateError",
    "ca_forward",
    "config_hash",
    "conv3d",
    "cosine_lr",
    "da_forward",
    "gap_global",
    "gap_spatial",
    "gradcheck_worst",
    "maxpool3d",
    "param_count",
    "read_volume",
    "relu",
    "roc_auc",
    "run_cli",
    "sigmoid",
    "write_volume",
]
