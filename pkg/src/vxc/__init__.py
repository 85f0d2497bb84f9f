"""Joint learned image compression and multi-view voxel reconstruction on a numpy autodiff core."""

from vxc.codec import CodecConfig, CodecModel, compression_ratio
from vxc.estimators import ImageCodec, JointReconstructor
from vxc.exceptions import (ConfigurationError, DimensionError, DomainError, FormatError, NonFiniteLossError,
                            UsageError, VXCError)
from vxc.joint import JointConfig, build_model
from vxc.recon3d import Recon3DConfig, iou
from vxc.trainer import TrainConfig, Trainer

__version__ = "0.1.0"

__all__ = [
    "CodecConfig", "CodecModel", "compression_ratio", "ImageCodec", "JointReconstructor",
    "ConfigurationError", "DimensionError", "DomainError", "FormatError", "NonFiniteLossError",
    "UsageError", "VXCError", "JointConfig", "build_model", "Recon3DConfig", "iou",
    "TrainConfig", "Trainer",
]
