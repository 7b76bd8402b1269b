# Network package
from .unet import Model, build_unet, forward, predict
from .registry import partition_kernels, registry_digest, total_scalars

__all__ = [
    "Model",
    "build_unet",
    "forward",
    "predict",
    "partition_kernels",
    "registry_digest",
    "total_scalars",
]
