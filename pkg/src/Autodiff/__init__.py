# Autodiff package
from .tensor import Tensor, as_tensor, resolve_dtype
from .tape import GradientTape, TapeNode, backward

__all__ = ["Tensor", "as_tensor", "resolve_dtype", "GradientTape", "TapeNode", "backward"]
