from . import checkpoint, layers, optim, tensor

__all__ = ["checkpoint", "layers", "optim", "tensor"]
