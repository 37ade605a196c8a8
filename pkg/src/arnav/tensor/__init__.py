"""Dense-tensor engine: reverse-mode autodiff, layer primitives, AdamW,
warm-restart cosine schedule, seeded rng streams and checkpoint io."""

from . import autodiff, checkpoint, gradcheck, nn, optim, rng
from .autodiff import Parameter, ShapeError, Tensor, no_grad
from .gradcheck import grad_check
from .optim import AdamW, CosineWarmRestarts
from .rng import stream

__all__ = [
    "autodiff",
    "checkpoint",
    "gradcheck",
    "nn",
    "optim",
    "rng",
    "Parameter",
    "ShapeError",
    "Tensor",
    "no_grad",
    "grad_check",
    "AdamW",
    "CosineWarmRestarts",
    "stream",
]
