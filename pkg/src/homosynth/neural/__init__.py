from . import autograd
from .autograd import Tensor, no_grad, set_debug
from .gradcheck import gradcheck
from .layers import (
    ARNBlock,
    CausalSelfAttention,
    Conv2d,
    ConvTranspose2d,
    GRU,
    LayerNorm,
    Linear,
    Module,
)
from .networks import CARN, CarnConfig, LifterNetwork, carn_forward

__all__ = [
    "ARNBlock",
    "CARN",
    "CarnConfig",
    "CausalSelfAttention",
    "Conv2d",
    "ConvTranspose2d",
    "GRU",
    "LayerNorm",
    "LifterNetwork",
    "Linear",
    "Module",
    "Tensor",
    "autograd",
    "carn_forward",
    "gradcheck",
    "no_grad",
    "set_debug",
]
