from . import tensor as T
from .checkpoint import load_checkpoint, read_checkpoint, save_checkpoint
from .gradcheck import GradCheckReport, grad_check
from .nn import (LayerNorm, Linear, MLP, Embedding, Module, MultiHeadAttention, Parameter,
                 attention)
from .optim import AdamW, clip_grad_norm, ema_update, optimizer_step, warmup_cosine
from .tensor import Tensor, no_grad, precision

__all__ = [
    "T", "Tensor", "Parameter", "Module", "Linear", "LayerNorm", "MLP", "Embedding",
    "MultiHeadAttention", "attention", "no_grad", "precision", "grad_check", "GradCheckReport",
    "AdamW", "optimizer_step", "clip_grad_norm", "ema_update", "warmup_cosine",
    "save_checkpoint", "load_checkpoint", "read_checkpoint",
]
