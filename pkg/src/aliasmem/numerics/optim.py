"""AdamW with decoupled weight decay, global-norm clipping, EMA shadows and the LR schedule."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .nn import Parameter


def optimizer_step(params: Sequence[Parameter], grads: Sequence[np.ndarray], lr: float,
                   betas: tuple[float, float] = (0.9, 0.999), weight_decay: float = 1e-6,
                   step_index: int = 1, eps: float = 1e-8) -> None:
    """One AdamW update in place. Moments live on each Parameter."""
    if step_index < 1:
        raise ValueError("step_index starts at 1")
    if lr <= 0:
        raise ValueError("lr must be positive")
    b1, b2 = betas
    c1 = 1.0 - b1 ** step_index
    c2 = 1.0 - b2 ** step_index
    for p, g in zip(params, grads):
        if g is None:
            continue
        g = np.asarray(g, dtype=p.dtype)
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter {p.name} shape {p.shape}")
        if p.exp_avg is None:
            p.exp_avg = np.zeros_like(p.data)
            p.exp_avg_sq = np.zeros_like(p.data)
        p.exp_avg = b1 * p.exp_avg + (1.0 - b1) * g
        p.exp_avg_sq = b2 * p.exp_avg_sq + (1.0 - b2) * g * g
        m_hat = p.exp_avg / c1
        v_hat = p.exp_avg_sq / c2
        p.data = (p.data - lr * weight_decay * p.data
                  - lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.dtype, copy=False)


class AdamW:
    def __init__(self, params: Sequence[Parameter], lr: float = 1e-4,
                 betas: tuple[float, float] = (0.9, 0.999), weight_decay: float = 1e-6,
                 eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.weight_decay = weight_decay
        self.eps = eps
        self.step_count = 0

    def step(self, lr: float | None = None) -> None:
        self.step_count += 1
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        optimizer_step(self.params, grads, lr or self.lr, self.betas, self.weight_decay,
                       self.step_count, self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def clip_grad_norm(params: Sequence[Parameter], max_norm: float) -> float:
    """Scale gradients so their global L2 norm is at most ``max_norm``; returns the pre-clip norm."""
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(np.square(p.grad, dtype=np.float64)))
    norm = math.sqrt(total)
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * p.dtype.type(scale)
    return norm


def ema_update(params: Sequence[Parameter], decay: float) -> None:
    if not 0.0 <= decay < 1.0:
        raise ValueError("EMA decay must lie in [0, 1)")
    for p in params:
        if p.ema is None:
            p.ema = p.data.copy()
            continue
        if p.ema.shape != p.shape:
            raise ValueError(f"EMA shadow shape mismatch for {p.name}")
        p.ema = (decay * p.ema + (1.0 - decay) * p.data).astype(p.dtype, copy=False)


def warmup_cosine(step: int, total: int, base_lr: float, warmup: int, min_ratio: float = 0.0) -> float:
    """Linear warmup to ``base_lr`` then cosine decay to ``min_ratio * base_lr``."""
    if warmup > 0 and step <= warmup:
        return base_lr * step / warmup
    span = max(total - warmup, 1)
    progress = min(max(step - warmup, 0) / span, 1.0)
    return base_lr * (min_ratio + (1.0 - min_ratio) * 0.5 * (1.0 + math.cos(math.pi * progress)))
