"""Rectified-flow trajectory policy conditioned on a single projected memory token."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DivergenceError
from .numerics import T, LayerNorm, Linear, MLP, Module, MultiHeadAttention, Parameter, Tensor, no_grad


@dataclass
class PolicyConfig:
    horizon: int = 8
    pose_dim: int = 8
    width: int = 64
    depth: int = 3
    heads: int = 4
    mlp_ratio: int = 4
    steps: int = 50
    time_scale: float = 1000.0


@dataclass
class FlowSample:
    x0: np.ndarray
    x1: np.ndarray
    tau: np.ndarray
    x_tau: np.ndarray
    u: np.ndarray


def make_flow_sample(x1: np.ndarray, rng: np.random.Generator, tau=None) -> FlowSample:
    """Noise draw, uniform flow time per sample, straight-line interpolant and its velocity."""
    x1 = np.asarray(x1)
    if not np.all(np.isfinite(x1)):
        raise ValueError("flow target contains non-finite values")
    x0 = rng.standard_normal(x1.shape).astype(x1.dtype)
    if tau is None:
        tau = rng.uniform(size=x1.shape[:-2]).astype(x1.dtype)
    tau = np.asarray(tau, dtype=x1.dtype)
    t = tau[..., None, None]
    return FlowSample(x0, x1, tau, (1 - t) * x0 + t * x1, x1 - x0)


def flow_loss(pred: Tensor, target, mask) -> Tensor:
    """Mean squared error over valid ``(step, dim)`` entries; an empty mask gives 0."""
    mask = np.asarray(mask, dtype=bool)
    count = int(mask.sum()) * pred.shape[-1]
    if count == 0:
        return T.tsum(pred * 0.0)
    w = mask[..., None].astype(pred.dtype)
    return T.tsum((pred - target) ** 2 * w) * (1.0 / count)


def sinusoidal(tau: np.ndarray, dim: int, scale: float) -> np.ndarray:
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    angles = np.asarray(tau, dtype=float)[..., None] * scale * freqs
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=-1)


def _modulate(x: Tensor, shift: Tensor, scale: Tensor) -> Tensor:
    return x * (T.expand_dims(scale, -2) + 1.0) + T.expand_dims(shift, -2)


class FlowBlock(Module):
    """Self-attention, cross-attention to the conditioning token and feed-forward, AdaLN-gated."""

    def __init__(self, cfg: PolicyConfig, rng: np.random.Generator):
        w = cfg.width
        self.self_attn = MultiHeadAttention(w, cfg.heads, rng)
        self.cross_attn = MultiHeadAttention(w, cfg.heads, rng)
        self.ffn = MLP(w, cfg.mlp_ratio * w, w, rng)
        self.norms = [LayerNorm(w, affine=False) for _ in range(3)]
        self.ada = Linear(w, 9 * w, rng, zero=True)

    def __call__(self, x: Tensor, cond: Tensor, e: Tensor) -> Tensor:
        w = x.shape[-1]
        mods = self.ada(T.silu(e))
        chunk = [mods[..., i * w:(i + 1) * w] for i in range(9)]
        gate = lambda i: T.expand_dims(chunk[3 * i + 2], -2)
        h = _modulate(self.norms[0](x), chunk[0], chunk[1])
        x = x + gate(0) * self.self_attn(h, h)
        h = _modulate(self.norms[1](x), chunk[3], chunk[4])
        x = x + gate(1) * self.cross_attn(h, cond)
        h = _modulate(self.norms[2](x), chunk[6], chunk[7])
        return x + gate(2) * self.ffn(h)


class VelocityNet(Module):
    def __init__(self, cfg: PolicyConfig, d_cond: int, rng: np.random.Generator):
        w = cfg.width
        self.cfg = cfg
        self.ctx = Linear(d_cond, w, rng)
        self.inp = Linear(cfg.pose_dim, w, rng)
        self.pos = Parameter(rng.normal(0.0, 0.02, size=(cfg.horizon, w)))
        self.time = MLP(w, w, w, rng)
        self.blocks = [FlowBlock(cfg, rng) for _ in range(cfg.depth)]
        self.final_norm = LayerNorm(w, affine=False)
        self.final_ada = Linear(w, 2 * w, rng, zero=True)
        self.out = Linear(w, cfg.pose_dim, rng, zero=True)

    def condition(self, h: Tensor) -> Tensor:
        """The single projected memory token ``c_t``."""
        return self.ctx(h)

    def __call__(self, x_tau, tau, c: Tensor) -> Tensor:
        """``x_tau (..., H, D)``, ``tau (...)`` and ``c (..., width)`` to velocities ``(..., H, D)``."""
        dtype = c.dtype
        x = self.inp(T.as_tensor(x_tau, dtype=dtype)) + self.pos
        e = self.time(T.as_tensor(sinusoidal(tau, self.cfg.width, self.cfg.time_scale), dtype=dtype))
        cond = T.expand_dims(c, -2)
        for block in self.blocks:
            x = block(x, cond, e)
        w = self.cfg.width
        mods = self.final_ada(T.silu(e))
        x = _modulate(self.final_norm(x), mods[..., :w], mods[..., w:])
        out = self.out(x)
        if not np.all(np.isfinite(out.data)):
            raise DivergenceError(f"non-finite velocity at flow time {np.asarray(tau).ravel()[:4]}")
        return out


def euler_integrate(velocity: Callable[[np.ndarray, np.ndarray], np.ndarray], x0: np.ndarray,
                    steps: int) -> np.ndarray:
    """Explicit Euler from flow time 0 to 1 with ``steps`` uniform steps."""
    if steps < 1:
        raise ValueError("steps must be at least 1")
    x = np.array(x0, copy=True)
    dt = 1.0 / steps
    lead = x.shape[:-2]
    for k in range(steps):
        x = x + dt * velocity(x, np.full(lead, k * dt, dtype=x.dtype))
        if not np.all(np.isfinite(x)):
            raise DivergenceError(f"sampling state non-finite after step {k + 1}")
    return x


def sample(net: VelocityNet, c: Tensor, rng: np.random.Generator, steps: int | None = None) -> np.ndarray:
    """Draw trajectories ``(..., H, D)`` for conditioning tokens ``c (..., width)``."""
    cfg = net.cfg
    x0 = rng.standard_normal(c.shape[:-1] + (cfg.horizon, cfg.pose_dim)).astype(c.dtype)
    with no_grad():
        return euler_integrate(lambda x, tau: net(x, tau, c).data, x0, steps or cfg.steps)
