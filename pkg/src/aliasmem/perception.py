"""Appearance tokens, EE-anchored geometry codes, biased cross-view attention and FiLM fusion."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .numerics import T, Linear, MLP, Module, MultiHeadAttention, Parameter, Tensor


@dataclass
class PerceptionConfig:
    image_size: int = 32
    channels: int = 3
    patch: int = 8
    width: int = 64
    code_width: int = 32
    geo_hidden: int = 32
    heads: int = 4
    dorsal: bool = True
    # second direction reads the hand tokens' update instead of the pre-update front tokens
    sequential_cross: bool = False

    @property
    def tokens_per_view(self) -> int:
        return (self.image_size // self.patch) ** 2


def patchify(images: np.ndarray, patch: int) -> np.ndarray:
    """``(..., H, W, C)`` to ``(..., N, patch*patch*C)`` in row-major cell order."""
    *lead, H, W, C = images.shape
    if H % patch or W % patch:
        raise ConfigError(f"image {H}x{W} not divisible by patch size {patch}")
    gh, gw = H // patch, W // patch
    x = images.reshape(*lead, gh, patch, gw, patch, C)
    n = len(lead)
    x = x.transpose(*range(n), n, n + 2, n + 1, n + 3, n + 4)
    return x.reshape(*lead, gh * gw, patch * patch * C)


class PatchEncoder(Module):
    """Trainable patchify encoder with a learned per-position embedding."""

    def __init__(self, cfg: PerceptionConfig, rng: np.random.Generator):
        self.patch = cfg.patch
        self.image_size = cfg.image_size
        self.proj = Linear(cfg.patch * cfg.patch * cfg.channels, cfg.width, rng)
        self.pos = Parameter(rng.normal(0.0, 0.02, size=(cfg.tokens_per_view, cfg.width)))

    def __call__(self, images: np.ndarray) -> Tensor:
        if images.shape[-3] != self.image_size or images.shape[-2] != self.image_size:
            raise ConfigError(f"expected {self.image_size}x{self.image_size} images, got {images.shape[-3:-1]}")
        x = T.as_tensor(patchify(images, self.patch), dtype=self.pos.dtype)
        return self.proj(x) + self.pos


class GeometryEncoder(Module):
    """Descriptor ``(..., N, 7)`` to conditioning codes ``(..., N, d_c)`` and unary biases ``(..., N)``."""

    def __init__(self, cfg: PerceptionConfig, rng: np.random.Generator):
        self.codes = MLP(7, cfg.geo_hidden, cfg.code_width, rng)
        self.unary = MLP(7, cfg.geo_hidden, 1, rng, zero_out=True)

    def __call__(self, desc) -> tuple[Tensor, Tensor]:
        g = T.as_tensor(desc, dtype=self.codes.fc1.weight.dtype)
        b = self.unary(g)
        return self.codes(g), T.reshape(b, b.shape[:-1])


class CrossViewBlock(Module):
    """Bidirectional cross-view attention; both directions read the pre-update tokens unless
    ``sequential_cross`` is set, in which case the hand view attends to the enhanced front view."""

    def __init__(self, cfg: PerceptionConfig, rng: np.random.Generator):
        self.sequential = cfg.sequential_cross
        self.attn = MultiHeadAttention(cfg.width, cfg.heads, rng, zero_out=True)

    def enhance(self, v_a: Tensor, v_b: Tensor, bias=None, return_weights: bool = False):
        out, w = self.attn(v_a, v_b, bias, return_weights=True)
        return (v_a + out, w) if return_weights else v_a + out

    def __call__(self, v_f: Tensor, v_h: Tensor, bias_fh=None, bias_hf=None):
        vf_bar = self.enhance(v_f, v_h, bias_fh)
        return vf_bar, self.enhance(v_h, vf_bar if self.sequential else v_f, bias_hf)


def logit_bias(epi, b_q: Tensor, b_k: Tensor) -> Tensor:
    """``B_epi + b_q 1^T + 1 b_k^T`` for queries ``(..., N_q)`` and keys ``(..., N_k)``."""
    unary = T.expand_dims(b_q, -1) + T.expand_dims(b_k, -2)
    return unary if epi is None else unary + T.as_tensor(epi, dtype=unary.dtype)


class FiLM(Module):
    """``gamma(C) * V + beta(C)`` with gamma = 1 + linear, beta = linear, both zero at init."""

    def __init__(self, code_width: int, width: int, rng: np.random.Generator):
        self.gamma = Linear(code_width, width, rng, zero=True)
        self.beta = Linear(code_width, width, rng, zero=True)

    def __call__(self, v: Tensor, codes: Tensor) -> Tensor:
        return v * (self.gamma(codes) + 1.0) + self.beta(codes)


class Perception(Module):
    """Two views to the fused token matrix ``(..., N_f + N_h, d)``, front rows first."""

    def __init__(self, cfg: PerceptionConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.enc_front = PatchEncoder(cfg, rng)
        self.enc_hand = PatchEncoder(cfg, rng)
        self.cross = CrossViewBlock(cfg, rng)
        if cfg.dorsal:
            self.geo = GeometryEncoder(cfg, rng)
            self.film = FiLM(cfg.code_width, cfg.width, rng)

    def __call__(self, front: np.ndarray, hand: np.ndarray, desc_front=None, desc_hand=None,
                 epi_fh=None, epi_hf=None) -> Tensor:
        """``epi_fh`` biases front queries over hand keys, ``epi_hf`` the reverse direction."""
        v_f = self.enc_front(front)
        v_h = self.enc_hand(hand)
        if not self.cfg.dorsal:
            vf_bar, vh_bar = self.cross(v_f, v_h)
            return T.concat([vf_bar, vh_bar], axis=-2)
        c_f, b_f = self.geo(desc_front)
        c_h, b_h = self.geo(desc_hand)
        vf_bar, vh_bar = self.cross(v_f, v_h, logit_bias(epi_fh, b_f, b_h), logit_bias(epi_hf, b_h, b_f))
        return T.concat([self.film(vf_bar, c_f), self.film(vh_bar, c_h)], axis=-2)
