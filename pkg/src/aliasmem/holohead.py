"""Future-waypoint imagination head: near/far offset schedule, dual 2D/3D decoder and its L1 loss."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .numerics import T, Linear, MLP, Module, Tensor


@dataclass(frozen=True)
class WaypointSchedule:
    anchors: tuple[int, ...]
    compass: tuple[int, ...]

    @property
    def offsets(self) -> np.ndarray:
        return np.array(self.anchors + self.compass, dtype=np.int64)


def waypoint_schedule(n_anchor: int, n_compass: int, remaining: int) -> WaypointSchedule:
    """Anchors are the next ``n_anchor`` frames; compass offsets are log-spaced out to ``remaining``.

    ``remaining`` is the number of frames left in the current phase. When it does
    not exceed ``n_anchor`` every compass offset collapses to the phase endpoint.
    """
    if n_anchor < 1 or n_compass < 2 or remaining < 1:
        raise ConfigError("schedule needs n_anchor >= 1, n_compass >= 2, remaining >= 1")
    anchors = tuple(range(1, n_anchor + 1))
    if remaining <= n_anchor:
        return WaypointSchedule(anchors, (remaining,) * n_compass)
    compass = []
    for j in range(n_compass):
        a = j / (n_compass - 1)
        compass.append(int(math.floor((n_anchor + 1) ** (1.0 - a) * remaining ** a)))
    compass[-1] = remaining
    return WaypointSchedule(anchors, tuple(compass))


def target_frames(t: int, phase_end: int, last_frame: int, n_anchor: int, n_compass: int) -> np.ndarray:
    """Absolute frame indices of every scheduled waypoint, clamped to the recorded frames."""
    remaining = max(phase_end - t, 1)
    offsets = waypoint_schedule(n_anchor, n_compass, remaining).offsets
    return np.minimum(t + offsets, last_frame)


@dataclass
class HoloConfig:
    anchors: int = 8
    compass: int = 8
    hidden: int = 64
    latent: int = 32
    fuse_into_policy: bool = False

    @property
    def count(self) -> int:
        return self.anchors + self.compass


class HoloHead(Module):
    """Shared trunk to a geometric latent, then separate 3D and 2D waypoint branches."""

    def __init__(self, cfg: HoloConfig, d_in: int, rng: np.random.Generator):
        self.cfg = cfg
        self.trunk = MLP(d_in, cfg.hidden, cfg.latent, rng)
        self.branch3d = Linear(cfg.latent, cfg.count * 3, rng, zero=True)
        self.branch2d = Linear(cfg.latent, cfg.count * 2, rng, zero=True, bias_init=0.5)

    def latent(self, h: Tensor) -> Tensor:
        return T.gelu(self.trunk(h))

    def __call__(self, h: Tensor) -> tuple[Tensor, Tensor]:
        """``h (..., d_w)`` to ``(w2d (..., K, 2), w3d (..., K, 3))``."""
        g = self.latent(h)
        lead = h.shape[:-1]
        w3 = T.reshape(self.branch3d(g), lead + (self.cfg.count, 3))
        w2 = T.reshape(self.branch2d(g), lead + (self.cfg.count, 2))
        return w2, w3


def holo_terms(pred2d: Tensor, pred3d: Tensor, target2d, target3d) -> tuple[Tensor, Tensor]:
    """Mean absolute 2D and 3D waypoint errors over waypoints, coordinates and batch."""
    if pred2d.shape != np.shape(target2d) or pred3d.shape != np.shape(target3d):
        raise ConfigError("waypoint prediction and target shapes differ")
    return T.mean(T.absolute(pred2d - target2d)), T.mean(T.absolute(pred3d - target3d))


def holo_loss(pred2d: Tensor, pred3d: Tensor, target2d, target3d,
              weight2d: float = 0.5, weight3d: float = 0.5) -> Tensor:
    l2, l3 = holo_terms(pred2d, pred3d, target2d, target3d)
    return l2 * weight2d + l3 * weight3d
