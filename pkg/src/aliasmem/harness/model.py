"""Full pipeline assembly, per-frame geometry precomputation and ablation variants."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .. import geometry as G
from ..camosim import PHASES
from ..camosim.dataset import default_calibration
from ..camosim.world import TASK_IDS
from ..errors import ConfigError
from ..holohead import HoloConfig, HoloHead
from ..memory import MemoryConfig, build_memory
from ..numerics import Linear, Module, Tensor
from ..perception import Perception, PerceptionConfig
from ..policy import PolicyConfig, VelocityNet
from .config import VARIANTS, RunConfig

log = logging.getLogger(__name__)

MEMORY_FOR_VARIANT = {"no_memory": "no_memory", "memory_bank": "memory_bank", "vanilla_ssm": "vanilla_ssm"}


@dataclass
class FrameGeometry:
    """Per-frame dorsal inputs: descriptors ``(n, N, 7)`` per view and both epipolar biases ``(n, N, N)``."""
    desc_front: np.ndarray
    desc_hand: np.ndarray
    epi_fh: np.ndarray
    epi_hf: np.ndarray


def frame_geometry(ee_pos: np.ndarray, cells: int, epsilon: float, temperature: float,
                   calibration: dict | None = None) -> FrameGeometry:
    """Geometry for EE positions ``(n, 3)`` with the front camera fixed and the hand camera on the EE."""
    ee_pos = np.asarray(ee_pos, dtype=float)
    grid = G.PatchGrid.square(cells).centers
    calibration = calibration or default_calibration()
    Kf, _, Rf, tf = calibration["front"]
    Kh, _, Rh, mount_t = calibration["hand"]
    n = len(ee_pos)
    Rf_b = np.broadcast_to(Rf, (n, 3, 3))
    tf_b = np.broadcast_to(tf, (n, 3))
    Rh_b = np.broadcast_to(Rh, (n, 3, 3))
    th_b = mount_t - ee_pos @ np.asarray(Rh).T  # camera = Rh (p - ee) + mount_t
    desc_f = G.descriptor_arrays(Kf, Rf_b, tf_b, ee_pos, grid)
    desc_h = G.descriptor_arrays(Kh, Rh_b, th_b, ee_pos, grid)
    F_fh = G.fundamental_arrays(Kf, Rf_b, tf_b, Kh, Rh_b, th_b)
    F_hf = np.swapaxes(F_fh, -1, -2)
    epi_fh = G.epipolar_bias(F_fh, grid, grid, epsilon, temperature)
    epi_hf = G.epipolar_bias(F_hf, grid, grid, epsilon, temperature)
    return FrameGeometry(desc_f, desc_h, epi_fh, epi_hf)


def configs(cfg: RunConfig) -> tuple[PerceptionConfig, MemoryConfig, HoloConfig, PolicyConfig]:
    pc = PerceptionConfig(image_size=cfg.image_size, patch=cfg.patch, width=cfg.width, code_width=cfg.code_width,
                          geo_hidden=cfg.geo_hidden, heads=cfg.perception_heads,
                          dorsal=cfg.variant != "no_dorsal", sequential_cross=cfg.sequential_cross)
    mc = MemoryConfig(width=cfg.width, work_width=cfg.work_width, anchors=cfg.anchors, slots=cfg.slots,
                      layers=cfg.layers, episodic_state=cfg.episodic_state, working_state=cfg.working_state,
                      expand=cfg.expand, conv=cfg.conv, priors=cfg.prior_values(),
                      flexible_init=cfg.flexible_init, tokens_per_view=pc.tokens_per_view,
                      phases=PHASES[cfg.task], use_phase=cfg.use_phase, tasks=len(TASK_IDS),
                      router_hidden=cfg.router_hidden)
    hc = HoloConfig(anchors=cfg.holo_anchors, compass=cfg.holo_compass, hidden=cfg.holo_hidden,
                    latent=cfg.holo_latent, fuse_into_policy=cfg.holo_fuse)
    po = PolicyConfig(horizon=cfg.horizon, width=cfg.policy_width, depth=cfg.policy_depth,
                      heads=cfg.policy_heads, steps=cfg.flow_steps)
    return pc, mc, hc, po


class Model(Module):
    """Perception, memory, imagination head and flow policy; only ``h`` crosses into the heads."""

    def __init__(self, cfg: RunConfig, rng: np.random.Generator):
        pc, mc, hc, po = configs(cfg)
        self.variant = cfg.variant
        self.task_id = TASK_IDS[cfg.task]
        self.perception = Perception(pc, rng)
        self.memory = build_memory(MEMORY_FOR_VARIANT.get(cfg.variant, "full"), mc, rng)
        self.holo = HoloHead(hc, mc.work_width, rng) if cfg.variant != "no_holohead" else None
        self.policy = VelocityNet(po, mc.work_width, rng)
        self.holo_to_policy = (Linear(hc.latent, po.width, rng, zero=True)
                               if hc.fuse_into_policy and self.holo is not None else None)
        self.name_parameters()

    @property
    def dorsal(self) -> bool:
        return self.perception.cfg.dorsal

    def init_state(self, batch: int):
        return self.memory.init_state(batch)

    def encode(self, front, hand, geo: FrameGeometry | None, proprio, phase, state=None):
        """Frames ``(B, T, ...)`` to decision states ``h (B, T, d_w)`` and the carried memory state."""
        front = np.asarray(front, dtype=np.float32) / 255.0 if front.dtype == np.uint8 else front
        hand = np.asarray(hand, dtype=np.float32) / 255.0 if hand.dtype == np.uint8 else hand
        if self.dorsal:
            x = self.perception(front, hand, geo.desc_front, geo.desc_hand, geo.epi_fh, geo.epi_hf)
        else:
            x = self.perception(front, hand)
        task = np.full(x.shape[0], self.task_id)
        return self.memory(x, proprio, phase, task, state)

    def condition(self, h: Tensor) -> Tensor:
        c = self.policy.condition(h)
        if self.holo_to_policy is not None:
            c = c + self.holo_to_policy(self.holo.latent(h))
        return c


def build_variant(cfg: RunConfig, rng: np.random.Generator | None = None) -> Model:
    if cfg.variant not in VARIANTS:
        raise ConfigError(f"unknown variant {cfg.variant!r}")
    model = Model(cfg, rng if rng is not None else np.random.default_rng(cfg.seed))
    log.info("variant %s: %d parameters", cfg.variant, model.num_parameters())
    return model
