"""Finite-difference check of the complete training loss on a tiny float64 model and a 4-frame chunk."""

from __future__ import annotations

import numpy as np

from ..camosim import SimConfig, record_dataset
from ..numerics import GradCheckReport, grad_check, precision
from ..numerics.gradcheck import fd_resolution
from .config import RunConfig
from .data import assemble, prepare
from .model import build_variant
from .train import compute_losses

TINY = dict(
    image_size=16, patch=8, width=8, code_width=4, geo_hidden=8, perception_heads=2,
    work_width=8, anchors=2, slots=2, layers=2, episodic_state=2, working_state=2, expand=2, conv=2,
    priors="0.02,flex", router_hidden=8, holo_anchors=2, holo_compass=2, holo_hidden=8, holo_latent=4,
    policy_width=8, policy_depth=1, policy_heads=2, horizon=4, chunk_len=4, loss_window=2, batch=1,
)


def tiny_config(**overrides) -> RunConfig:
    return RunConfig(**{**TINY, **overrides})


def full_loss_check(cfg: RunConfig | None = None, epsilon: float = 3e-4, max_entries: int | None = 6,
                    seed: int = 0, tolerance: float = 1e-4) -> GradCheckReport:
    """Central differences of flow + weighted waypoint losses w.r.t. every parameter tensor.

    The chunk is the 4 stored frames ending at the first acting frame of one
    recorded episode, so both observe and act frames pass through the memory.
    The step stays small enough that the stencil rarely straddles the kink of
    the L1 waypoint loss. Entries whose gradient lies below the difference
    quotient's own roundoff resolution (divided by ``tolerance``) are compared
    in absolute terms.
    """
    cfg = cfg or tiny_config()
    sim = SimConfig(image_size=cfg.image_size, min_swaps=cfg.min_swaps, max_swaps=cfg.max_swaps)
    with precision(np.float64):
        ds = record_dataset(cfg.task, 1, seed, sim)
        ep = prepare(ds, cfg)[0]
        ep.geometry = type(ep.geometry)(*(a.astype(np.float64) for a in (
            ep.geometry.desc_front, ep.geometry.desc_hand, ep.geometry.epi_fh, ep.geometry.epi_hf)))
        act = int(np.flatnonzero(ep.episode.psi == 1)[0])
        batch = assemble([ep], [act + 1], cfg)
        batch.proprio = batch.proprio.astype(np.float64)
        batch.way2d = batch.way2d.astype(np.float64)
        batch.way3d = batch.way3d.astype(np.float64)
        model = build_variant(cfg, np.random.default_rng([seed, 1]))
        model.astype(np.float64)
        # perturb the zero-initialized output layers so every path carries gradient
        rng = np.random.default_rng([seed, 3])
        for p in model.parameters():
            if not np.any(p.data):
                p.data = rng.normal(0.0, 0.1, size=p.shape)

        def loss():
            return compute_losses(model, batch, cfg, np.random.default_rng([seed, 4]))["loss"]

        floor = max(1e-8, fd_resolution(loss().item(), epsilon) / tolerance)
        return grad_check(loss, model.parameters(), epsilon=epsilon, max_entries=max_entries,
                          rng=np.random.default_rng([seed, 5]), floor=floor)
