"""Chunked training loop: flow matching plus the auxiliary waypoint losses."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..camosim import Dataset
from ..errors import DivergenceError
from ..holohead import holo_terms
from ..numerics import T, AdamW, Tensor, clip_grad_norm, ema_update, save_checkpoint, warmup_cosine
from ..policy import flow_loss, make_flow_sample
from .config import RunConfig
from .data import Batch, PreparedEpisode, prepare, sample_batch
from .model import Model, build_variant

log = logging.getLogger(__name__)

LOSS_COLUMNS = ("step", "lr", "loss", "flow", "holo2d", "holo3d", "grad_norm")


def compute_losses(model: Model, batch: Batch, cfg: RunConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    h, _ = model.encode(batch.front, batch.hand, batch.geometry, batch.proprio, batch.phase)
    hs = h[batch.loss_b, batch.loss_t]
    fs = make_flow_sample(batch.traj.astype(hs.dtype), rng)
    pred = model.policy(fs.x_tau, fs.tau, model.condition(hs))
    out = {"flow": flow_loss(pred, fs.u, batch.traj_mask)}
    if model.holo is not None:
        w2, w3 = model.holo(hs)
        out["holo2d"], out["holo3d"] = holo_terms(w2, w3, batch.way2d, batch.way3d)
    else:
        out["holo2d"] = out["holo3d"] = T.as_tensor(np.zeros((), dtype=hs.dtype))
    out["loss"] = (out["flow"] * cfg.weight_flow + out["holo2d"] * cfg.weight_holo2d
                   + out["holo3d"] * cfg.weight_holo3d)
    return out


@dataclass
class TrainResult:
    model: Model
    history: list[dict] = field(default_factory=list)
    diverged: bool = False
    seconds: float = 0.0
    checkpoint: Path | None = None


def checkpoint_meta(cfg: RunConfig, step: int) -> dict:
    return {"variant": cfg.variant, "task": cfg.task, "seed": cfg.seed, "step": step, "config": cfg.to_text()}


def train(cfg: RunConfig, data: Dataset | list[PreparedEpisode], out_dir=None,
          model: Model | None = None) -> TrainResult:
    """Train ``cfg.steps`` updates. With ``out_dir``, writes ``losses.csv`` and checkpoints there.

    On a non-finite loss or state the loop stops and the last good checkpoint stays on disk.
    """
    episodes = data if isinstance(data, list) else prepare(data, cfg)
    if not episodes:
        raise ValueError("no training episodes")
    model = model or build_variant(cfg, np.random.default_rng([cfg.seed, 1]))
    rng = np.random.default_rng([cfg.seed, 2])
    params = model.parameters()
    opt = AdamW(params, lr=cfg.lr, betas=(cfg.beta1, cfg.beta2), weight_decay=cfg.weight_decay)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "model.ckpt" if out is not None else None
    result = TrainResult(model)
    ema_update(params, cfg.ema)
    start = time.perf_counter()
    for step in range(1, cfg.steps + 1):
        lr = warmup_cosine(step, cfg.steps, cfg.lr, cfg.warmup, cfg.min_lr_ratio)
        batch = sample_batch(episodes, cfg, rng)
        try:
            losses = compute_losses(model, batch, cfg, rng)
            if not math.isfinite(losses["loss"].item()):
                raise DivergenceError(f"loss is {losses['loss'].item()}")
        except DivergenceError as exc:
            log.error("step %d: training diverged (%s); keeping the last good checkpoint", step, exc)
            result.diverged = True
            break
        opt.zero_grad()
        losses["loss"].backward()
        norm = clip_grad_norm(params, cfg.clip)
        opt.step(lr)
        ema_update(params, cfg.ema)
        row = {"step": step, "lr": lr, "grad_norm": norm}
        row.update({k: v.item() for k, v in losses.items()})
        result.history.append(row)
        if step % 50 == 0 or step == 1:
            log.info("step %d loss %.4f flow %.4f holo %.4f/%.4f", step, row["loss"], row["flow"],
                     row["holo2d"], row["holo3d"])
        if ckpt is not None and (step % cfg.checkpoint_every == 0 or step == cfg.steps):
            save_checkpoint(ckpt, model, step, checkpoint_meta(cfg, step))
    result.seconds = time.perf_counter() - start
    if out is not None:
        write_losses(out / "losses.csv", result.history)
        result.checkpoint = ckpt if ckpt.exists() else None
    return result


def write_losses(path, history: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOSS_COLUMNS)
        for row in history:
            w.writerow([row["step"]] + [f"{row[k]:.8g}" for k in LOSS_COLUMNS[1:]])
