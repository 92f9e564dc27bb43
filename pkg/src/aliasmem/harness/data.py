"""Training chunks: strided frame selection, loss windows and per-frame supervision targets."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import geometry as G
from ..camosim import Dataset, Episode
from ..holohead import target_frames
from .config import RunConfig
from .model import FrameGeometry, frame_geometry


@dataclass
class Chunk:
    frames: np.ndarray       # absolute frame indices fed to the memory
    loss_frames: np.ndarray  # positions (into ``frames``) that receive the losses
    burn_in: bool            # True when the chunk had to be truncated on the left


def chunk_sequences(n_frames: int, chunk_len: int, stride: int, loss_window: int,
                    end: int | None = None) -> Chunk:
    """Chunk ending at frame ``end`` (default: last frame), keeping every ``stride``-th frame.

    The memory runs over the whole chunk; losses apply to its final ``loss_window`` frames.
    """
    if chunk_len < loss_window:
        raise ValueError("chunk_len must be at least loss_window")
    if stride < 1:
        raise ValueError("stride must be positive")
    end = n_frames - 1 if end is None else end
    frames = np.arange(end, -1, -stride)[::-1]
    burn_in = len(frames) < chunk_len
    frames = frames[-chunk_len:]
    window = min(loss_window, len(frames))
    return Chunk(frames, np.arange(len(frames) - window, len(frames)), burn_in)


@dataclass
class PreparedEpisode:
    episode: Episode
    geometry: FrameGeometry
    phase_end: np.ndarray
    ee3d: np.ndarray       # normalized EE positions (n, 3)
    ee2d: np.ndarray       # front-view EE projections (n, 2)
    action: np.ndarray     # normalized poses (n, 8)

    def __len__(self) -> int:
        return len(self.episode)


def prepare(ds: Dataset, cfg: RunConfig) -> list[PreparedEpisode]:
    cells = cfg.image_size // cfg.patch
    lo, hi = ds.workspace[:3], ds.workspace[3:]
    K, _, Rf, tf = ds.calibration["front"]
    front = G.CameraModel(K, Rf, tf)
    out = []
    for ep in ds.episodes:
        ee = ep.pose[:, :3].astype(np.float64)
        geo = frame_geometry(ee, cells, cfg.epipolar_epsilon, cfg.epipolar_temperature, ds.calibration)
        out.append(PreparedEpisode(
            episode=ep,
            geometry=FrameGeometry(*(a.astype(np.float32) for a in (geo.desc_front, geo.desc_hand,
                                                                     geo.epi_fh, geo.epi_hf))),
            phase_end=ep.phase_end(),
            ee3d=(2.0 * (ee - lo) / (hi - lo) - 1.0).astype(np.float32),
            ee2d=G.project(front, ee).astype(np.float32),
            action=ep.proprio.astype(np.float32),
        ))
    return out


def trajectory_target(ep: PreparedEpisode, t: int, horizon: int) -> tuple[np.ndarray, np.ndarray]:
    """Normalized poses at frames ``t+1 .. t+H`` and their validity mask (False past the episode end)."""
    idx = t + 1 + np.arange(horizon)
    valid = idx < len(ep)
    return ep.action[np.minimum(idx, len(ep) - 1)], valid


def waypoint_targets(ep: PreparedEpisode, t: int, n_anchor: int, n_compass: int) -> tuple[np.ndarray, np.ndarray]:
    idx = target_frames(t, int(ep.phase_end[t]), len(ep) - 1, n_anchor, n_compass)
    return ep.ee2d[idx], ep.ee3d[idx]


@dataclass
class Batch:
    front: np.ndarray
    hand: np.ndarray
    geometry: FrameGeometry
    proprio: np.ndarray
    phase: np.ndarray
    loss_b: np.ndarray     # batch row of every supervised sample
    loss_t: np.ndarray     # time position of every supervised sample
    traj: np.ndarray       # (K, H, 8)
    traj_mask: np.ndarray  # (K, H)
    way2d: np.ndarray      # (K, N_a + N_c, 2)
    way3d: np.ndarray      # (K, N_a + N_c, 3)


def assemble(episodes: list[PreparedEpisode], ends: list[int], cfg: RunConfig) -> Batch:
    """Stack one chunk per episode, right-padding shorter chunks by repeating their last frame."""
    chunks = [chunk_sequences(len(ep), cfg.chunk_len, cfg.chunk_stride, cfg.loss_window, end)
              for ep, end in zip(episodes, ends)]
    L = max(len(c.frames) for c in chunks)
    rows = []
    for c in chunks:
        pad = L - len(c.frames)
        rows.append(np.concatenate([c.frames, np.full(pad, c.frames[-1])]) if pad else c.frames)

    def gather(get):
        return np.stack([get(ep)[r] for ep, r in zip(episodes, rows)])

    geo = FrameGeometry(*(gather(lambda ep, k=k: getattr(ep.geometry, k))
                          for k in ("desc_front", "desc_hand", "epi_fh", "epi_hf")))
    loss_b, loss_t, traj, mask, w2, w3 = [], [], [], [], [], []
    for b, (ep, c) in enumerate(zip(episodes, chunks)):
        for pos in c.loss_frames:
            t = int(c.frames[pos])
            x, m = trajectory_target(ep, t, cfg.horizon)
            a2, a3 = waypoint_targets(ep, t, cfg.holo_anchors, cfg.holo_compass)
            loss_b.append(b)
            loss_t.append(pos)
            traj.append(x)
            mask.append(m)
            w2.append(a2)
            w3.append(a3)
    return Batch(
        front=gather(lambda ep: ep.episode.front),
        hand=gather(lambda ep: ep.episode.hand),
        geometry=geo,
        proprio=gather(lambda ep: ep.episode.proprio),
        phase=gather(lambda ep: ep.episode.phase).astype(np.int64),
        loss_b=np.array(loss_b), loss_t=np.array(loss_t),
        traj=np.stack(traj), traj_mask=np.stack(mask),
        way2d=np.stack(w2), way3d=np.stack(w3),
    )


def end_candidates(ep: PreparedEpisode, mode: str) -> np.ndarray:
    """Frames a chunk may end on. ``act`` keeps acting frames, where rollouts query the policy."""
    if mode == "act":
        act = np.flatnonzero(ep.episode.psi == 1)
        if len(act):
            return act
    return np.arange(len(ep))


def sample_batch(episodes: list[PreparedEpisode], cfg: RunConfig, rng: np.random.Generator) -> Batch:
    picks = rng.integers(len(episodes), size=cfg.batch)
    chosen = [episodes[i] for i in picks]
    ends = []
    for ep in chosen:
        cand = end_candidates(ep, cfg.chunk_ends)
        ends.append(int(cand[rng.integers(len(cand))]))
    return assemble(chosen, ends, cfg)
