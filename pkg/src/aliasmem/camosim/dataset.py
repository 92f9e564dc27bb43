"""Expert episode recording and the versioned little-endian dataset container.

Layout::

    header   magic b"AMSIMDS1", u32 version, u8 task id, u16 image size, u32 stride,
             2 x camera block (K: 9 f64, u8 attached flag, mount: 12 f64 = R row-major + t),
             workspace box (6 f64: lo xyz, hi xyz), u32 episode count,
             index table (per episode: u64 byte offset, u32 frame count)
    episode  u32 frame count, u32 seed, u8 latent,
             front u8 (n, H, W, 3), hand u8 (n, H, W, 3),
             proprio f32 (n, 8), pose f32 (n, 8), psi u8 (n), phase u8 (n), latent u8 (n)

The front mount is the world-to-camera transform. The hand mount maps
EE-relative coordinates ``p - p_ee`` into the camera frame.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import raster as R
from .expert import scripted_expert
from .world import (TASK_IDS, TASKS, WORKSPACE_HI, WORKSPACE_LO, SimConfig, render_views, reset, step)

MAGIC = b"AMSIMDS1"
VERSION = 1


def normalize_pose(pose: np.ndarray) -> np.ndarray:
    """Position to ``[-1, 1]^3`` over the workspace box, quaternion raw, gripper to ``2g - 1``."""
    pose = np.asarray(pose)
    pos = 2.0 * (pose[..., :3] - WORKSPACE_LO) / (WORKSPACE_HI - WORKSPACE_LO) - 1.0
    return np.concatenate([pos, pose[..., 3:7], 2.0 * pose[..., 7:8] - 1.0], axis=-1)


def denormalize_pose(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    pos = (x[..., :3] + 1.0) * 0.5 * (WORKSPACE_HI - WORKSPACE_LO) + WORKSPACE_LO
    return np.concatenate([pos, x[..., 3:7], (x[..., 7:8] + 1.0) * 0.5], axis=-1)


@dataclass
class Episode:
    seed: int
    front: np.ndarray
    hand: np.ndarray
    proprio: np.ndarray
    pose: np.ndarray
    psi: np.ndarray
    phase: np.ndarray
    latent: np.ndarray
    episode_latent: int = 0

    def __len__(self) -> int:
        return len(self.pose)

    def phase_end(self) -> np.ndarray:
        """Per frame, the index of the last frame of its (contiguous) phase segment."""
        n = len(self.phase)
        ends = np.empty(n, dtype=np.int64)
        end = n - 1
        for t in range(n - 1, -1, -1):
            if t < n - 1 and self.phase[t] != self.phase[t + 1]:
                end = t
            ends[t] = end
        return ends


def default_calibration() -> dict:
    front = R.front_camera()
    return {
        "front": (front.K, 0, front.R, front.t),
        "hand": (R.HAND_K, 1, R.HAND_R, -R.HAND_R @ R.HAND_MOUNT),
    }


@dataclass
class Dataset:
    task: str
    image_size: int
    stride: int
    episodes: list = field(default_factory=list)
    calibration: dict = field(default_factory=default_calibration)
    workspace: np.ndarray = field(default_factory=lambda: np.concatenate([WORKSPACE_LO, WORKSPACE_HI]))


def record_episode(task: str, seed: int, cfg: SimConfig | None = None) -> Episode:
    """Run the expert at full rate and keep every ``stride``-th frame."""
    cfg = cfg or SimConfig()
    st = reset(task, seed, cfg)
    plan = scripted_expert(st, cfg)
    frames = []

    def snap():
        front, hand = render_views(st, cfg.image_size)
        frames.append((front, hand, st.pose.copy(), st.psi, st.phase, st.latent))

    for f, setpoint in enumerate(plan):
        if f % cfg.stride == 0:
            snap()
        step(st, setpoint, cfg)
    if len(plan) % cfg.stride == 0:
        snap()
    if not (st.outcome.manipulation_success and st.outcome.decision_success):
        raise RuntimeError(f"expert failed on {task} seed {seed}: {st.outcome}")
    pose = np.array([fr[2] for fr in frames], dtype=np.float32)
    return Episode(
        seed=seed,
        front=np.stack([fr[0] for fr in frames]),
        hand=np.stack([fr[1] for fr in frames]),
        proprio=normalize_pose(pose).astype(np.float32),
        pose=pose,
        psi=np.array([fr[3] for fr in frames], dtype=np.uint8),
        phase=np.array([fr[4] for fr in frames], dtype=np.uint8),
        latent=np.array([fr[5] for fr in frames], dtype=np.uint8),
        episode_latent=int(frames[-1][5]) if task == "sequential" else int(st.latent),
    )


def record_dataset(task: str, n_episodes: int = 120, seed: int = 0, cfg: SimConfig | None = None) -> Dataset:
    cfg = cfg or SimConfig()
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}")
    ds = Dataset(task=task, image_size=cfg.image_size, stride=cfg.stride)
    for i in range(n_episodes):
        ds.episodes.append(record_episode(task, seed * 100003 + i, cfg))
    return ds


# -- container ------------------------------------------------------------

_HEAD = struct.Struct("<8sIBHI")
_CAM = struct.Struct("<9dB12d")
_BOX = struct.Struct("<6dI")
_INDEX = struct.Struct("<QI")
_EP = struct.Struct("<IIB")


def _episode_bytes(ep: Episode) -> bytes:
    n = len(ep)
    parts = [_EP.pack(n, ep.seed & 0xFFFFFFFF, ep.episode_latent)]
    for arr, dtype in ((ep.front, "u1"), (ep.hand, "u1"), (ep.proprio, "<f4"), (ep.pose, "<f4"),
                       (ep.psi, "u1"), (ep.phase, "u1"), (ep.latent, "u1")):
        if len(arr) != n:
            raise ValueError("episode arrays disagree on frame count")
        parts.append(np.ascontiguousarray(arr, dtype=dtype).tobytes())
    return b"".join(parts)


def write_dataset(path, ds: Dataset) -> None:
    blobs = [_episode_bytes(ep) for ep in ds.episodes]
    head = [_HEAD.pack(MAGIC, VERSION, TASK_IDS[ds.task], ds.image_size, ds.stride)]
    for view in ("front", "hand"):
        K, attached, Rm, t = ds.calibration[view]
        head.append(_CAM.pack(*np.asarray(K, float).ravel(), attached, *np.asarray(Rm, float).ravel(),
                              *np.asarray(t, float).ravel()))
    head.append(_BOX.pack(*np.asarray(ds.workspace, float), len(blobs)))
    offset = sum(len(h) for h in head) + _INDEX.size * len(blobs)
    for ep, blob in zip(ds.episodes, blobs):
        head.append(_INDEX.pack(offset, len(ep)))
        offset += len(blob)
    with open(path, "wb") as fh:
        fh.write(b"".join(head))
        for blob in blobs:
            fh.write(blob)


def read_dataset(path) -> Dataset:
    data = Path(path).read_bytes()
    magic, version, task_id, size, stride = _HEAD.unpack_from(data, 0)
    if magic != MAGIC:
        raise ValueError(f"{path}: not a dataset file")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported dataset version {version}")
    pos = _HEAD.size
    calibration = {}
    for view in ("front", "hand"):
        vals = _CAM.unpack_from(data, pos)
        pos += _CAM.size
        K = np.array(vals[:9]).reshape(3, 3)
        mount = np.array(vals[10:])
        calibration[view] = (K, vals[9], mount[:9].reshape(3, 3), mount[9:])
    *box, count = _BOX.unpack_from(data, pos)
    pos += _BOX.size
    index = [_INDEX.unpack_from(data, pos + i * _INDEX.size) for i in range(count)]
    ds = Dataset(task=TASKS[task_id], image_size=size, stride=stride, calibration=calibration,
                 workspace=np.array(box))
    img = size * size * 3
    for offset, n_frames in index:
        n, seed, ep_latent = _EP.unpack_from(data, offset)
        if n != n_frames:
            raise ValueError(f"{path}: frame count mismatch at offset {offset}")
        p = offset + _EP.size

        def take(dtype, count, shape):
            nonlocal p
            arr = np.frombuffer(data, dtype=dtype, count=count, offset=p).reshape(shape)
            p += arr.nbytes
            return arr.copy()

        ds.episodes.append(Episode(
            seed=seed,
            front=take("u1", n * img, (n, size, size, 3)),
            hand=take("u1", n * img, (n, size, size, 3)),
            proprio=take("<f4", n * 8, (n, 8)).astype(np.float32),
            pose=take("<f4", n * 8, (n, 8)).astype(np.float32),
            psi=take("u1", n, (n,)),
            phase=take("u1", n, (n,)),
            latent=take("u1", n, (n,)),
            episode_latent=ep_latent,
        ))
    return ds
