"""Flat-shaded painter's-order rasterizer for axis-aligned boxes."""

from __future__ import annotations

import numpy as np

from ..geometry import CameraModel, intrinsics, look_at_rotation

BACKGROUND = np.array([0.55, 0.6, 0.65])
LIGHT = np.array([0.3, -0.5, 0.8]) / np.linalg.norm([0.3, -0.5, 0.8])
NEAR = 0.01

# (axis, sign) per face; corner indices listed counter-clockwise seen from outside
_CORNER_SIGNS = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=float)
_FACES = [
    ((0, -1), [0, 1, 3, 2]), ((0, 1), [4, 6, 7, 5]),
    ((1, -1), [0, 4, 5, 1]), ((1, 1), [2, 3, 7, 6]),
    ((2, -1), [0, 2, 6, 4]), ((2, 1), [1, 5, 7, 3]),
]

FRONT_K = intrinsics(1.2)
FRONT_EYE = np.array([0.32, -0.55, 0.55])
FRONT_TARGET = np.array([0.0, 0.02, 0.02])
HAND_K = intrinsics(0.75)
HAND_MOUNT = np.array([0.0, -0.09, 0.11])  # camera center relative to the EE tool point
HAND_AIM = np.array([0.0, 0.03, -0.05])    # look-at point relative to the EE tool point
HAND_R = look_at_rotation(HAND_MOUNT, HAND_AIM)


def front_camera() -> CameraModel:
    return CameraModel.looking_at(FRONT_K, FRONT_EYE, FRONT_TARGET)


def hand_camera(ee_pos) -> CameraModel:
    """Hand camera rigidly attached to the EE (fixed orientation, translating with it)."""
    center = np.asarray(ee_pos, dtype=float) + HAND_MOUNT
    return CameraModel(HAND_K, HAND_R, -HAND_R @ center)


def hand_extrinsics(ee_pos: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Batched hand-camera (R, t) for EE positions ``(..., 3)``."""
    centers = np.asarray(ee_pos, dtype=float) + HAND_MOUNT
    R = np.broadcast_to(HAND_R, centers.shape[:-1] + (3, 3))
    t = -centers @ HAND_R.T
    return R, t


def _pixel_centers(size: int) -> tuple[np.ndarray, np.ndarray]:
    c = (np.arange(size) + 0.5) / size
    yy, xx = np.meshgrid(c, c, indexing="ij")
    return xx, yy


_PIXELS: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _fill_quad(image: np.ndarray, quad: np.ndarray, color: np.ndarray) -> None:
    size = image.shape[0]
    if size not in _PIXELS:
        _PIXELS[size] = _pixel_centers(size)
    xx, yy = _PIXELS[size]
    x0, y0 = quad.min(axis=0)
    x1, y1 = quad.max(axis=0)
    if x1 < 0 or y1 < 0 or x0 > 1 or y0 > 1:
        return
    inside_pos = np.ones(xx.shape, dtype=bool)
    inside_neg = np.ones(xx.shape, dtype=bool)
    for k in range(len(quad)):
        ax, ay = quad[k]
        bx, by = quad[(k + 1) % len(quad)]
        cross = (bx - ax) * (yy - ay) - (by - ay) * (xx - ax)
        inside_pos &= cross >= 0
        inside_neg &= cross <= 0
    image[inside_pos | inside_neg] = color


def render_boxes(camera: CameraModel, boxes, size: int = 32) -> np.ndarray:
    """Render ``boxes`` (iterable of ``(center, half_extents, rgb, layer)``) to ``size x size x 3``.

    Boxes are drawn by ascending ``layer`` and, within a layer, far-to-near by
    center depth. Back faces are culled; faces touching the near plane are dropped.
    """
    image = np.empty((size, size, 3))
    image[:] = BACKGROUND
    cam_center = camera.center
    items = []
    for center, half, color, layer in boxes:
        depth = float(camera.to_camera(center)[2])
        items.append((layer, -depth, np.asarray(center, float), np.asarray(half, float), np.asarray(color, float)))
    items.sort(key=lambda it: (it[0], it[1]))
    KR = camera.K @ camera.R
    Kt = camera.K @ camera.t
    for _, _, center, half, color in items:
        corners = center + _CORNER_SIGNS * half
        h = corners @ KR.T + Kt
        depth = h[:, 2]
        faces = []
        for (axis, sign), idx in _FACES:
            normal = np.zeros(3)
            normal[axis] = sign
            face_center = center + normal * half
            if np.dot(normal, face_center - cam_center) >= 0:
                continue
            if np.any(depth[idx] < NEAR):
                continue
            faces.append((float(depth[idx].mean()), idx, normal))
        faces.sort(key=lambda f: -f[0])
        for _, idx, normal in faces:
            shade = 0.55 + 0.45 * max(0.0, float(normal @ LIGHT))
            quad = h[idx, :2] / depth[idx, None]
            _fill_quad(image, quad, color * shade)
    return image


def to_u8(image: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
