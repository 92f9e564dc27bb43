"""Pinhole cameras, EE-anchored patch descriptors and epipolar feasibility biases.

Image coordinates are normalized: ``u = (x, y)`` with both axes in ``[0, 1]``,
``x`` to the right and ``y`` downward. Intrinsics are expressed in the same
normalized units, so a principal point of ``(0.5, 0.5)`` is the image center.
Camera frames follow the usual vision convention (``+z`` forward, ``+y`` down).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BehindCameraError, ConfigError, DegenerateGeometryError

DEFAULT_EPSILON = 1e-8
DEFAULT_TEMPERATURE = 0.05


def intrinsics(focal: float, cx: float = 0.5, cy: float = 0.5, focal_y: float | None = None) -> np.ndarray:
    return np.array([[focal, 0.0, cx], [0.0, focal if focal_y is None else focal_y, cy], [0.0, 0.0, 1.0]])


def skew(v: np.ndarray) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def look_at_rotation(eye, target, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """World-to-camera rotation for a camera at ``eye`` looking at ``target``."""
    eye, target, up = (np.asarray(v, dtype=float) for v in (eye, target, up))
    z = target - eye
    z /= np.linalg.norm(z)
    x = np.cross(z, up)
    if np.linalg.norm(x) < 1e-9:
        x = np.cross(z, np.array([0.0, 1.0, 0.0]))
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return np.stack([x, y, z])


@dataclass(frozen=True)
class CameraModel:
    K: np.ndarray
    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        K = np.asarray(self.K, dtype=float)
        R = np.asarray(self.R, dtype=float)
        t = np.asarray(self.t, dtype=float).reshape(3)
        if K.shape != (3, 3) or abs(K[2, 2] - 1.0) > 1e-12 or np.any(np.abs(np.tril(K, -1)) > 0):
            raise ConfigError("intrinsics must be 3x3 upper-triangular with K[2,2] = 1")
        if abs(np.linalg.det(K)) < 1e-12:
            raise DegenerateGeometryError("intrinsic matrix is singular")
        if R.shape != (3, 3) or abs(np.linalg.det(R) - 1.0) > 1e-6:
            raise ConfigError("extrinsic rotation must have determinant 1")
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @classmethod
    def looking_at(cls, K, eye, target, up=(0.0, 0.0, 1.0)) -> "CameraModel":
        R = look_at_rotation(eye, target, up)
        return cls(K, R, -R @ np.asarray(eye, dtype=float))

    @property
    def center(self) -> np.ndarray:
        return -self.R.T @ self.t

    def to_camera(self, p) -> np.ndarray:
        return np.asarray(p, dtype=float) @ self.R.T + self.t


def project(camera: CameraModel, p) -> np.ndarray:
    """Project world point(s) ``(..., 3)`` to normalized image coordinates ``(..., 2)``."""
    pc = camera.to_camera(p)
    if np.any(pc[..., 2] <= 0):
        raise BehindCameraError("point has nonpositive depth in the camera frame")
    h = pc @ camera.K.T
    return h[..., :2] / h[..., 2:3]


def back_ray(camera: CameraModel, u) -> np.ndarray:
    """Unit world-frame direction of the viewing ray through image point(s) ``u``."""
    u = np.asarray(u, dtype=float)
    uh = np.concatenate([u, np.ones(u.shape[:-1] + (1,))], axis=-1)
    rc = uh @ np.linalg.inv(camera.K).T
    rw = rc @ camera.R
    return rw / np.linalg.norm(rw, axis=-1, keepdims=True)


@dataclass(frozen=True)
class PatchGrid:
    centers: np.ndarray  # (N, 2), row-major over the grid

    @classmethod
    def square(cls, cells: int) -> "PatchGrid":
        c = (np.arange(cells) + 0.5) / cells
        yy, xx = np.meshgrid(c, c, indexing="ij")
        return cls(np.stack([xx.ravel(), yy.ravel()], axis=-1))

    @property
    def count(self) -> int:
        return len(self.centers)

    def homogeneous(self) -> np.ndarray:
        return np.concatenate([self.centers, np.ones((self.count, 1))], axis=1)


def descriptor_arrays(K: np.ndarray, R: np.ndarray, t: np.ndarray, p_ee: np.ndarray,
                      centers: np.ndarray) -> np.ndarray:
    """Batched descriptors.

    ``R`` ``(..., 3, 3)``, ``t`` and ``p_ee`` ``(..., 3)``; returns ``(..., N, 7)``
    laid out as ``[u(2), ray(3), rho, cos_theta]``.
    """
    if abs(np.linalg.det(K)) < 1e-12:
        raise DegenerateGeometryError("intrinsic matrix is singular")
    K_inv = np.linalg.inv(K)
    n = len(centers)
    uh = np.concatenate([centers, np.ones((n, 1))], axis=1)
    rays = uh @ K_inv.T
    rays /= np.linalg.norm(rays, axis=-1, keepdims=True)
    pc = np.einsum("...ij,...j->...i", R, p_ee) + t
    ee_h = pc @ K.T
    u_ee = ee_h[..., :2] / ee_h[..., 2:3]
    direction = pc / np.linalg.norm(pc, axis=-1, keepdims=True)
    lead = pc.shape[:-1]
    rho = np.linalg.norm(centers - u_ee[..., None, :], axis=-1)
    cos = np.einsum("nk,...k->...n", rays, direction)
    return np.concatenate([
        np.broadcast_to(centers, lead + (n, 2)),
        np.broadcast_to(rays, lead + (n, 3)),
        rho[..., None],
        cos[..., None],
    ], axis=-1)


def patch_descriptors(camera: CameraModel, p_ee, grid: PatchGrid) -> np.ndarray:
    """Per-patch ``[u, r, rho, cos_theta]`` anchored on the EE position ``p_ee``."""
    return descriptor_arrays(camera.K, camera.R, camera.t, np.asarray(p_ee, dtype=float), grid.centers)


def fundamental_matrix(cam_a: CameraModel, cam_b: CameraModel) -> np.ndarray:
    """F with ``u_b^T F u_a = 0`` for corresponding homogeneous points."""
    return fundamental_arrays(cam_a.K, cam_a.R, cam_a.t, cam_b.K, cam_b.R, cam_b.t)


def fundamental_arrays(Ka, Ra, ta, Kb, Rb, tb) -> np.ndarray:
    """Batched ``K_b^-T [t]x R K_a^-1`` over leading dims of the extrinsics."""
    R_ab = Rb @ np.swapaxes(Ra, -1, -2)
    t_ab = tb - np.einsum("...ij,...j->...i", R_ab, ta)
    if np.any(np.linalg.norm(t_ab, axis=-1) < 1e-9):
        raise DegenerateGeometryError("camera centers coincide; epipolar geometry undefined")
    tx = np.zeros(t_ab.shape[:-1] + (3, 3))
    tx[..., 0, 1], tx[..., 0, 2] = -t_ab[..., 2], t_ab[..., 1]
    tx[..., 1, 0], tx[..., 1, 2] = t_ab[..., 2], -t_ab[..., 0]
    tx[..., 2, 0], tx[..., 2, 1] = -t_ab[..., 1], t_ab[..., 0]
    E = tx @ R_ab
    return np.linalg.inv(Kb).T @ E @ np.linalg.inv(Ka)


def epipolar_distance(F, centers_a, centers_b, epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
    """Squared algebraic distance of every b-patch to every a-patch's epipolar line."""
    F = np.asarray(F, dtype=float)
    ua = np.concatenate([centers_a, np.ones((len(centers_a), 1))], axis=1)
    ub = np.concatenate([centers_b, np.ones((len(centers_b), 1))], axis=1)
    lines = np.einsum("...ij,nj->...ni", F, ua)  # (..., N_a, 3)
    num = np.einsum("...ni,mi->...nm", lines, ub) ** 2
    den = (lines[..., :2] ** 2).sum(-1, keepdims=True) + epsilon
    return num / den


def epipolar_bias(F, centers_a, centers_b, epsilon: float = DEFAULT_EPSILON,
                  temperature: float = DEFAULT_TEMPERATURE) -> np.ndarray:
    if epsilon <= 0 or temperature <= 0:
        raise ConfigError("epipolar epsilon and temperature must be positive")
    if isinstance(centers_a, PatchGrid):
        centers_a = centers_a.centers
    if isinstance(centers_b, PatchGrid):
        centers_b = centers_b.centers
    return -epipolar_distance(F, centers_a, centers_b, epsilon) / temperature
