"""Pinhole cameras and ray generation.

Convention: right-handed, y-up; the camera looks along its local -z axis.
Poses are world-from-camera rigid transforms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .validation import as_float_array, check_rotation


@dataclass(frozen=True)
class Camera:
    """Pinhole intrinsics in pixels plus a world-from-camera pose."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    pose: np.ndarray  # (4, 4) world-from-camera

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ConfigError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ConfigError("image size must be positive")
        pose = as_float_array(self.pose, "pose", dtype=np.float64).reshape(4, 4)
        check_rotation(pose[:3, :3], "pose rotation")
        object.__setattr__(self, "pose", pose)

    @property
    def rotation(self) -> np.ndarray:
        return self.pose[:3, :3]

    @property
    def position(self) -> np.ndarray:
        return self.pose[:3, 3]

    @property
    def optical_axis(self) -> np.ndarray:
        """World-space viewing direction (-z column of the rotation)."""
        return -self.rotation[:, 2]

    def scaled(self, width: int, height: int) -> "Camera":
        """Same field of view at a different image resolution."""
        sx = width / self.width
        sy = height / self.height
        return Camera(
            fx=self.fx * sx, fy=self.fy * sy,
            cx=self.cx * sx, cy=self.cy * sy,
            width=width, height=height, pose=self.pose,
        )

    @staticmethod
    def from_fov(fov_deg: float, width: int, height: int, pose) -> "Camera":
        """Square-pixel camera from a horizontal field of view."""
        f = 0.5 * width / np.tan(np.deg2rad(fov_deg) * 0.5)
        return Camera(
            fx=f, fy=f, cx=width * 0.5, cy=height * 0.5,
            width=width, height=height, pose=pose,
        )


def look_at_pose(eye, target, up=(0.0, 1.0, 0.0)) -> np.ndarray:
    """World-from-camera pose with the camera at eye looking at target."""
    eye = np.asarray(eye, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    up = np.asarray(up, dtype=np.float64)
    z = eye - target
    z = z / np.linalg.norm(z)
    x = np.cross(up, z)
    nx = np.linalg.norm(x)
    if nx < 1e-9:  # looking straight up or down
        x = np.cross(np.array([0.0, 0.0, 1.0]), z)
        nx = np.linalg.norm(x)
    x = x / nx
    y = np.cross(z, x)
    pose = np.eye(4)
    pose[:3, 0] = x
    pose[:3, 1] = y
    pose[:3, 2] = z
    pose[:3, 3] = eye
    return pose


def orbit_pose(azimuth_deg, elevation_deg, distance, target=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Camera on a sphere around target, looking inward."""
    az = np.deg2rad(azimuth_deg)
    el = np.deg2rad(elevation_deg)
    target = np.asarray(target, dtype=np.float64)
    eye = target + distance * np.array(
        [np.cos(el) * np.sin(az), np.sin(el), np.cos(el) * np.cos(az)]
    )
    return look_at_pose(eye, target)


def pixel_directions(camera: Camera, pixels: np.ndarray) -> np.ndarray:
    """Unit world directions through the centers of (row, col) pixels."""
    px = pixels.astype(np.float64)
    u = (px[:, 1] + 0.5 - camera.cx) / camera.fx
    v = (px[:, 0] + 0.5 - camera.cy) / camera.fy
    d_cam = np.stack([u, -v, -np.ones_like(u)], axis=1)
    d_world = d_cam @ camera.rotation.T
    return d_world / np.linalg.norm(d_world, axis=1, keepdims=True)


def intersect_box(origins, dirs, box) -> tuple:
    """Slab-test entry/exit parameters; hit is False when the box is missed.

    Entry is clamped to 0 so marching never starts behind the camera.
    """
    bmin, bmax = box[0], box[1]
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t0 = (bmin[None, :] - origins) * inv
        t1 = (bmax[None, :] - origins) * inv
    lo = np.minimum(t0, t1)
    hi = np.maximum(t0, t1)
    # Axis-parallel rays: the slab test must ignore axes with zero direction
    # when the origin is inside that slab, and miss when outside.
    zero = np.abs(dirs) < 1e-12
    inside = (origins >= bmin[None, :]) & (origins <= bmax[None, :])
    lo = np.where(zero, np.where(inside, -np.inf, np.inf), lo)
    hi = np.where(zero, np.where(inside, np.inf, -np.inf), hi)
    t_near = np.maximum(lo.max(axis=1), 0.0)
    t_far = hi.min(axis=1)
    hit = t_near < t_far
    return t_near, t_far, hit


def generate_rays(camera: Camera, pixels, box):
    """Rays through pixel centers with box entry/exit.

    Returns (origins, dirs, t_near, t_far, hit). Rays that miss the box are
    flagged, not rejected.
    """
    pixels = np.asarray(pixels, dtype=np.int64)
    if pixels.ndim != 2 or pixels.shape[1] != 2:
        raise ShapeError(f"pixels must be (N, 2) (row, col), got {pixels.shape}")
    if (
        (pixels[:, 0] < 0).any()
        or (pixels[:, 0] >= camera.height).any()
        or (pixels[:, 1] < 0).any()
        or (pixels[:, 1] >= camera.width).any()
    ):
        raise ShapeError("pixel coordinates outside image bounds")
    dirs = pixel_directions(camera, pixels)
    origins = np.broadcast_to(camera.position, dirs.shape).copy()
    t_near, t_far, hit = intersect_box(origins, dirs, box)
    return origins, dirs, t_near, t_far, hit


def all_pixels(width: int, height: int) -> np.ndarray:
    """(H*W, 2) row-major (row, col) pixel list."""
    rows, cols = np.mgrid[0:height, 0:width]
    return np.stack([rows.ravel(), cols.ravel()], axis=1)
