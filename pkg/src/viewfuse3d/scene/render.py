"""Camera placement and z-buffered point splatting."""

from __future__ import annotations

import math

import numpy as np

from .. import kernels
from ..errors import InvalidConfig
from .generate import sample_point_cloud
from .types import CameraPose, PointCloud, SceneGraph, ViewImage

IMAGE_SIZES = (32, 64, 128)
RADIUS_FACTOR = 1.5
# wide enough that the bounding sphere (radius diag/2 at distance 1.5 diag) fits with margin
FOV_DEG = 45.0
SPLAT_RADIUS = 1
NEAR = 1e-3
RENDER_POINTS = 4096
_GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))


def fibonacci_directions(n: int, phase: float = 0.0) -> np.ndarray:
    """Unit vectors of an ``n``-point Fibonacci lattice with polar axis +y."""
    i = np.arange(n, dtype=np.float64)
    y = 1.0 - (2.0 * i + 1.0) / n
    r = np.sqrt(np.maximum(0.0, 1.0 - y * y))
    theta = i * _GOLDEN_ANGLE + phase
    return np.stack([r * np.cos(theta), y, r * np.sin(theta)], axis=1)


def look_at(eye: np.ndarray, target: np.ndarray) -> np.ndarray:
    """World-to-camera matrix; camera axes are (right, up, forward)."""
    fwd = target - eye
    fwd = fwd / np.linalg.norm(fwd)
    up = np.array([0.0, 1.0, 0.0])
    if abs(float(fwd @ up)) > 0.999:
        up = np.array([0.0, 0.0, 1.0])
    right = np.cross(up, fwd)
    right /= np.linalg.norm(right)
    cam_up = np.cross(fwd, right)
    rot = np.stack([right, cam_up, fwd])
    m = np.eye(4)
    m[:3, :3] = rot
    m[:3, 3] = -rot @ eye
    return m


def camera_poses(scene: SceneGraph, n_views: int, seed: int) -> list[CameraPose]:
    rng = np.random.default_rng(seed)
    phase = float(rng.uniform(0.0, 2.0 * math.pi))
    center = scene.centroid
    radius = RADIUS_FACTOR * scene.diagonal
    return [CameraPose(look_at(center + radius * d, center)) for d in fibonacci_directions(n_views, phase)]


def focal_length(image_size: int) -> float:
    return (image_size / 2.0) / math.tan(math.radians(FOV_DEG) / 2.0)


def project(points: np.ndarray, pose: CameraPose, image_size: int):
    """Pixel coordinates (float u, v) and depth of world points.

    The principal point is at ``image_size / 2``; pixel ``(row, col)`` covers
    ``[col, col + 1) x [row, row + 1)``.
    """
    m = pose.matrix.astype(np.float64)
    cam = points.astype(np.float64) @ m[:3, :3].T + m[:3, 3]
    f = focal_length(image_size)
    c = image_size / 2.0
    z = cam[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = c + f * cam[:, 0] / z
        v = c - f * cam[:, 1] / z
    return u, v, z


def splat(cloud: PointCloud, pose: CameraPose, image_size: int) -> np.ndarray:
    u, v, z = project(cloud.points, pose, image_size)
    ok = z > NEAR
    img = kernels.splat_zbuffer(
        np.floor(u[ok]).astype(np.int64),
        np.floor(v[ok]).astype(np.int64),
        z[ok],
        cloud.colors[ok],
        image_size,
        image_size,
        SPLAT_RADIUS,
    )
    # 8-bit quantization keeps PNG storage lossless
    return (np.round(img * 255.0).astype(np.uint8)).astype(np.float32) / np.float32(255.0)


def render_views(
    scene: SceneGraph,
    n_views: int,
    image_size: int,
    seed: int,
    cloud: PointCloud | None = None,
) -> list[ViewImage]:
    """Render ``n_views`` images of ``cloud`` from cameras on a sphere around the room.

    Without an explicit cloud a dense clean cloud is sampled from the scene.
    """
    if n_views < 1:
        raise InvalidConfig("n_views must be >= 1")
    if image_size not in IMAGE_SIZES:
        raise InvalidConfig(f"image_size must be one of {IMAGE_SIZES}")
    if cloud is None:
        cloud = sample_point_cloud(scene, RENDER_POINTS, seed)
    return [ViewImage(splat(cloud, pose, image_size), pose) for pose in camera_poses(scene, n_views, seed)]
