"""Room generation, surface-area point sampling and controlled degradation."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..errors import InvalidConfig, PlacementError
from .types import CATEGORIES, COLORS, ObjectSpec, PointCloud, SceneGraph, SurfaceSpec

# nominal half extents (x, y, z) in meters, scaled by U(0.85, 1.15) per object
_BASE_HALF_EXTENTS = {
    "chair": (0.25, 0.45, 0.25),
    "table": (0.60, 0.38, 0.40),
    "lamp": (0.15, 0.70, 0.15),
    "window": (0.45, 0.55, 0.06),
    "sofa": (0.80, 0.40, 0.40),
    "shelf": (0.40, 0.90, 0.20),
}
MAX_PLACEMENT_ATTEMPTS = 1000
_GAP = 0.05
_WINDOW_INSET = 0.02


@dataclass
class SceneConfig:
    min_objects: int = 2
    max_objects: int = 6
    # exact per-category counts; overrides min/max_objects when given
    category_counts: dict | None = None
    room_min: float = 3.0
    room_max: float = 6.0
    height: float = 2.5
    window: bool = True
    complex_prob: float = 0.3
    textureless_prob: float = 0.5

    def validate(self) -> None:
        if self.category_counts is not None:
            bad = set(self.category_counts) - set(CATEGORIES)
            if bad:
                raise InvalidConfig(f"unknown categories {sorted(bad)}")
            if any(int(c) < 0 for c in self.category_counts.values()):
                raise InvalidConfig("category counts must be non-negative")
            total = sum(int(c) for c in self.category_counts.values())
            if not 1 <= total <= 12:
                raise InvalidConfig(f"object count {total} outside [1, 12]")
        elif not 1 <= self.min_objects <= self.max_objects <= 12:
            raise InvalidConfig(
                f"object count range [{self.min_objects}, {self.max_objects}] outside [1, 12]"
            )
        for name in ("room_min", "room_max", "height"):
            v = getattr(self, name)
            if not 2.0 <= v <= 8.0:
                raise InvalidConfig(f"{name}={v} outside [2 m, 8 m]")
        if self.room_min > self.room_max:
            raise InvalidConfig("room_min > room_max")
        for name in ("complex_prob", "textureless_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise InvalidConfig(f"{name} must lie in [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)


def _overlaps(a, b) -> bool:
    (ax, az, ahx, ahz), (bx, bz, bhx, bhz) = a, b
    return abs(ax - bx) < ahx + bhx + _GAP and abs(az - bz) < ahz + bhz + _GAP


def generate_scene(seed: int, config: SceneConfig | None = None) -> SceneGraph:
    """Sample a room with non-overlapping floor-standing objects and colored surfaces.

    World frame: +x right, +y up, +z forward. The room spans
    ``[0, W] x [0, H] x [0, D]``; the back wall sits at ``z = D`` and the left
    wall at ``x = 0``.
    """
    config = config or SceneConfig()
    config.validate()
    rng = np.random.default_rng(seed)
    color_names = list(COLORS)

    width = float(rng.uniform(config.room_min, config.room_max))
    depth = float(rng.uniform(config.room_min, config.room_max))
    height = float(config.height)

    if config.category_counts is not None:
        cats = [c for c in CATEGORIES for _ in range(int(config.category_counts.get(c, 0)))]
    else:
        n = int(rng.integers(config.min_objects, config.max_objects + 1))
        cats = [CATEGORIES[i] for i in rng.integers(0, len(CATEGORIES), size=n)]

    objects: list[ObjectSpec] = []
    footprints: list[tuple[float, float, float, float]] = []
    zmax = depth - _WINDOW_INSET - _GAP
    for oid, cat in enumerate(cats):
        scale = rng.uniform(0.85, 1.15, size=3)
        hx, hy, hz = (float(v) for v in np.asarray(_BASE_HALF_EXTENTS[cat]) * scale)
        if rng.random() < 0.5 and cat != "window":
            hx, hz = hz, hx  # rotate footprint by 90 degrees
        hy = min(hy, height / 2.0)
        for _ in range(MAX_PLACEMENT_ATTEMPTS):
            lo_x, hi_x = hx + _GAP, width - hx - _GAP
            lo_z, hi_z = hz + _GAP, zmax - hz
            if lo_x >= hi_x or lo_z >= hi_z:
                continue
            x = float(rng.uniform(lo_x, hi_x))
            z = float(rng.uniform(lo_z, hi_z))
            fp = (x, z, hx, hz)
            if not any(_overlaps(fp, other) for other in footprints):
                break
        else:
            raise PlacementError(
                f"could not place object {oid} ({cat}) after {MAX_PLACEMENT_ATTEMPTS} attempts"
            )
        footprints.append(fp)
        objects.append(
            ObjectSpec(
                id=oid,
                category=cat,
                color=color_names[int(rng.integers(len(color_names)))],
                center=(x, hy, z),
                half_extents=(hx, hy, hz),
                complex=bool(rng.random() < config.complex_prob),
            )
        )

    surface_colors = [color_names[int(i)] for i in rng.integers(0, len(color_names), size=4)]
    textureless = rng.random(3) < config.textureless_prob
    surfaces = [
        SurfaceSpec(100, "floor", (0.0, 1.0, 0.0, 0.0), bool(textureless[0]), "floor",
                    surface_colors[0], (width / 2, 0.0, depth / 2), (width / 2, 0.0, depth / 2)),
        SurfaceSpec(101, "wall", (0.0, 0.0, -1.0, depth), bool(textureless[1]), "back wall",
                    surface_colors[1], (width / 2, height / 2, depth), (width / 2, height / 2, 0.0)),
        SurfaceSpec(102, "wall", (1.0, 0.0, 0.0, 0.0), bool(textureless[2]), "left wall",
                    surface_colors[2], (0.0, height / 2, depth / 2), (0.0, height / 2, depth / 2)),
    ]
    if config.window:
        wz = depth - _WINDOW_INSET
        surfaces.append(
            SurfaceSpec(103, "window_plane", (0.0, 0.0, -1.0, wz), True, "window pane",
                        surface_colors[3], (width / 2, height * 0.55, wz),
                        (width * 0.3, height * 0.3, 0.0))
        )
    elif not any(s.textureless for s in surfaces):
        s = surfaces[1]
        surfaces[1] = SurfaceSpec(s.id, s.kind, s.plane, True, s.name, s.color, s.center,
                                  s.half_extents)

    return SceneGraph(
        objects=tuple(objects),
        surfaces=tuple(surfaces),
        bounds=((0.0, 0.0, 0.0), (width, height, depth)),
        seed=int(seed),
    )


def _allocate(n: int, weights: np.ndarray) -> np.ndarray:
    """Largest-remainder split of ``n`` proportional to ``weights``."""
    share = weights / weights.sum() * n
    counts = np.floor(share).astype(np.int64)
    rest = n - counts.sum()
    order = np.argsort(-(share - counts), kind="stable")
    counts[order[:rest]] += 1
    return counts


def _sample_box(rng, obj: ObjectSpec, k: int) -> np.ndarray:
    c = np.asarray(obj.center)
    h = np.asarray(obj.half_extents)
    # faces: +-x, +-y, +-z with areas 4*h_j*h_k
    face_area = np.array([h[1] * h[2], h[1] * h[2], h[0] * h[2], h[0] * h[2], h[0] * h[1], h[0] * h[1]])
    faces = rng.choice(6, size=k, p=face_area / face_area.sum())
    uv = rng.uniform(-1.0, 1.0, size=(k, 3))
    axis = faces // 2
    sign = np.where(faces % 2 == 0, 1.0, -1.0)
    uv[np.arange(k), axis] = sign
    return c + uv * h


def _sample_rect(rng, surf: SurfaceSpec, k: int) -> np.ndarray:
    c = np.asarray(surf.center)
    h = np.asarray(surf.half_extents)
    return c + rng.uniform(-1.0, 1.0, size=(k, 3)) * h


def sample_point_cloud(scene: SceneGraph, n_points: int, seed: int) -> PointCloud:
    """Sample ``n_points`` surface points, allocated to elements by exact area share."""
    if n_points < 64:
        raise InvalidConfig(f"n_points={n_points} must be >= 64")
    rng = np.random.default_rng(seed)
    elements = list(scene.objects) + list(scene.surfaces)
    if not elements:
        raise InvalidConfig("scene has no geometry to sample")
    counts = _allocate(n_points, np.array([el.area for el in elements], dtype=np.float64))
    pts, cols, src = [], [], []
    for el, k in zip(elements, counts):
        if k == 0:
            continue
        if isinstance(el, ObjectSpec):
            p = _sample_box(rng, el, int(k))
        else:
            p = _sample_rect(rng, el, int(k))
        pts.append(p)
        cols.append(np.tile(np.asarray(COLORS[el.color]), (int(k), 1)))
        src.append(np.full(int(k), el.id))
    return PointCloud(np.concatenate(pts), np.concatenate(cols), np.concatenate(src))


def degrade_point_cloud(
    cloud: PointCloud,
    scene: SceneGraph,
    void_prob: float,
    jitter_sigma: float,
    seed: int,
) -> PointCloud:
    """Remove whole textureless surfaces and distort complex objects.

    Each textureless surface (in scene order) is dropped entirely with
    probability ``void_prob``. Points of objects flagged ``complex`` get
    N(0, jitter_sigma^2) position noise and U(-0.1, 0.1) color noise; the
    color noise is only applied when ``jitter_sigma > 0`` so that zero
    degradation is an exact identity.
    """
    if not 0.0 <= void_prob <= 1.0:
        raise InvalidConfig("void_prob must lie in [0, 1]")
    if jitter_sigma < 0:
        raise InvalidConfig("jitter_sigma must be >= 0")
    rng = np.random.default_rng(seed)
    textureless = [s.id for s in scene.surfaces if s.textureless]
    draws = rng.random(len(textureless))
    removed = [sid for sid, u in zip(textureless, draws) if u < void_prob]

    n = len(cloud)
    pos_noise = rng.standard_normal((n, 3))
    col_noise = rng.uniform(-0.1, 0.1, size=(n, 3))

    points = cloud.points.copy()
    colors = cloud.colors.copy()
    if jitter_sigma > 0:
        complex_ids = [o.id for o in scene.objects if o.complex]
        m = np.isin(cloud.source_id, complex_ids)
        points[m] = (points[m].astype(np.float64) + jitter_sigma * pos_noise[m]).astype(np.float32)
        colors[m] = np.clip(colors[m].astype(np.float64) + col_noise[m], 0.0, 1.0).astype(np.float32)
    keep = ~np.isin(cloud.source_id, removed)
    return PointCloud(points[keep], colors[keep], cloud.source_id[keep])


def removed_surfaces(cloud: PointCloud, degraded: PointCloud, scene: SceneGraph) -> list[int]:
    """Textureless surface ids present in ``cloud`` but absent from ``degraded``."""
    before = set(np.unique(cloud.source_id).tolist())
    after = set(np.unique(degraded.source_id).tolist())
    return [s.id for s in scene.surfaces if s.textureless and s.id in before and s.id not in after]
