from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

CATEGORIES = ("chair", "table", "lamp", "window", "sofa", "shelf")
PLURALS = {
    "chair": "chairs",
    "table": "tables",
    "lamp": "lamps",
    "window": "windows",
    "sofa": "sofas",
    "shelf": "shelves",
}
COLORS = {
    "red": (0.86, 0.12, 0.12),
    "green": (0.15, 0.70, 0.20),
    "blue": (0.12, 0.25, 0.85),
    "yellow": (0.95, 0.85, 0.10),
    "purple": (0.55, 0.20, 0.70),
    "orange": (0.98, 0.55, 0.05),
    "cyan": (0.10, 0.80, 0.85),
    "pink": (0.98, 0.55, 0.75),
}
SURFACE_KINDS = ("wall", "floor", "window_plane")
TASKS = ("count", "color", "exist", "spatial", "caption")


@dataclass(frozen=True)
class ObjectSpec:
    id: int
    category: str
    color: str
    center: tuple[float, float, float]
    half_extents: tuple[float, float, float]
    complex: bool = False

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise ValueError(f"unknown category {self.category!r}")
        if self.color not in COLORS:
            raise ValueError(f"unknown color {self.color!r}")
        if min(self.half_extents) <= 0:
            raise ValueError("half_extents must be strictly positive")

    @property
    def area(self) -> float:
        hx, hy, hz = self.half_extents
        return 8.0 * (hx * hy + hy * hz + hx * hz)


@dataclass(frozen=True)
class SurfaceSpec:
    """A bounded planar patch. ``half_extents`` is zero along the plane normal."""

    id: int
    kind: str
    plane: tuple[float, float, float, float]
    textureless: bool
    name: str
    color: str
    center: tuple[float, float, float]
    half_extents: tuple[float, float, float]

    def __post_init__(self):
        if self.kind not in SURFACE_KINDS:
            raise ValueError(f"unknown surface kind {self.kind!r}")
        if abs(float(np.linalg.norm(self.plane[:3])) - 1.0) > 1e-9:
            raise ValueError("plane normal must have unit norm")
        if self.color not in COLORS:
            raise ValueError(f"unknown color {self.color!r}")

    @property
    def area(self) -> float:
        a, b = sorted(self.half_extents)[1:]
        return 4.0 * a * b


@dataclass(frozen=True)
class SceneGraph:
    objects: tuple[ObjectSpec, ...]
    surfaces: tuple[SurfaceSpec, ...]
    bounds: tuple[tuple[float, float, float], tuple[float, float, float]]
    seed: int

    def element(self, source_id: int):
        for el in self.objects + self.surfaces:
            if el.id == source_id:
                return el
        raise KeyError(source_id)

    @property
    def centroid(self) -> np.ndarray:
        lo, hi = np.asarray(self.bounds[0]), np.asarray(self.bounds[1])
        return (lo + hi) / 2.0

    @property
    def diagonal(self) -> float:
        lo, hi = np.asarray(self.bounds[0]), np.asarray(self.bounds[1])
        return float(np.linalg.norm(hi - lo))

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "bounds": [list(self.bounds[0]), list(self.bounds[1])],
            "objects": [
                {
                    "id": o.id,
                    "category": o.category,
                    "color": o.color,
                    "center": list(o.center),
                    "half_extents": list(o.half_extents),
                    "complex": o.complex,
                }
                for o in self.objects
            ],
            "surfaces": [
                {
                    "id": s.id,
                    "kind": s.kind,
                    "name": s.name,
                    "plane": list(s.plane),
                    "textureless": s.textureless,
                    "color": s.color,
                    "center": list(s.center),
                    "half_extents": list(s.half_extents),
                }
                for s in self.surfaces
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneGraph":
        objects = tuple(
            ObjectSpec(
                id=int(o["id"]),
                category=o["category"],
                color=o["color"],
                center=tuple(float(v) for v in o["center"]),
                half_extents=tuple(float(v) for v in o["half_extents"]),
                complex=bool(o["complex"]),
            )
            for o in d["objects"]
        )
        surfaces = tuple(
            SurfaceSpec(
                id=int(s["id"]),
                kind=s["kind"],
                plane=tuple(float(v) for v in s["plane"]),
                textureless=bool(s["textureless"]),
                name=s["name"],
                color=s["color"],
                center=tuple(float(v) for v in s["center"]),
                half_extents=tuple(float(v) for v in s["half_extents"]),
            )
            for s in d["surfaces"]
        )
        lo, hi = d["bounds"]
        return cls(
            objects=objects,
            surfaces=surfaces,
            bounds=(tuple(float(v) for v in lo), tuple(float(v) for v in hi)),
            seed=int(d["seed"]),
        )


@dataclass(eq=False)
class PointCloud:
    points: np.ndarray  # (N, 3) float32
    colors: np.ndarray  # (N, 3) float32 in [0, 1]
    source_id: np.ndarray  # (N,) int32, -1 when unowned

    def __post_init__(self):
        self.points = np.ascontiguousarray(self.points, dtype=np.float32).reshape(-1, 3)
        self.colors = np.ascontiguousarray(self.colors, dtype=np.float32).reshape(-1, 3)
        self.source_id = np.ascontiguousarray(self.source_id, dtype=np.int32).reshape(-1)
        n = self.points.shape[0]
        if self.colors.shape[0] != n or self.source_id.shape[0] != n:
            raise ValueError("points, colors and source_id must share N")
        if n and (self.colors.min() < 0.0 or self.colors.max() > 1.0):
            raise ValueError("colors must lie in [0, 1]")

    def __len__(self) -> int:
        return self.points.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, PointCloud):
            return NotImplemented
        return (
            np.array_equal(self.points, other.points)
            and np.array_equal(self.colors, other.colors)
            and np.array_equal(self.source_id, other.source_id)
        )

    def subset(self, mask: np.ndarray) -> "PointCloud":
        return PointCloud(self.points[mask], self.colors[mask], self.source_id[mask])


@dataclass(eq=False)
class CameraPose:
    matrix: np.ndarray  # (4, 4) float32 world-to-camera

    def __post_init__(self):
        self.matrix = np.ascontiguousarray(self.matrix, dtype=np.float32).reshape(4, 4)

    def __eq__(self, other) -> bool:
        if not isinstance(other, CameraPose):
            return NotImplemented
        return np.array_equal(self.matrix, other.matrix)

    def flatten(self) -> np.ndarray:
        return self.matrix.reshape(16)


@dataclass(eq=False)
class ViewImage:
    pixels: np.ndarray  # (H, W, 3) float32, multiples of 1/255
    pose: CameraPose

    def __eq__(self, other) -> bool:
        if not isinstance(other, ViewImage):
            return NotImplemented
        return np.array_equal(self.pixels, other.pixels) and self.pose == other.pose


@dataclass(frozen=True)
class QAItem:
    question: str
    answer: str
    task: str
    targets_degraded: bool

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")


@dataclass(eq=False)
class SceneSample:
    scene: SceneGraph
    cloud_clean: PointCloud
    cloud_degraded: PointCloud
    views: list[ViewImage]
    qa: list[QAItem] = field(default_factory=list)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SceneSample):
            return NotImplemented
        return (
            self.scene == other.scene
            and self.cloud_clean == other.cloud_clean
            and self.cloud_degraded == other.cloud_degraded
            and len(self.views) == len(other.views)
            and all(a == b for a, b in zip(self.views, other.views))
            and list(self.qa) == list(other.qa)
        )
