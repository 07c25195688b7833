"""Dataset assembly and the on-disk scene format.

Layout under ``root``::

    manifest.json
    scene_<k>/cloud_clean.bin      uint32 N | N*3 f32 xyz | N*3 f32 rgb | N i32 source_id
    scene_<k>/cloud_degraded.bin
    scene_<k>/views/<i>.png, <i>.pose (16 f32, row-major)
    scene_<k>/scene.json
    scene_<k>/qa.jsonl
"""

from __future__ import annotations

import hashlib
import json
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from ..errors import DatasetFormatError, InvalidConfig, PlacementError
from .generate import SceneConfig, degrade_point_cloud, generate_scene, sample_point_cloud
from .qa import generate_qa
from .render import IMAGE_SIZES, render_views
from .types import CameraPose, PointCloud, QAItem, SceneGraph, SceneSample, ViewImage

FORMAT_VERSION = 1
DEFAULT_PER_TASK = {"count": 2, "color": 3, "exist": 2, "spatial": 2, "caption": 1}


@dataclass
class DatasetConfig:
    scene: SceneConfig = field(default_factory=SceneConfig)
    n_points: int = 2048
    n_views: int = 16
    image_size: int = 32
    void_prob: float = 0.5
    jitter_sigma: float = 0.02
    per_task: dict = field(default_factory=lambda: dict(DEFAULT_PER_TASK))

    def validate(self) -> None:
        self.scene.validate()
        if self.n_points < 64:
            raise InvalidConfig("n_points must be >= 64")
        if self.n_views < 1:
            raise InvalidConfig("n_views must be >= 1")
        if self.image_size not in IMAGE_SIZES:
            raise InvalidConfig(f"image_size must be one of {IMAGE_SIZES}")
        if not 0.0 <= self.void_prob <= 1.0 or self.jitter_sigma < 0:
            raise InvalidConfig("invalid degradation parameters")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetConfig":
        d = dict(d)
        d["scene"] = SceneConfig(**d.get("scene", {}))
        return cls(**d)

    def hash(self) -> str:
        return config_hash(self.to_dict())


def config_hash(d: dict) -> str:
    blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def scene_seeds(seed: int, index: int, attempt: int = 0) -> list[int]:
    ss = np.random.SeedSequence([int(seed), int(index), int(attempt)])
    return [int(s) for s in ss.generate_state(5)]


def build_sample(index: int, seed: int, config: DatasetConfig) -> tuple[SceneSample, int]:
    """One scene sample; returns it with the placement attempt that succeeded."""
    for attempt in range(10):
        s_scene, s_cloud, s_deg, s_render, s_qa = scene_seeds(seed, index, attempt)
        try:
            scene = generate_scene(s_scene, config.scene)
        except PlacementError:
            continue
        clean = sample_point_cloud(scene, config.n_points, s_cloud)
        degraded = degrade_point_cloud(clean, scene, config.void_prob, config.jitter_sigma, s_deg)
        views = render_views(scene, config.n_views, config.image_size, s_render, cloud=clean)
        qa = generate_qa(scene, config.per_task, s_qa)
        return SceneSample(scene, clean, degraded, views, qa), attempt
    raise PlacementError(f"scene {index}: placement failed for 10 derived seeds")


def _build_one(args):
    return build_sample(*args)


def build_dataset(n_scenes: int, seed: int, config: DatasetConfig, workers: int = 1):
    config.validate()
    jobs = [(k, seed, config) for k in range(n_scenes)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_build_one, jobs))
    else:
        results = [_build_one(j) for j in jobs]
    return [r[0] for r in results], [r[1] for r in results]


def _write_cloud(path: Path, cloud: PointCloud) -> None:
    with open(path, "wb") as f:
        f.write(struct.pack("<I", len(cloud)))
        f.write(cloud.points.astype("<f4").tobytes())
        f.write(cloud.colors.astype("<f4").tobytes())
        f.write(cloud.source_id.astype("<i4").tobytes())


def _read_cloud(path: Path) -> PointCloud:
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise DatasetFormatError(path, f"cannot read ({e.strerror})") from e
    if len(raw) < 4:
        raise DatasetFormatError(path, "truncated header")
    (n,) = struct.unpack_from("<I", raw, 0)
    if len(raw) != 4 + 28 * n:
        raise DatasetFormatError(path, f"expected {4 + 28 * n} bytes for N={n}, found {len(raw)}")
    off = 4
    pts = np.frombuffer(raw, "<f4", 3 * n, off).reshape(n, 3)
    off += 12 * n
    cols = np.frombuffer(raw, "<f4", 3 * n, off).reshape(n, 3)
    off += 12 * n
    src = np.frombuffer(raw, "<i4", n, off)
    try:
        return PointCloud(pts.astype(np.float32), cols.astype(np.float32), src.astype(np.int32))
    except ValueError as e:
        raise DatasetFormatError(path, str(e)) from e


def write_sample(sample: SceneSample, scene_dir: Path) -> None:
    views_dir = scene_dir / "views"
    views_dir.mkdir(parents=True, exist_ok=True)
    _write_cloud(scene_dir / "cloud_clean.bin", sample.cloud_clean)
    _write_cloud(scene_dir / "cloud_degraded.bin", sample.cloud_degraded)
    for i, view in enumerate(sample.views):
        px = np.round(view.pixels * 255.0).astype(np.uint8)
        Image.fromarray(px, mode="RGB").save(views_dir / f"{i}.png")
        (views_dir / f"{i}.pose").write_bytes(view.pose.matrix.astype("<f4").tobytes())
    (scene_dir / "scene.json").write_text(json.dumps(sample.scene.to_dict(), indent=1))
    with open(scene_dir / "qa.jsonl", "w") as f:
        for item in sample.qa:
            f.write(json.dumps(asdict(item)) + "\n")


def read_sample(scene_dir: Path, n_views: int) -> SceneSample:
    scene_path = scene_dir / "scene.json"
    try:
        scene = SceneGraph.from_dict(json.loads(scene_path.read_text()))
    except (OSError, ValueError, KeyError, TypeError) as e:
        raise DatasetFormatError(scene_path, f"invalid scene description ({e})") from e
    clean = _read_cloud(scene_dir / "cloud_clean.bin")
    degraded = _read_cloud(scene_dir / "cloud_degraded.bin")
    views = []
    for i in range(n_views):
        png = scene_dir / "views" / f"{i}.png"
        pose_path = scene_dir / "views" / f"{i}.pose"
        try:
            with Image.open(png) as im:
                px = np.asarray(im.convert("RGB"), dtype=np.uint8)
        except (OSError, ValueError) as e:
            raise DatasetFormatError(png, f"unreadable image ({e})") from e
        try:
            raw = pose_path.read_bytes()
        except OSError as e:
            raise DatasetFormatError(pose_path, "missing pose") from e
        if len(raw) != 64:
            raise DatasetFormatError(pose_path, f"expected 64 bytes, found {len(raw)}")
        pose = CameraPose(np.frombuffer(raw, "<f4").reshape(4, 4).astype(np.float32))
        views.append(ViewImage(px.astype(np.float32) / np.float32(255.0), pose))
    qa_path = scene_dir / "qa.jsonl"
    try:
        qa = [QAItem(**json.loads(line)) for line in qa_path.read_text().splitlines() if line.strip()]
    except (OSError, ValueError, TypeError) as e:
        raise DatasetFormatError(qa_path, f"invalid QA file ({e})") from e
    return SceneSample(scene, clean, degraded, views, qa)


def write_dataset(samples, dir_path, config: DatasetConfig | None = None, seed=None, attempts=None) -> dict:
    """Write samples plus ``manifest.json``; returns the manifest."""
    root = Path(dir_path)
    root.mkdir(parents=True, exist_ok=True)
    names = []
    for k, sample in enumerate(samples):
        name = f"scene_{k}"
        write_sample(sample, root / name)
        names.append(name)
    n_views = len(samples[0].views) if samples else (config.n_views if config else 0)
    manifest = {
        "format": FORMAT_VERSION,
        "count": len(samples),
        "scenes": names,
        "n_views": n_views,
        "seed": seed,
        "scene_seeds": [s.scene.seed for s in samples],
        "attempts": attempts,
        "qa_count": sum(len(s.qa) for s in samples),
        "config": config.to_dict() if config else None,
        "config_hash": config.hash() if config else None,
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return manifest


def read_manifest(dir_path) -> dict:
    path = Path(dir_path) / "manifest.json"
    try:
        manifest = json.loads(path.read_text())
    except OSError as e:
        raise DatasetFormatError(path, "manifest missing") from e
    except ValueError as e:
        raise DatasetFormatError(path, f"manifest is not valid JSON ({e})") from e
    for key in ("count", "scenes", "n_views"):
        if key not in manifest:
            raise DatasetFormatError(path, f"manifest lacks {key!r}")
    return manifest


def read_dataset(dir_path) -> list[SceneSample]:
    root = Path(dir_path)
    manifest = read_manifest(root)
    on_disk = sorted(p.name for p in root.iterdir() if p.is_dir() and p.name.startswith("scene_"))
    if manifest["count"] != len(manifest["scenes"]) or manifest["count"] != len(on_disk):
        raise DatasetFormatError(
            root / "manifest.json",
            f"manifest count {manifest['count']} does not match {len(on_disk)} scene directories",
        )
    missing = set(manifest["scenes"]) - set(on_disk)
    if missing:
        raise DatasetFormatError(root / sorted(missing)[0], "scene directory listed in manifest is missing")
    return [read_sample(root / name, manifest["n_views"]) for name in manifest["scenes"]]
