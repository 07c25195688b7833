"""Synthetic indoor scenes: generation, degradation, rendering, QA and storage."""

from .dataset import DatasetConfig, build_dataset, build_sample, read_dataset, write_dataset
from .generate import SceneConfig, degrade_point_cloud, generate_scene, sample_point_cloud
from .qa import describe_scene, generate_qa
from .render import render_views
from .types import (
    CATEGORIES,
    COLORS,
    TASKS,
    CameraPose,
    ObjectSpec,
    PointCloud,
    QAItem,
    SceneGraph,
    SceneSample,
    SurfaceSpec,
    ViewImage,
)

__all__ = [
    "CATEGORIES",
    "COLORS",
    "TASKS",
    "CameraPose",
    "DatasetConfig",
    "ObjectSpec",
    "PointCloud",
    "QAItem",
    "SceneConfig",
    "SceneGraph",
    "SceneSample",
    "SurfaceSpec",
    "ViewImage",
    "build_dataset",
    "build_sample",
    "degrade_point_cloud",
    "describe_scene",
    "generate_qa",
    "generate_scene",
    "read_dataset",
    "render_views",
    "sample_point_cloud",
    "write_dataset",
]
