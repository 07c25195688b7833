"""Run configuration: defaults, ``key = value`` files and CLI overrides."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import InvalidConfig
from .model import ModelConfig
from .qformer3d import MODES
from .scene.dataset import DatasetConfig
from .scene.generate import SceneConfig
from .scene.render import IMAGE_SIZES
from .scene.types import TASKS

RUN_ROOT_ENV = "VIEWFUSE3D_RUN_ROOT"


@dataclass
class RunConfig:
    seed: int = 0
    run_id: str = "default"
    data: str = "data"
    # dataset
    scenes: int = 250
    eval_scenes: int = 50
    n_points: int = 2048
    n_views: int = 16
    image_size: int = 32
    void_prob: float = 0.5
    jitter_sigma: float = 0.02
    workers: int = 1
    # model
    d: int = 64
    d_llm: int = 128
    n_heads: int = 4
    patch: int = 8
    n_point_tokens: int = 256
    knn: int = 8
    qformer_depth: int = 2
    fusion_layers: int = 4
    encoder_depth: int = 2
    llm_layers: int = 2
    ffn_mult: int = 4
    max_text_len: int = 16
    aggregator: str = "attention"
    use_pose: bool = True
    init: str = "transfer"
    # stage 0: language-model stub
    stub_steps: int = 1500
    stub_scenes: int = 2000
    stub_batch: int = 64
    stub_lr: float = 2e-3
    # stages 1-3
    steps1: int = 600
    steps2: int = 1000
    steps3: int = 300
    batch_size: int = 32
    warmup_frac: float = 0.1
    peak_lr: float = 1e-4
    weight_decay: float = 0.05
    freeze_encoders: bool = False
    point_source: str = "degraded"
    modality_dropout: float = 0.0
    tasks: str = ",".join(TASKS)
    # evaluation
    mode: str = "full"
    eval_batch: int = 64

    def validate(self) -> "RunConfig":
        pos = ("scenes", "n_points", "n_views", "d", "d_llm", "n_heads", "patch", "n_point_tokens", "knn",
               "qformer_depth", "fusion_layers", "encoder_depth", "llm_layers", "ffn_mult", "stub_steps",
               "stub_scenes", "stub_batch", "batch_size", "eval_batch", "workers", "max_text_len")
        for name in pos:
            if getattr(self, name) < 1:
                raise InvalidConfig(f"{name} must be >= 1")
        if self.eval_scenes < 1 or self.eval_scenes >= self.scenes:
            raise InvalidConfig("eval_scenes must be in [1, scenes)")
        for name in ("steps1", "steps2", "steps3"):
            if getattr(self, name) < 3:
                raise InvalidConfig(f"{name} must be >= 3")
        if self.image_size not in IMAGE_SIZES:
            raise InvalidConfig(f"image_size must be one of {IMAGE_SIZES}")
        if self.image_size % self.patch:
            raise InvalidConfig("patch must divide image_size")
        if self.d % self.n_heads or self.d_llm % self.n_heads:
            raise InvalidConfig("n_heads must divide d and d_llm")
        if self.aggregator not in ("attention", "mean", "max"):
            raise InvalidConfig("aggregator must be attention, mean or max")
        if self.init not in ("random", "transfer"):
            raise InvalidConfig("init must be random or transfer")
        if self.point_source not in ("degraded", "clean"):
            raise InvalidConfig("point_source must be degraded or clean")
        if self.mode not in MODES:
            raise InvalidConfig(f"mode must be one of {MODES}")
        if not set(self.task_set) <= set(TASKS) or not self.task_set:
            raise InvalidConfig(f"tasks must be a comma list drawn from {TASKS}")
        if not 0 <= self.modality_dropout <= 1 or not 0 < self.warmup_frac < 1:
            raise InvalidConfig("modality_dropout must be in [0, 1] and warmup_frac in (0, 1)")
        if not 0 < self.peak_lr or not 0 <= self.void_prob <= 1 or self.jitter_sigma < 0:
            raise InvalidConfig("peak_lr must be > 0, void_prob in [0, 1], jitter_sigma >= 0")
        if self.max_text_len < 4:
            raise InvalidConfig("max_text_len must be >= 4")
        return self

    @property
    def task_set(self):
        return tuple(t for t in self.tasks.split(",") if t)

    def to_dict(self):
        return dataclasses.asdict(self)

    def hash(self) -> str:
        """Hash over everything except bookkeeping fields that do not change results."""
        d = {k: v for k, v in self.to_dict().items() if k not in ("run_id", "workers", "data")}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)

    def dataset_config(self) -> DatasetConfig:
        return DatasetConfig(SceneConfig(), self.n_points, self.n_views, self.image_size, self.void_prob,
                             self.jitter_sigma)

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(
            vocab_size=vocab_size, d=self.d, d_llm=self.d_llm, n_heads=self.n_heads, llm_heads=self.n_heads,
            image_size=self.image_size, patch=self.patch, n_point_tokens=self.n_point_tokens, knn=self.knn,
            qformer_depth=self.qformer_depth, fusion_layers=self.fusion_layers, encoder_depth=self.encoder_depth,
            llm_layers=self.llm_layers, ffn_mult=self.ffn_mult, llm_ffn_mult=self.ffn_mult,
            max_text_len=self.max_text_len, aggregator=self.aggregator, use_pose=self.use_pose,
        )

    def dumps(self) -> str:
        lines = [f"# config_hash = {self.hash()}"]
        lines += [f"{k} = {_fmt(v)}" for k, v in self.to_dict().items()]
        return "\n".join(lines) + "\n"


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def _coerce(name, typ, raw):
    if isinstance(raw, str):
        raw = raw.strip()
    try:
        if typ in ("bool", bool):
            if isinstance(raw, bool):
                return raw
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ in ("int", int):
            return int(raw)
        if typ in ("float", float):
            return float(raw)
        return str(raw)
    except ValueError as e:
        raise InvalidConfig(f"bad value for {name}: {raw!r}") from e


FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def parse_config_text(text: str, source="<config>") -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidConfig(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in FIELD_TYPES:
            raise InvalidConfig(f"{source}:{lineno}: unknown key {key!r}")
        out[key] = _coerce(key, FIELD_TYPES[key], value)
    return out


def load_config(path=None, overrides=None) -> RunConfig:
    """Defaults, then the config file, then explicit overrides (CLI flags)."""
    values = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as e:
            raise InvalidConfig(f"cannot read config file {path}: {e}") from e
        values.update(parse_config_text(text, str(path)))
    for k, v in (overrides or {}).items():
        if v is not None:
            values[k] = _coerce(k, FIELD_TYPES[k], v)
    return RunConfig(**values).validate()
