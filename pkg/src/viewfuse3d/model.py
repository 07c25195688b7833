"""Full scene-QA model: encoders -> fusion -> 3D-aware Q-Former -> frozen LM stub."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
import torch.nn as nn

from .encoders import ImageEncoder, PointEncoder, TextEmbedder
from .fusion import FusionModule
from .llm import LmStub
from .qformer3d import MODES, QFormer3D, SceneEmbedding

GROUPS = {
    "encoders": ("image_encoder", "point_encoder", "text_embed"),
    "fusion": ("fusion",),
    "qformer3d": ("qformer3d",),
    "llm": ("llm",),
}


@dataclass
class ModelConfig:
    vocab_size: int
    d: int = 64
    d_llm: int = 128
    n_heads: int = 4
    llm_heads: int = 4
    image_size: int = 32
    patch: int = 8
    n_point_tokens: int = 256
    knn: int = 8
    qformer_depth: int = 2
    fusion_layers: int = 4
    encoder_depth: int = 2
    llm_layers: int = 2
    ffn_mult: int = 4
    llm_ffn_mult: int = 4
    max_text_len: int = 16
    aggregator: str = "attention"
    use_pose: bool = True
    pad_id: int = 0
    bos_id: int = 1
    eos_id: int = 2

    def to_dict(self):
        return asdict(self)


@dataclass
class Batch:
    """Scene tensors are stored once per distinct scene; ``scene_of`` maps rows to scenes."""

    images: torch.Tensor  # (S, n, H, W, 3)
    poses: torch.Tensor  # (S, n, 4, 4)
    points: torch.Tensor  # (S, T_pts, 9) point descriptors
    instr: torch.Tensor  # (B, L) token ids
    answer: torch.Tensor  # (B, L_a) bos ... eos, padded
    scene_of: torch.Tensor | None = None  # (B,) long; None means S == B in order
    has_vas: torch.Tensor | None = None  # (B,) bool; per-sample modality dropout
    has_points: torch.Tensor | None = None

    def __len__(self):
        return self.instr.shape[0]

    def gather(self, per_scene):
        return per_scene if self.scene_of is None else per_scene[self.scene_of]

    def select(self, rows) -> "Batch":
        """Sub-batch of the given rows (scene tensors are kept whole)."""
        rows = torch.as_tensor(rows, dtype=torch.long)
        scene_of = rows if self.scene_of is None else self.scene_of[rows]
        pick = lambda t: None if t is None else t[rows]  # noqa: E731
        return Batch(self.images, self.poses, self.points, self.instr[rows], self.answer[rows], scene_of,
                     pick(self.has_vas), pick(self.has_points))

    def to(self, dtype):
        return Batch(self.images.to(dtype), self.poses.to(dtype), self.points.to(dtype), self.instr,
                     self.answer, self.scene_of, self.has_vas, self.has_points)


class SceneQAModel(nn.Module):
    def __init__(self, cfg: ModelConfig, llm: LmStub | None = None):
        super().__init__()
        self.cfg = cfg
        d = cfg.d
        self.image_encoder = ImageEncoder(cfg.image_size, cfg.patch, d, cfg.n_heads, cfg.encoder_depth, cfg.ffn_mult)
        self.point_encoder = PointEncoder(d, cfg.n_heads, cfg.encoder_depth, cfg.n_point_tokens, cfg.knn, cfg.ffn_mult)
        self.text_embed = TextEmbedder(cfg.vocab_size, d, pad_id=cfg.pad_id)
        self.fusion = FusionModule(d, cfg.n_heads, cfg.qformer_depth, cfg.fusion_layers, cfg.ffn_mult,
                                   cfg.aggregator, cfg.use_pose)
        self.qformer3d = QFormer3D(d, cfg.d_llm, cfg.n_heads, cfg.qformer_depth, cfg.ffn_mult)
        self.llm = llm if llm is not None else LmStub(
            cfg.vocab_size, cfg.d_llm, cfg.llm_heads, cfg.llm_layers, cfg.llm_layers, cfg.llm_ffn_mult,
            pad_id=cfg.pad_id, bos_id=cfg.bos_id, eos_id=cfg.eos_id,
        )

    def _needs_grad(self, *modules):
        return torch.is_grad_enabled() and any(p.requires_grad for m in modules for p in m.parameters())

    def view_features(self, batch: Batch):
        """View-as-scene features (B, 32, d)."""
        with torch.set_grad_enabled(self._needs_grad(self.image_encoder, self.fusion, self.text_embed)):
            text = self.text_embed(batch.instr)
            feats = batch.gather(self.image_encoder(batch.images))  # (B, n, T, d)
            return self.fusion(feats, batch.gather(batch.poses), text)

    def point_features(self, batch: Batch):
        with torch.set_grad_enabled(self._needs_grad(self.point_encoder)):
            return batch.gather(self.point_encoder(batch.points))

    def upstream(self, batch: Batch, mode="full"):
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}")
        vas = self.view_features(batch) if mode in ("full", "views_only") else None
        pts = self.point_features(batch) if mode in ("full", "points_only") else None
        return vas, pts

    def embed(self, batch: Batch, vas, pts) -> SceneEmbedding:
        text = self.text_embed(batch.instr)
        has_vas = batch.has_vas if vas is not None else None
        has_pts = batch.has_points if pts is not None else None
        return self.qformer3d(vas, text, pts, has_vas, has_pts)

    def scene_embedding(self, batch: Batch, mode="full") -> SceneEmbedding:
        vas, pts = self.upstream(batch, mode)
        return self.embed(batch, vas, pts)

    def loss_from_features(self, batch: Batch, vas, pts):
        emb = self.embed(batch, vas, pts)
        return self.llm.loss(emb.tokens, None, batch.instr, batch.answer)

    def loss(self, batch: Batch, mode="full"):
        return self.loss_from_features(batch, *self.upstream(batch, mode))

    @torch.no_grad()
    def generate_ids(self, batch: Batch, mode="full", gen=None):
        from .llm import GenerationConfig

        gen = gen or GenerationConfig(eos_id=self.cfg.eos_id)
        emb = self.scene_embedding(batch, mode)
        return self.llm.generate(emb.tokens, None, batch.instr, gen)
