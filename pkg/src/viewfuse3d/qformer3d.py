"""3D-aware Q-Former: queries read view-as-scene features via shared self-attention
and point features via cross-attention, then project into the language model space."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .errors import EmptyInputError, ShapeError, TransferError
from .fusion import QFormer

MODES = ("full", "views_only", "points_only")


@dataclass
class SceneEmbedding:
    tokens: torch.Tensor  # (..., 32, d_llm)
    mode: str


class QFormer3D(nn.Module):
    def __init__(self, d=64, d_llm=128, n_heads=4, depth=2, ffn_mult=4):
        super().__init__()
        self.qformer = QFormer(d, n_heads, depth, ffn_mult=ffn_mult)
        self.projector = nn.Linear(d, d_llm)

    @property
    def d(self):
        return self.qformer.d

    def encode(self, vas, instruction, points, has_vas=None, has_points=None):
        """Pre-projection query tokens.

        ``has_vas`` / ``has_points`` are optional per-sample boolean masks; a
        False entry behaves exactly like the input being absent for that sample.
        """
        if vas is None and points is None:
            raise EmptyInputError("need view-as-scene features, point features, or both")
        ctx, ctx_mask = [], []
        if vas is not None:
            if vas.shape[-1] != self.d:
                raise ShapeError("view-as-scene width does not match the Q-Former")
            m = torch.ones(vas.shape[:-1], dtype=torch.bool)
            if has_vas is not None:
                m = m & has_vas[..., None]
            ctx.append(vas)
            ctx_mask.append(m)
        if instruction is not None:
            ctx.append(instruction.tokens)
            ctx_mask.append(instruction.mask)
        context = torch.cat(ctx, dim=-2) if ctx else None
        context_mask = torch.cat(ctx_mask, dim=-1) if ctx else None
        gate = None
        if points is not None:
            if points.shape[-1] != self.d:
                raise ShapeError("point feature width does not match the Q-Former")
            if has_points is not None:
                gate = has_points.to(points.dtype)
        src = vas if vas is not None else points
        return self.qformer(points, context, context_mask, kv_gate=gate, batch_shape=src.shape[:-2])

    def forward(self, vas, instruction, points, has_vas=None, has_points=None):
        tokens = self.projector(self.encode(vas, instruction, points, has_vas, has_points))
        if vas is not None and points is not None:
            mode = "full"
        elif vas is not None:
            mode = "views_only"
        else:
            mode = "points_only"
        return SceneEmbedding(tokens, mode)


def forward_3d_aware(model: QFormer3D, vas, instruction, points) -> SceneEmbedding:
    return model(vas, instruction, points)


def project_to_llm(tokens, projector: nn.Linear):
    if tokens.shape[-1] != projector.in_features:
        raise ShapeError(f"token width {tokens.shape[-1]} != projector input {projector.in_features}")
    return projector(tokens)


@torch.no_grad()
def init_from_2d(target: QFormer3D, source: QFormer) -> QFormer3D:
    """Copy queries and every block/norm tensor from a 2D Q-Former; the projector is untouched."""
    src = source.state_dict()
    dst = target.qformer.state_dict()
    if src.keys() != dst.keys():
        raise TransferError("source and target Q-Formers have different block structure")
    for name, t in src.items():
        if t.shape != dst[name].shape:
            raise TransferError(f"shape mismatch for {name}: {tuple(t.shape)} vs {tuple(dst[name].shape)}")
    if source.n_heads != target.qformer.n_heads:
        raise TransferError("head counts differ")
    for name, p in target.qformer.named_parameters():
        p.copy_(dict(source.named_parameters())[name])
    return target
