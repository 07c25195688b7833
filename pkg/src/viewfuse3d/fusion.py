"""Per-view Q-Former features, camera-pose embeddings and view aggregation."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import EmptyInputError, ShapeError
from .nn.core import FeedForward, MultiHeadAttention, TransformerBlock

N_QUERIES = 32


class QFormerBlock(nn.Module):
    """Joint self-attention over [queries | context], then query-only cross-attention and FFN.

    The same self-attention weights serve query and context positions.
    Context positions are carried to the next block after self-attention.
    """

    def __init__(self, d, n_heads, ffn_mult=4):
        super().__init__()
        self.ln_self = nn.LayerNorm(d)
        self.self_attn = MultiHeadAttention(d, n_heads)
        self.ln_cross = nn.LayerNorm(d)
        self.cross_attn = MultiHeadAttention(d, n_heads)
        self.ln_ff = nn.LayerNorm(d)
        self.ff = FeedForward(d, ffn_mult)

    def forward(self, queries, context=None, context_mask=None, kv=None, kv_gate=None):
        nq = queries.shape[-2]
        if context is not None and context.shape[-2]:
            h = torch.cat([queries, context], dim=-2)
            qmask = torch.ones(*context_mask.shape[:-1], nq, dtype=torch.bool)
            mask = torch.cat([qmask, context_mask], dim=-1)
        else:
            h, mask = queries, None
        h = h + self.self_attn(self.ln_self(h), key_mask=mask)
        q, ctx = h[..., :nq, :], h[..., nq:, :]
        if kv is not None:
            upd = self.cross_attn(self.ln_cross(q), kv)
            q = q + (upd if kv_gate is None else upd * kv_gate[..., None, None])
        q = q + self.ff(self.ln_ff(q))
        return q, ctx


class QFormer(nn.Module):
    def __init__(self, d=64, n_heads=4, depth=2, n_queries=N_QUERIES, ffn_mult=4):
        super().__init__()
        self.d = d
        self.n_heads = n_heads
        self.query = nn.Parameter(torch.randn(n_queries, d) * 0.02)
        self.blocks = nn.ModuleList(QFormerBlock(d, n_heads, ffn_mult) for _ in range(depth))
        self.ln_out = nn.LayerNorm(d)

    def forward(self, kv=None, context=None, context_mask=None, kv_gate=None, batch_shape=None):
        if batch_shape is None:
            src = kv if kv is not None else context
            batch_shape = src.shape[:-2]
        q = self.query.expand(*batch_shape, *self.query.shape)
        if context is not None and context_mask is None:
            context_mask = torch.ones(context.shape[:-1], dtype=torch.bool)
        for blk in self.blocks:
            q, context = blk(q, context, context_mask, kv, kv_gate)
        return self.ln_out(q)


class PoseMLP(nn.Module):
    """Flattened 4x4 pose -> hidden -> d, two affine maps with a GELU between."""

    def __init__(self, d=64, hidden=None):
        super().__init__()
        self.fc1 = nn.Linear(16, hidden or d)
        self.fc2 = nn.Linear(hidden or d, d)

    def forward(self, pose):
        flat = pose.reshape(*pose.shape[:-2], 16) if pose.shape[-2:] == (4, 4) else pose
        if flat.shape[-1] != 16:
            raise ShapeError(f"expected flattened 16-value poses, got {tuple(pose.shape)}")
        return self.fc2(F.gelu(self.fc1(flat)))


class ViewAggregator(nn.Module):
    """Fusion queries attending to the pooled view tokens through stacked layers, then Proj."""

    def __init__(self, d=64, n_heads=4, n_layers=4, n_queries=N_QUERIES, ffn_mult=4):
        super().__init__()
        self.query = nn.Parameter(torch.randn(n_queries, d) * 0.02)
        self.layers = nn.ModuleList(TransformerBlock(d, n_heads, cross=True, ffn_mult=ffn_mult) for _ in range(n_layers))
        self.ln_out = nn.LayerNorm(d)
        self.proj = nn.Linear(d, d)

    def forward(self, views):
        """``views`` is ``(..., n, 32, d)``; tokens of all views are pooled without positions."""
        if views.shape[-3] == 0:
            raise EmptyInputError("no views to aggregate")
        pooled = views.reshape(*views.shape[:-3], views.shape[-3] * views.shape[-2], views.shape[-1])
        q = self.query.expand(*pooled.shape[:-2], *self.query.shape)
        for layer in self.layers:
            q = layer(q, pooled)
        return self.proj(self.ln_out(q))


def _stack_views(views):
    if isinstance(views, torch.Tensor):
        return views
    views = list(views)
    if not views:
        raise EmptyInputError("no views to aggregate")
    return torch.stack(views, dim=-3)


def extract_view_features(image_feats, instruction, qformer: QFormer):
    """32 query tokens per view, conditioned on the instruction through shared self-attention."""
    if image_feats.shape[-1] != qformer.d or instruction.tokens.shape[-1] != qformer.d:
        raise ShapeError("image/instruction feature width does not match the Q-Former")
    return qformer(image_feats, instruction.tokens, instruction.mask)


def pose_embedding(pose, mlp: PoseMLP):
    m = pose.matrix if hasattr(pose, "matrix") else pose
    w = mlp.fc1.weight
    return mlp(torch.as_tensor(m, dtype=w.dtype))


def fuse_pose(view, pos_emb):
    """Add one pose embedding to every query row of a view."""
    if view.shape[-1] != pos_emb.shape[-1]:
        raise ShapeError(f"view width {view.shape[-1]} != pose embedding width {pos_emb.shape[-1]}")
    return view + pos_emb.unsqueeze(-2)


def aggregate_views(views, aggregator: ViewAggregator):
    return aggregator(_stack_views(views))


def aggregate_baseline(views, mode="mean"):
    stack = _stack_views(views)
    if stack.shape[-3] == 0:
        raise EmptyInputError("no views to aggregate")
    if mode == "mean":
        return stack.mean(dim=-3)
    if mode == "max":
        return stack.amax(dim=-3)
    raise ValueError(f"unknown baseline mode {mode!r}")


class FusionModule(nn.Module):
    """2D Q-Former per view, pose embeddings, and attention (or mean/max) aggregation."""

    def __init__(self, d=64, n_heads=4, qformer_depth=2, n_layers=4, ffn_mult=4,
                 aggregator="attention", use_pose=True):
        super().__init__()
        if aggregator not in ("attention", "mean", "max"):
            raise ValueError(f"unknown aggregator {aggregator!r}")
        self.aggregator_mode = aggregator
        self.use_pose = use_pose
        self.qformer = QFormer(d, n_heads, qformer_depth, ffn_mult=ffn_mult)
        self.pose_mlp = PoseMLP(d)
        self.aggregator = ViewAggregator(d, n_heads, n_layers, ffn_mult=ffn_mult)

    def unused_prefixes(self):
        out = []
        if self.aggregator_mode != "attention":
            out.append("aggregator")
        if not self.use_pose:
            out.append("pose_mlp")
        return out

    def forward(self, image_feats, poses, instruction):
        """``image_feats`` (B, n, T, d); ``poses`` (B, n, 4, 4); instruction tokens (B, L, d)."""
        b, n = image_feats.shape[:2]
        if n == 0:
            raise EmptyInputError("no views")
        text = instruction.tokens.unsqueeze(1).expand(b, n, *instruction.tokens.shape[1:])
        mask = instruction.mask.unsqueeze(1).expand(b, n, instruction.mask.shape[-1])
        q = self.qformer(image_feats, text, mask)  # (B, n, 32, d)
        if self.use_pose:
            q = fuse_pose(q, self.pose_mlp(poses))
        if self.aggregator_mode == "attention":
            return self.aggregator(q)
        return aggregate_baseline(q, self.aggregator_mode)
