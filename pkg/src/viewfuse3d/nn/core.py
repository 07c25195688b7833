"""Attention, transformer blocks and the token-level loss."""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import ShapeError, UndefinedLossError


def attention(q, k, v, n_heads, key_mask=None, causal=False, out_proj=None, return_weights=False):
    """Multi-head scaled dot-product attention over already-projected inputs.

    ``q`` is ``(..., T_q, d)``, ``k``/``v`` are ``(..., T_k, d)``. Heads split
    the last dimension; each head computes softmax(q k^T / sqrt(d / h)) v. The
    concatenated heads pass through ``out_proj`` when given. ``key_mask`` is a
    boolean ``(..., T_k)`` tensor, True for keys that may be attended to.
    """
    d = q.shape[-1]
    if d % n_heads:
        raise ShapeError(f"model dim {d} not divisible by {n_heads} heads")
    if k.shape[-1] != d or v.shape[-1] != d or k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"incompatible q/k/v shapes {tuple(q.shape)}, {tuple(k.shape)}, {tuple(v.shape)}")
    hd = d // n_heads
    tq, tk = q.shape[-2], k.shape[-2]

    def split(x, t):
        return x.reshape(*x.shape[:-2], t, n_heads, hd).transpose(-2, -3)

    qh, kh, vh = split(q, tq), split(k, tk), split(v, tk)
    scores = qh @ kh.transpose(-1, -2) / math.sqrt(hd)
    if key_mask is not None:
        if key_mask.shape[-1] != tk:
            raise ShapeError(f"key mask length {key_mask.shape[-1]} != {tk} keys")
        scores = scores.masked_fill(~key_mask[..., None, None, :], torch.finfo(scores.dtype).min)
    if causal:
        allowed = torch.ones(tq, tk, dtype=torch.bool, device=q.device).tril(tk - tq)
        scores = scores.masked_fill(~allowed, torch.finfo(scores.dtype).min)
    weights = torch.softmax(scores, dim=-1)
    out = (weights @ vh).transpose(-2, -3).reshape(*q.shape[:-2], tq, d)
    if out_proj is not None:
        out = out_proj(out)
    return (out, weights) if return_weights else out


class MultiHeadAttention(nn.Module):
    # the key projection has no bias: softmax is invariant to it, so it would never train
    def __init__(self, d, n_heads):
        super().__init__()
        if d % n_heads:
            raise ShapeError(f"model dim {d} not divisible by {n_heads} heads")
        self.n_heads = n_heads
        self.q_proj = nn.Linear(d, d)
        self.k_proj = nn.Linear(d, d, bias=False)
        self.v_proj = nn.Linear(d, d)
        self.out_proj = nn.Linear(d, d)

    def forward(self, x, context=None, key_mask=None, causal=False, return_weights=False):
        kv = x if context is None else context
        return attention(
            self.q_proj(x),
            self.k_proj(kv),
            self.v_proj(kv),
            self.n_heads,
            key_mask=key_mask,
            causal=causal,
            out_proj=self.out_proj,
            return_weights=return_weights,
        )


class FeedForward(nn.Module):
    def __init__(self, d, mult=4):
        super().__init__()
        self.fc1 = nn.Linear(d, d * mult)
        self.fc2 = nn.Linear(d * mult, d)

    def forward(self, x):
        return self.fc2(F.gelu(self.fc1(x)))


class TransformerBlock(nn.Module):
    """Pre-norm block: self-attention, optional cross-attention, feed-forward."""

    def __init__(self, d, n_heads, cross=False, ffn_mult=4):
        super().__init__()
        self.cross = cross
        self.ln_self = nn.LayerNorm(d)
        self.self_attn = MultiHeadAttention(d, n_heads)
        if cross:
            self.ln_cross = nn.LayerNorm(d)
            self.cross_attn = MultiHeadAttention(d, n_heads)
        self.ln_ff = nn.LayerNorm(d)
        self.ff = FeedForward(d, ffn_mult)

    def forward(self, x, context=None, self_mask=None, context_mask=None, causal=False):
        if (context is not None) != self.cross:
            raise ShapeError("context must be given exactly when the block has cross-attention")
        x = x + self.self_attn(self.ln_self(x), key_mask=self_mask, causal=causal)
        if self.cross:
            x = x + self.cross_attn(self.ln_cross(x), context, key_mask=context_mask)
        return x + self.ff(self.ln_ff(x))


def transformer_block(x, context, block: TransformerBlock, **kw):
    return block(x, context, **kw)


def zero_residual_branches(block: nn.Module) -> None:
    """Zero every output projection so each residual branch contributes nothing."""
    with torch.no_grad():
        for m in block.modules():
            if isinstance(m, MultiHeadAttention):
                m.out_proj.weight.zero_()
                m.out_proj.bias.zero_()
            elif isinstance(m, FeedForward):
                m.fc2.weight.zero_()
                m.fc2.bias.zero_()


def cross_entropy(logits, targets, ignore_index=-100):
    """Mean negative log-likelihood over positions whose target is not ignored."""
    v = logits.shape[-1]
    logits = logits.reshape(-1, v)
    targets = targets.reshape(-1)
    if logits.shape[0] != targets.shape[0]:
        raise ShapeError("logits and targets disagree on the number of positions")
    keep = targets != ignore_index
    if not bool(keep.any()):
        raise UndefinedLossError("every target position is ignored")
    tk = targets[keep]
    if bool(((tk < 0) | (tk >= v)).any()):
        raise ShapeError("target id outside the vocabulary")
    logp = torch.log_softmax(logits[keep], dim=-1)
    return -logp.gather(1, tk[:, None]).mean()


def sinusoidal_positions(n, d, dtype=torch.float32):
    pos = torch.arange(n, dtype=torch.float64)[:, None]
    i = torch.arange(0, d, 2, dtype=torch.float64)
    angle = pos / torch.pow(10000.0, i / d)
    out = torch.zeros(n, d, dtype=torch.float64)
    out[:, 0::2] = torch.sin(angle)
    out[:, 1::2] = torch.cos(angle[:, : d // 2])
    return out.to(dtype)
