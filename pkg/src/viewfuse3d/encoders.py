"""Stand-in encoders: tokenizer, patch image encoder, point-cloud encoder, text embedding."""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from . import kernels
from .errors import ShapeError, VocabError
from .nn.core import TransformerBlock, sinusoidal_positions
from .scene.types import PointCloud

SPECIALS = ("<pad>", "<bos>", "<eos>", "<unk>")


class Vocab:
    def __init__(self, token_to_id: dict):
        self.token_to_id = dict(token_to_id)
        ids = sorted(self.token_to_id.values())
        if ids != list(range(len(ids))):
            raise VocabError("vocabulary ids must be dense from 0")
        self.id_to_token = {i: t for t, i in self.token_to_id.items()}
        for s in SPECIALS:
            if s not in self.token_to_id:
                raise VocabError(f"missing special token {s}")
        self.pad, self.bos, self.eos, self.unk = (self.token_to_id[s] for s in SPECIALS)

    def __len__(self):
        return len(self.token_to_id)

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.token_to_id == other.token_to_id

    @property
    def special_ids(self):
        return {self.pad, self.bos, self.eos, self.unk}

    def save(self, path):
        Path(path).write_text(json.dumps(self.token_to_id, indent=1, sort_keys=True))

    @classmethod
    def load(cls, path):
        return cls(json.loads(Path(path).read_text()))


def tokenize(text: str) -> list[str]:
    return text.lower().split()


def build_vocab(corpus) -> Vocab:
    """Specials first, then tokens by descending frequency, ties broken lexicographically."""
    corpus = list(corpus)
    if not corpus:
        raise ValueError("corpus must be non-empty")
    freq = Counter(tok for text in corpus for tok in tokenize(text))
    for s in SPECIALS:
        freq.pop(s, None)
    ordered = sorted(freq, key=lambda t: (-freq[t], t))
    return Vocab({t: i for i, t in enumerate(list(SPECIALS) + ordered)})


def encode_text(vocab: Vocab, text: str, max_len: int) -> list[int]:
    if max_len < 2:
        raise ValueError("max_len must be >= 2")
    ids = [vocab.token_to_id.get(t, vocab.unk) for t in tokenize(text)]
    ids = [vocab.bos] + ids[: max_len - 2] + [vocab.eos]
    return ids


def decode_text(vocab: Vocab, ids) -> str:
    words = []
    for i in ids:
        i = int(i)
        if i == vocab.eos:
            break
        if i in vocab.special_ids:
            continue
        if i not in vocab.id_to_token:
            raise VocabError(f"id {i} outside the vocabulary")
        words.append(vocab.id_to_token[i])
    return " ".join(words)


def pad_batch(seqs, pad_id, length=None) -> torch.Tensor:
    length = length or max(len(s) for s in seqs)
    out = torch.full((len(seqs), length), pad_id, dtype=torch.long)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = torch.as_tensor(s[:length], dtype=torch.long)
    return out


@dataclass
class TextEmbedding:
    tokens: torch.Tensor  # (..., L, d)
    mask: torch.Tensor  # (..., L) bool, False at padding


class TextEmbedder(nn.Module):
    def __init__(self, vocab_size, d, max_len=64, pad_id=0):
        super().__init__()
        self.vocab_size = vocab_size
        self.pad_id = pad_id
        self.token = nn.Embedding(vocab_size, d)
        self.register_buffer("positions", sinusoidal_positions(max_len, d), persistent=False)

    def forward(self, ids) -> TextEmbedding:
        if ids.numel() and (int(ids.min()) < 0 or int(ids.max()) >= self.vocab_size):
            raise VocabError(f"token id outside [0, {self.vocab_size})")
        pos = self.positions[: ids.shape[-1]].to(self.token.weight.dtype)
        return TextEmbedding(self.token(ids) + pos, ids != self.pad_id)


def embed_text(vocab: Vocab, ids, embedder: TextEmbedder) -> TextEmbedding:
    if embedder.vocab_size != len(vocab):
        raise VocabError("embedder and vocabulary sizes differ")
    return embedder(ids)


class ImageEncoder(nn.Module):
    """Patch flatten, linear embed, learned patch positions, transformer blocks."""

    def __init__(self, image_size=32, patch=8, d=64, n_heads=4, depth=2, ffn_mult=4):
        super().__init__()
        if image_size % patch:
            raise ShapeError(f"image size {image_size} not divisible by patch {patch}")
        self.image_size = image_size
        self.patch = patch
        self.n_tokens = (image_size // patch) ** 2
        self.embed = nn.Linear(3 * patch * patch, d)
        self.pos = nn.Parameter(torch.randn(self.n_tokens, d) * 0.02)
        self.blocks = nn.ModuleList(TransformerBlock(d, n_heads, ffn_mult=ffn_mult) for _ in range(depth))
        self.ln_out = nn.LayerNorm(d)

    def patchify(self, images):
        *lead, h, w, c = images.shape
        if h != self.image_size or w != self.image_size or c != 3:
            raise ShapeError(f"expected (..., {self.image_size}, {self.image_size}, 3) images, got {tuple(images.shape)}")
        p, g = self.patch, self.image_size // self.patch
        x = images.reshape(*lead, g, p, g, p, 3).transpose(-4, -3)
        return x.reshape(*lead, g * g, p * p * 3)

    def forward(self, images):
        x = self.embed(self.patchify(images)) + self.pos
        for blk in self.blocks:
            x = blk(x)
        return self.ln_out(x)


def encode_image(image, encoder: ImageEncoder, dtype=torch.float32):
    pixels = image.pixels if hasattr(image, "pixels") else image
    return encoder(torch.as_tensor(np.asarray(pixels), dtype=dtype))


def point_descriptors(cloud: PointCloud, n_centers=256, k=8) -> np.ndarray:
    """Per-center (xyz, rgb, mean k-NN offset) rows for ``n_centers`` FPS centers."""
    if len(cloud) < 1:
        raise ValueError("point cloud is empty")
    pts = cloud.points.astype(np.float64)
    idx = kernels.farthest_point_sample(pts, n_centers)
    offsets = kernels.knn_mean_offsets(pts, idx, k)
    return np.concatenate([pts[idx], cloud.colors[idx].astype(np.float64), offsets], axis=1)


def sinusoid_3d(xyz, d):
    """Per-axis sin/cos features at octave wavelengths from 16 m down; zero-padded to ``d``."""
    n_freq = d // 6
    if n_freq == 0:
        raise ShapeError("d must be >= 6 for the 3D position encoding")
    omega = 2.0 * math.pi / 16.0 * torch.pow(2.0, torch.arange(n_freq, dtype=xyz.dtype))
    ang = xyz[..., :, None] * omega  # (..., 3, n_freq)
    enc = torch.cat([torch.sin(ang), torch.cos(ang)], dim=-1).flatten(-2)
    pad = d - enc.shape[-1]
    if pad:
        enc = torch.cat([enc, enc.new_zeros(*enc.shape[:-1], pad)], dim=-1)
    return enc


class PointEncoder(nn.Module):
    def __init__(self, d=64, n_heads=4, depth=2, n_centers=256, k=8, ffn_mult=4):
        super().__init__()
        self.d = d
        self.n_centers = n_centers
        self.k = k
        self.embed = nn.Linear(9, d)
        self.blocks = nn.ModuleList(TransformerBlock(d, n_heads, ffn_mult=ffn_mult) for _ in range(depth))
        self.ln_out = nn.LayerNorm(d)

    def forward(self, desc):
        """``desc`` is ``(..., n_centers, 9)`` from :func:`point_descriptors`."""
        x = self.embed(desc) + sinusoid_3d(desc[..., :3], self.d)
        for blk in self.blocks:
            x = blk(x)
        return self.ln_out(x)


def encode_points(cloud: PointCloud, encoder: PointEncoder, dtype=torch.float32):
    desc = point_descriptors(cloud, encoder.n_centers, encoder.k)
    return encoder(torch.as_tensor(desc, dtype=dtype))
