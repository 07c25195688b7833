"""Tensorised scene/QA items ready for batching."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .encoders import Vocab, build_vocab, encode_text, pad_batch, point_descriptors
from .errors import InvalidConfig
from .model import Batch
from .scene.qa import describe_scene, qa_vocabulary
from .scene.render import render_views
from .scene.types import SceneSample

POINT_SOURCES = ("degraded", "clean")


def corpus_vocab(samples=(), extra=()) -> Vocab:
    """Closed vocabulary over every template word plus the given samples."""
    corpus = [" ".join(qa_vocabulary())]
    for s in samples:
        corpus += [q.question for q in s.qa] + [q.answer for q in s.qa] + [describe_scene(s.scene).replace(",", " ")]
    corpus += list(extra)
    return build_vocab(corpus)


@dataclass
class Item:
    scene: int
    question: str
    answer: str
    task: str
    degraded: bool


class PreparedData:
    """Per-scene image/pose/point tensors and per-question token ids."""

    def __init__(self, samples: list[SceneSample], vocab: Vocab, max_text_len=16, n_point_tokens=256,
                 knn=8, n_views=None):
        if not samples:
            raise InvalidConfig("no scenes to prepare")
        self.vocab = vocab
        self.max_text_len = max_text_len
        imgs, poses, clean, degraded = [], [], [], []
        for s in samples:
            views = s.views
            if n_views is not None and n_views != len(views):
                # camera layout depends on the view count, so re-render rather than subsample
                rseed = int(np.random.SeedSequence([s.scene.seed, n_views]).generate_state(1)[0])
                views = render_views(s.scene, n_views, views[0].pixels.shape[0], rseed, cloud=s.cloud_clean)
            imgs.append(np.stack([v.pixels for v in views]))
            poses.append(np.stack([v.pose.matrix for v in views]))
            clean.append(point_descriptors(s.cloud_clean, n_point_tokens, knn))
            degraded.append(point_descriptors(s.cloud_degraded, n_point_tokens, knn))
        self.images = torch.from_numpy(np.stack(imgs)).float()
        self.poses = torch.from_numpy(np.stack(poses)).float()
        self.points = {
            "clean": torch.from_numpy(np.stack(clean)).float(),
            "degraded": torch.from_numpy(np.stack(degraded)).float(),
        }
        self.items = [
            Item(k, q.question, q.answer, q.task, q.targets_degraded) for k, s in enumerate(samples) for q in s.qa
        ]
        self.instr = [encode_text(vocab, it.question, max_text_len) for it in self.items]
        self.answers = [encode_text(vocab, it.answer, max_text_len) for it in self.items]
        self.n_views = self.images.shape[1]

    def __len__(self):
        return len(self.items)

    @property
    def n_scenes(self):
        return self.images.shape[0]

    def batch(self, indices, point_source="degraded") -> Batch:
        if point_source not in POINT_SOURCES:
            raise InvalidConfig(f"point_source must be one of {POINT_SOURCES}")
        idx = [int(i) for i in indices]
        # each distinct scene is encoded once per batch
        order = {}
        scene_of = [order.setdefault(self.items[i].scene, len(order)) for i in idx]
        scenes = torch.tensor(list(order), dtype=torch.long)
        pad = self.vocab.pad
        return Batch(
            images=self.images[scenes],
            poses=self.poses[scenes],
            points=self.points[point_source][scenes],
            instr=pad_batch([self.instr[i] for i in idx], pad),
            answer=pad_batch([self.answers[i] for i in idx], pad),
            scene_of=torch.tensor(scene_of, dtype=torch.long),
        )

    def indices(self, tasks=None):
        return [i for i, it in enumerate(self.items) if tasks is None or it.task in tasks]
