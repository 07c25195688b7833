"""Named parameters with freeze flags, AdamW, and the learning-rate schedule."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import torch

from ..errors import GradError, RangeError


class ParameterStore:
    """Named tensors with freeze flags.

    Entries share storage with the owning module, so optimizer updates are
    visible to the model. Frozen entries have ``requires_grad`` switched off.
    """

    def __init__(self, entries, frozen=()):
        self._entries = dict(entries)
        self._frozen = set()
        for name in frozen:
            self.set_frozen(name, True)

    @classmethod
    def from_module(cls, module: torch.nn.Module) -> "ParameterStore":
        return cls(module.named_parameters())

    def __getitem__(self, name):
        return self._entries[name]

    def __contains__(self, name):
        return name in self._entries

    def __len__(self):
        return len(self._entries)

    def names(self, prefix=None):
        names = sorted(self._entries)
        if prefix is None:
            return names
        prefixes = (prefix,) if isinstance(prefix, str) else tuple(prefix)
        return [n for n in names if any(n == p or n.startswith(p + ".") for p in prefixes)]

    def items(self):
        return [(n, self._entries[n]) for n in self.names()]

    def is_frozen(self, name):
        return name in self._frozen

    def set_frozen(self, name, frozen=True):
        if name not in self._entries:
            raise KeyError(name)
        (self._frozen.add if frozen else self._frozen.discard)(name)
        self._entries[name].requires_grad_(not frozen)

    def freeze(self, prefixes, frozen=True):
        for name in self.names(prefixes):
            self.set_frozen(name, frozen)

    def frozen_names(self):
        return sorted(self._frozen)

    def trainable_names(self):
        return [n for n in self.names() if n not in self._frozen]

    def fingerprint(self, prefix=None) -> str:
        """SHA-256 over names, dtypes, shapes and raw bytes of the selected tensors."""
        h = hashlib.sha256()
        for name in self.names(prefix):
            t = self._entries[name].detach().contiguous().cpu()
            h.update(name.encode())
            h.update(str(t.dtype).encode())
            h.update(str(tuple(t.shape)).encode())
            h.update(t.numpy().tobytes())
        return h.hexdigest()


@dataclass
class OptimizerState:
    step: int = 0
    exp_avg: dict = field(default_factory=dict)
    exp_avg_sq: dict = field(default_factory=dict)
    betas: tuple = (0.9, 0.999)
    weight_decay: float = 0.05
    eps: float = 1e-8


@torch.no_grad()
def adamw_step(store: ParameterStore, grads: dict, state: OptimizerState, lr: float):
    """One AdamW update with decoupled weight decay; frozen entries are skipped."""
    b1, b2 = state.betas
    names = store.trainable_names()
    for name in names:
        if grads.get(name) is None:
            raise GradError(f"no gradient for trainable parameter {name!r}")
    state.step += 1
    t = state.step
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name in names:
        p = store[name]
        g = grads[name]
        if g.shape != p.shape:
            raise GradError(f"gradient shape {tuple(g.shape)} != parameter shape {tuple(p.shape)} for {name!r}")
        m = state.exp_avg.get(name)
        if m is None:
            m = state.exp_avg[name] = torch.zeros_like(p)
            state.exp_avg_sq[name] = torch.zeros_like(p)
        v = state.exp_avg_sq[name]
        p.mul_(1.0 - lr * state.weight_decay)
        m.mul_(b1).add_(g, alpha=1.0 - b1)
        v.mul_(b2).addcmul_(g, g, value=1.0 - b2)
        denom = (v / c2).sqrt_().add_(state.eps)
        p.addcdiv_(m, denom, value=-lr / c1)
    return store, state


@dataclass
class LrSchedule:
    warmup_steps: int
    total_steps: int
    warmup_start: float = 1e-8
    peak: float = 1e-4
    floor: float = 1e-5
    finetune_floor: float = 1e-6

    def __post_init__(self):
        if not self.warmup_start < self.peak:
            raise ValueError("warmup_start must be below peak")
        if not (self.floor < self.peak and self.finetune_floor < self.peak):
            raise ValueError("floors must be below peak")
        if not 1 <= self.warmup_steps < self.total_steps:
            raise ValueError("need 1 <= warmup_steps < total_steps")


def lr_at_step(sched: LrSchedule, step: int, finetune: bool = False) -> float:
    """Linear warmup to the peak, then cosine decay to the (fine-tune) floor."""
    if not 0 <= step <= sched.total_steps:
        raise RangeError(f"step {step} outside [0, {sched.total_steps}]")
    if step <= sched.warmup_steps:
        t = step / sched.warmup_steps
        return sched.warmup_start * (1.0 - t) + sched.peak * t
    floor = sched.finetune_floor if finetune else sched.floor
    progress = (step - sched.warmup_steps) / (sched.total_steps - sched.warmup_steps)
    return floor + (sched.peak - floor) * 0.5 * (1.0 + math.cos(math.pi * progress))
