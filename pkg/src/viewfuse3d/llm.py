"""Small encoder-decoder language model standing in for the frozen LLM backbone."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .encoders import Vocab, encode_text, pad_batch
from .errors import UndefinedLossError
from .nn.core import TransformerBlock, cross_entropy, sinusoidal_positions
from .nn.params import LrSchedule, OptimizerState, ParameterStore, adamw_step, lr_at_step

IGNORE = -100


@dataclass
class GenerationConfig:
    max_new_tokens: int = 12
    strategy: str = "greedy"
    eos_id: int = 2

    def __post_init__(self):
        if self.max_new_tokens < 1:
            raise ValueError("max_new_tokens must be >= 1")
        if self.strategy != "greedy":
            raise ValueError("only greedy decoding is supported")


class LmStub(nn.Module):
    """Encoder input is ``[prefix | instruction]``; the decoder is teacher-forced on the answer.

    The token embedding doubles as the output head.
    """

    def __init__(self, vocab_size, d=128, n_heads=4, enc_layers=2, dec_layers=2, ffn_mult=4,
                 max_len=64, pad_id=0, bos_id=1, eos_id=2):
        super().__init__()
        self.d = d
        self.pad_id, self.bos_id, self.eos_id = pad_id, bos_id, eos_id
        self.token = nn.Embedding(vocab_size, d)
        nn.init.normal_(self.token.weight, std=d**-0.5)
        self.encoder = nn.ModuleList(TransformerBlock(d, n_heads, ffn_mult=ffn_mult) for _ in range(enc_layers))
        self.decoder = nn.ModuleList(
            TransformerBlock(d, n_heads, cross=True, ffn_mult=ffn_mult) for _ in range(dec_layers)
        )
        self.ln_enc = nn.LayerNorm(d)
        self.ln_dec = nn.LayerNorm(d)
        self.register_buffer("positions", sinusoidal_positions(max_len, d), persistent=False)

    def embed(self, ids):
        pos = self.positions[: ids.shape[-1]].to(self.token.weight.dtype)
        return self.token(ids) * math.sqrt(self.d) + pos

    def encode(self, prefix, prefix_mask, instr_ids):
        text = self.embed(instr_ids)
        if prefix_mask is None:
            prefix_mask = torch.ones(prefix.shape[:-1], dtype=torch.bool)
        x = torch.cat([prefix, text], dim=-2)
        mask = torch.cat([prefix_mask, instr_ids != self.pad_id], dim=-1)
        for blk in self.encoder:
            x = blk(x, self_mask=mask)
        return self.ln_enc(x), mask

    def decode(self, memory, memory_mask, dec_in):
        y = self.embed(dec_in)
        for blk in self.decoder:
            y = blk(y, memory, context_mask=memory_mask, causal=True)
        return self.ln_dec(y) @ self.token.weight.t()

    def loss(self, prefix, prefix_mask, instr_ids, answer_ids):
        """Cross-entropy of ``answer_ids`` (bos ... eos, padded) given prefix and instruction."""
        targets = answer_ids[..., 1:].clone()
        targets[targets == self.pad_id] = IGNORE
        if not bool((targets != IGNORE).any()):
            raise UndefinedLossError("empty answers")
        memory, mask = self.encode(prefix, prefix_mask, instr_ids)
        logits = self.decode(memory, mask, answer_ids[..., :-1])
        return cross_entropy(logits, targets, IGNORE)

    @torch.no_grad()
    def generate(self, prefix, prefix_mask, instr_ids, gen: GenerationConfig):
        """Greedy decoding; returns a list of generated id lists (eos excluded)."""
        memory, mask = self.encode(prefix, prefix_mask, instr_ids)
        b = memory.shape[0]
        seq = torch.full((b, 1), self.bos_id, dtype=torch.long)
        done = torch.zeros(b, dtype=torch.bool)
        for _ in range(gen.max_new_tokens):
            nxt = self.decode(memory, mask, seq)[:, -1].argmax(-1)
            nxt = torch.where(done, torch.full_like(nxt, self.pad_id), nxt)
            seq = torch.cat([seq, nxt[:, None]], dim=1)
            done |= nxt == gen.eos_id
            if bool(done.all()):
                break
        out = []
        for row in seq[:, 1:].tolist():
            toks = []
            for t in row:
                if t in (gen.eos_id, self.pad_id):
                    break
                toks.append(t)
            out.append(toks)
        return out


def text_prefix(lm: LmStub, vocab: Vocab, texts, n_tokens=32):
    """Embed descriptions into a fixed-width prefix with one slot per comma-separated phrase.

    A slot is the mean word embedding of its phrase plus the slot position, so
    slot ``k`` plays the role of scene query ``k``. Unused slots carry only their
    position and stay visible, as query outputs are never masked.
    """
    phrases = [[p.split() for p in s.split(",") if p.strip()][:n_tokens] for s in texts]
    width = max([1] + [len(w) for ps in phrases for w in ps])
    ids = torch.full((len(texts), n_tokens, width), vocab.pad, dtype=torch.long)
    for b, ps in enumerate(phrases):
        for k, words in enumerate(ps):
            ids[b, k, : len(words)] = torch.tensor([vocab.token_to_id.get(t, vocab.unk) for t in words])
    used = (ids != vocab.pad).to(lm.token.weight.dtype)
    mean = (lm.token(ids) * used[..., None]).sum(-2) / used.sum(-1, keepdim=True).clamp(min=1.0)
    pos = lm.positions[:n_tokens].to(mean.dtype)
    return mean * math.sqrt(lm.d) + pos, torch.ones(len(texts), n_tokens, dtype=torch.bool)


def lm_loss(lm: LmStub, prefix, instr_ids, answer_ids):
    tokens = prefix.tokens if hasattr(prefix, "tokens") else prefix
    return lm.loss(tokens, None, instr_ids, answer_ids)


def generate(lm: LmStub, vocab: Vocab, prefix, instr_ids, gen: GenerationConfig):
    from .encoders import decode_text

    tokens = prefix.tokens if hasattr(prefix, "tokens") else prefix
    squeeze = tokens.dim() == 2
    if squeeze:
        tokens, instr_ids = tokens[None], instr_ids[None]
    out = [decode_text(vocab, ids) for ids in lm.generate(tokens, None, instr_ids, gen)]
    return out[0] if squeeze else out


def pretrain_stub(
    triples,
    vocab: Vocab,
    steps: int,
    seed: int,
    d: int = 128,
    n_heads: int = 4,
    batch_size: int = 64,
    peak_lr: float = 2e-3,
    max_len: int = 16,
    prefix_tokens: int = 32,
    ffn_mult: int = 4,
    layers: int = 2,
    log=None,
):
    """Train the stub on (description, question, answer) text triples, then freeze it.

    The description fills the prefix slot that scene embeddings occupy later.
    Returns ``(lm, losses)``.
    """
    triples = list(triples)
    if not triples:
        raise ValueError("no pretraining pairs")
    torch.manual_seed(seed)
    lm = LmStub(len(vocab), d, n_heads, layers, layers, ffn_mult=ffn_mult, pad_id=vocab.pad, bos_id=vocab.bos, eos_id=vocab.eos)
    store = ParameterStore.from_module(lm)
    state = OptimizerState(weight_decay=0.01)
    sched = LrSchedule(warmup_steps=max(1, steps // 10), total_steps=max(2, steps), peak=peak_lr, floor=peak_lr / 20)
    rng = np.random.default_rng(seed)
    descs = [t[0] for t in triples]
    instr = [encode_text(vocab, t[1], max_len) for t in triples]
    answers = [encode_text(vocab, t[2], max_len) for t in triples]
    losses = []
    for step in range(steps):
        idx = rng.choice(len(triples), size=min(batch_size, len(triples)), replace=False)
        prefix, pmask = text_prefix(lm, vocab, [descs[i] for i in idx], prefix_tokens)
        loss = lm.loss(
            prefix,
            pmask,
            pad_batch([instr[i] for i in idx], vocab.pad),
            pad_batch([answers[i] for i in idx], vocab.pad),
        )
        names = store.trainable_names()
        grads = torch.autograd.grad(loss, [store[n] for n in names])
        adamw_step(store, dict(zip(names, grads)), state, lr_at_step(sched, step + 1))
        losses.append(float(loss.detach()))
        if log and (step % 100 == 0 or step == steps - 1):
            log(f"stub step {step} loss {losses[-1]:.4f}")
    lm.requires_grad_(False)
    return lm, losses
