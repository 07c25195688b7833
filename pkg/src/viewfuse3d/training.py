"""Three-stage training, checkpoints, evaluation and the ablation runner."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .data import POINT_SOURCES, PreparedData
from .encoders import Vocab, decode_text
from .errors import (
    ChecksumError,
    FreezeViolationError,
    InvalidConfig,
    NumericError,
    PlacementError,
    StageOrderError,
)
from .llm import GenerationConfig, pretrain_stub
from .metrics import FIELDS, report
from .model import GROUPS, ModelConfig, SceneQAModel
from .nn.params import LrSchedule, OptimizerState, ParameterStore, adamw_step, lr_at_step
from .qformer3d import MODES, init_from_2d
from .scene.dataset import DEFAULT_PER_TASK
from .scene.generate import SceneConfig, generate_scene
from .scene.qa import describe_scene, generate_qa
from .scene.types import TASKS

CHECKPOINT_FORMAT = 1
STAGE_FREEZE = {1: ("encoders", "fusion", "llm"), 2: ("llm",), 3: ("llm",)}


def _hash_obj(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


@dataclass
class StageConfig:
    stage: int
    steps: int
    batch_size: int = 64
    schedule: LrSchedule | None = None
    freeze: frozenset | None = None
    tasks: frozenset = frozenset(TASKS)
    seed: int = 0
    point_source: str = "degraded"
    modality_dropout: float = 0.0
    weight_decay: float = 0.05
    warmup_frac: float = 0.1
    eval_every: int = 0

    def __post_init__(self):
        if self.stage not in STAGE_FREEZE:
            raise InvalidConfig(f"stage must be 1, 2 or 3 (got {self.stage})")
        if self.steps < 3:
            raise InvalidConfig("a stage needs at least 3 steps (warmup, decay, final)")
        if self.batch_size < 1:
            raise InvalidConfig("batch_size must be >= 1")
        if self.freeze is None:
            self.freeze = frozenset(STAGE_FREEZE[self.stage])
        self.freeze = frozenset(self.freeze)
        unknown = self.freeze - set(GROUPS)
        if unknown:
            raise InvalidConfig(f"unknown module groups {sorted(unknown)}")
        if "llm" not in self.freeze:
            raise InvalidConfig("the language model stays frozen in every stage")
        if self.stage == 1 and "fusion" not in self.freeze:
            raise InvalidConfig("stage 1 keeps the fusion module frozen")
        self.tasks = frozenset(self.tasks)
        if not self.tasks or not self.tasks <= set(TASKS):
            raise InvalidConfig(f"tasks must be a non-empty subset of {TASKS}")
        if self.point_source not in POINT_SOURCES:
            raise InvalidConfig(f"point_source must be one of {POINT_SOURCES}")
        if not 0.0 <= self.modality_dropout <= 1.0:
            raise InvalidConfig("modality_dropout must be in [0, 1]")
        if self.schedule is None:
            warm = min(max(1, round(self.warmup_frac * self.steps)), self.steps - 2)
            self.schedule = LrSchedule(warmup_steps=warm, total_steps=self.steps - 1)
        elif self.schedule.total_steps != self.steps - 1:
            raise InvalidConfig("schedule.total_steps must equal steps - 1 (the last update's index)")

    @property
    def finetune(self):
        return self.stage == 3

    def to_dict(self):
        s = self.schedule
        return {
            "stage": self.stage,
            "steps": self.steps,
            "batch_size": self.batch_size,
            "schedule": [s.warmup_steps, s.total_steps, s.warmup_start, s.peak, s.floor, s.finetune_floor],
            "freeze": sorted(self.freeze),
            "tasks": sorted(self.tasks),
            "seed": self.seed,
            "point_source": self.point_source,
            "modality_dropout": self.modality_dropout,
            "weight_decay": self.weight_decay,
        }

    def hash(self):
        return _hash_obj(self.to_dict())


@dataclass
class RunRecord:
    stage: int
    config_hash: str
    losses: list = field(default_factory=list)
    lrs: list = field(default_factory=list)
    evals: list = field(default_factory=list)
    fingerprints_start: dict = field(default_factory=dict)
    fingerprints_end: dict = field(default_factory=dict)
    frozen_groups: list = field(default_factory=list)

    def lines(self):
        yield {"event": "start", "stage": self.stage, "config_hash": self.config_hash,
               "frozen": self.frozen_groups, "fingerprints": self.fingerprints_start}
        for i, (loss, lr) in enumerate(zip(self.losses, self.lrs)):
            yield {"event": "step", "stage": self.stage, "step": i, "loss": loss, "lr": lr}
        for ev in self.evals:
            yield {"event": "eval", "stage": self.stage, **ev}
        yield {"event": "end", "stage": self.stage, "fingerprints": self.fingerprints_end}

    def write_jsonl(self, path, append=True):
        with open(path, "a" if append else "w") as f:
            for line in self.lines():
                f.write(json.dumps(line) + "\n")


@dataclass
class TrainState:
    """Everything a checkpoint holds."""

    model: SceneQAModel
    vocab: Vocab
    stage: int = 0
    history: list = field(default_factory=list)
    optimizer: OptimizerState | None = None
    frozen: list = field(default_factory=list)
    config_hash: str = ""

    def store(self):
        return ParameterStore.from_module(self.model)

    def fingerprints(self):
        store = self.store()
        return {g: store.fingerprint(GROUPS[g]) for g in GROUPS}


def require_stage(state: TrainState, stage: int, allow_skip=False):
    """Stage k needs the stage k-1 checkpoint (or, with ``allow_skip``, any earlier stage)."""
    ok = state.stage < stage if allow_skip else state.stage == stage - 1
    if not ok:
        need = f"a checkpoint from before stage {stage}" if allow_skip else f"a stage-{stage - 1} checkpoint"
        raise StageOrderError(f"stage {stage} needs {need}; got stage {state.stage}")


def freeze_prefixes(model: SceneQAModel, groups) -> list[str]:
    out = [p for g in sorted(groups) for p in GROUPS[g]]
    out += [f"fusion.{p}" for p in model.fusion.unused_prefixes()]
    return out


class GroupedSampler:
    """Shuffle scenes, shuffle questions within each scene, then cut into batches.

    Keeping a scene's questions together lets one image/point encoding serve
    several questions in a batch.
    """

    def __init__(self, data: PreparedData, indices, batch_size, rng):
        if not indices:
            raise InvalidConfig("no training questions for the selected tasks")
        self.by_scene = {}
        for i in indices:
            self.by_scene.setdefault(data.items[i].scene, []).append(i)
        self.scenes = sorted(self.by_scene)
        self.batch_size = batch_size
        self.rng = rng
        self.queue: list[int] = []

    def _refill(self):
        for s in self.rng.permutation(len(self.scenes)):
            qs = self.by_scene[self.scenes[s]]
            self.queue += [qs[j] for j in self.rng.permutation(len(qs))]

    def next(self):
        while len(self.queue) < self.batch_size:
            self._refill()
        out, self.queue = self.queue[: self.batch_size], self.queue[self.batch_size :]
        return out


class _UpstreamCache:
    """Memoised view/point features for stages whose encoders and fusion are frozen."""

    def __init__(self):
        self.vas = {}
        self.pts = {}

    def get(self, model, data, idx, batch, point_source):
        missing = [k for k, i in enumerate(idx) if i not in self.vas]
        if missing:
            with torch.no_grad():
                sub = data.batch([idx[k] for k in missing], point_source)
                vas, pts = model.upstream(sub, "full")
            for j, k in enumerate(missing):
                self.vas[idx[k]] = vas[j]
                self.pts[idx[k]] = pts[j]
        return torch.stack([self.vas[i] for i in idx]), torch.stack([self.pts[i] for i in idx])


def _dropout_masks(rng, n, p):
    drop = rng.random(n) < p
    which = rng.random(n) < 0.5
    has_vas = torch.from_numpy(~(drop & which))
    has_pts = torch.from_numpy(~(drop & ~which))
    return has_vas, has_pts


def run_stage(
    config: StageConfig,
    data: PreparedData,
    state: TrainState,
    *,
    allow_skip=False,
    eval_data: PreparedData | None = None,
    log=None,
    step_hook=None,
):
    """Train one stage in place; returns ``(state, record)``.

    ``step_hook(step, model)`` runs after every update (test hook).
    """
    require_stage(state, config.stage, allow_skip)
    model = state.model
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    store = state.store()
    for name in store.names():
        store.set_frozen(name, False)
    frozen_prefixes = freeze_prefixes(model, config.freeze)
    store.freeze(frozen_prefixes)
    frozen_names = store.frozen_names()
    record = RunRecord(config.stage, config.hash(), frozen_groups=sorted(config.freeze))
    record.fingerprints_start = state.fingerprints()
    frozen_fp = store.fingerprint(frozen_names)

    upstream_frozen = {"encoders", "fusion"} <= config.freeze
    cache = _UpstreamCache() if upstream_frozen else None
    sampler = GroupedSampler(data, data.indices(config.tasks), config.batch_size, rng)
    opt = OptimizerState(weight_decay=config.weight_decay)
    names = store.trainable_names()
    params = [store[n] for n in names]
    model.train()
    for step in range(config.steps):
        idx = sampler.next()
        batch = data.batch(idx, config.point_source)
        if config.modality_dropout > 0:
            batch.has_vas, batch.has_points = _dropout_masks(rng, len(idx), config.modality_dropout)
        if cache is not None:
            vas, pts = cache.get(model, data, idx, batch, config.point_source)
        else:
            vas, pts = model.upstream(batch, "full")
        loss = model.loss_from_features(batch, vas, pts)
        value = float(loss.detach())
        if not math.isfinite(value):
            raise NumericError(f"non-finite loss {value} at stage {config.stage} step {step}")
        grads = torch.autograd.grad(loss, params, allow_unused=True)
        lr = lr_at_step(config.schedule, step, finetune=config.finetune)
        adamw_step(store, dict(zip(names, grads)), opt, lr)
        record.losses.append(value)
        record.lrs.append(lr)
        if step_hook is not None:
            step_hook(step, model)
        if log and (step % 50 == 0 or step == config.steps - 1):
            log(f"stage {config.stage} step {step} loss {value:.4f} lr {lr:.3g}")
        if eval_data is not None and config.eval_every and (step + 1) % config.eval_every == 0:
            record.evals.append({"step": step, **evaluate(model, eval_data, "full")})
            model.train()
    model.eval()
    if store.fingerprint(frozen_names) != frozen_fp:
        raise FreezeViolationError(f"frozen parameters changed during stage {config.stage}")
    record.fingerprints_end = state.fingerprints()
    for g in config.freeze:
        if record.fingerprints_start[g] != record.fingerprints_end[g]:
            raise FreezeViolationError(f"frozen group {g!r} changed during stage {config.stage}")
    state.stage = config.stage
    state.history = list(state.history) + [config.stage]
    state.optimizer = opt
    state.frozen = frozen_names
    return state, record


@torch.no_grad()
def predict(model: SceneQAModel, data: PreparedData, indices, mode="full", batch_size=64,
            point_source="degraded") -> list[str]:
    if mode not in MODES:
        raise InvalidConfig(f"mode must be one of {MODES}")
    model.eval()
    gen = GenerationConfig(max_new_tokens=data.max_text_len, eos_id=data.vocab.eos)
    out = []
    for k in range(0, len(indices), batch_size):
        chunk = indices[k : k + batch_size]
        ids = model.generate_ids(data.batch(chunk, point_source), mode, gen)
        out += [decode_text(data.vocab, x) for x in ids]
    return out


def evaluate(model, data: PreparedData, mode="full", indices=None, batch_size=64, predictor=None,
             point_source="degraded") -> dict:
    """Greedy-decode every question and score it.

    ``predictor(items) -> answers`` replaces the model (used for oracle checks).
    Returns the corpus metrics plus EM on degraded-target questions and per task.
    """
    indices = list(range(len(data))) if indices is None else list(indices)
    if not indices:
        raise InvalidConfig("evaluation split is empty")
    items = [data.items[i] for i in indices]
    if predictor is not None:
        answers = list(predictor(items))
    else:
        answers = predict(model, data, indices, mode, batch_size, point_source)
    pairs = [(a, (it.answer,)) for a, it in zip(answers, items)]
    out = report(pairs).to_dict()

    def em_of(sel):
        if not sel:
            return None
        return 100.0 * sum(answers[k] == items[k].answer for k in sel) / len(sel)

    deg = [k for k, it in enumerate(items) if it.degraded]
    out["em_degraded"] = em_of(deg)
    out["n"] = len(items)
    out["n_degraded"] = len(deg)
    out["em_by_task"] = {t: em_of([k for k, it in enumerate(items) if it.task == t]) for t in TASKS}
    return out


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(state: TrainState, path):
    """Directory with ``manifest.json`` and one little-endian blob of all tensors."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    tensors = [(f"param.{n}", p.detach()) for n, p in state.model.named_parameters()]
    opt = state.optimizer
    if opt is not None:
        tensors += [(f"exp_avg.{n}", t) for n, t in sorted(opt.exp_avg.items())]
        tensors += [(f"exp_avg_sq.{n}", t) for n, t in sorted(opt.exp_avg_sq.items())]
    entries = []
    offset = 0
    with open(root / "tensors.bin", "wb") as f:
        for name, t in tensors:
            arr = t.contiguous().cpu().numpy()
            raw = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
            f.write(raw)
            entries.append({
                "name": name, "dtype": str(arr.dtype), "shape": list(arr.shape),
                "offset": offset, "nbytes": len(raw), "sha256": hashlib.sha256(raw).hexdigest(),
            })
            offset += len(raw)
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "stage": state.stage,
        "history": list(state.history),
        "config_hash": state.config_hash,
        "model_config": state.model.cfg.to_dict(),
        "vocab": state.vocab.token_to_id,
        "frozen": list(state.frozen),
        "optimizer": None if opt is None else {
            "step": opt.step, "betas": list(opt.betas), "weight_decay": opt.weight_decay, "eps": opt.eps,
        },
        "tensors": entries,
        "fingerprints": state.fingerprints(),
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return manifest


def load_checkpoint(path) -> TrainState:
    root = Path(path)
    try:
        manifest = json.loads((root / "manifest.json").read_text())
        blob = (root / "tensors.bin").read_bytes()
    except OSError as e:
        raise StageOrderError(f"no checkpoint at {root}") from e
    model = SceneQAModel(ModelConfig(**manifest["model_config"]))
    params = dict(model.named_parameters())
    opt = None
    if manifest["optimizer"] is not None:
        o = manifest["optimizer"]
        opt = OptimizerState(o["step"], {}, {}, tuple(o["betas"]), o["weight_decay"], o["eps"])
    seen = set()
    for e in manifest["tensors"]:
        raw = blob[e["offset"] : e["offset"] + e["nbytes"]]
        if len(raw) != e["nbytes"] or hashlib.sha256(raw).hexdigest() != e["sha256"]:
            raise ChecksumError(f"{root / 'tensors.bin'}: checksum mismatch for {e['name']}")
        arr = np.frombuffer(raw, dtype=np.dtype(e["dtype"]).newbyteorder("<")).reshape(e["shape"])
        t = torch.from_numpy(arr.astype(np.dtype(e["dtype"]), copy=True))
        kind, name = e["name"].split(".", 1)
        if kind == "param":
            if name not in params or params[name].shape != t.shape:
                raise ChecksumError(f"checkpoint tensor {name!r} does not fit the model")
            with torch.no_grad():
                params[name].copy_(t)
            seen.add(name)
        elif opt is not None:
            (opt.exp_avg if kind == "exp_avg" else opt.exp_avg_sq)[name] = t
    if seen != set(params):
        raise ChecksumError(f"{root}: checkpoint lacks {sorted(set(params) - seen)[:3]}")
    store = ParameterStore.from_module(model)
    store.freeze(manifest["frozen"])
    model.eval()
    state = TrainState(model, Vocab(manifest["vocab"]), manifest["stage"], manifest["history"], opt,
                       manifest["frozen"], manifest["config_hash"])
    if state.fingerprints() != manifest["fingerprints"]:
        raise ChecksumError(f"{root}: fingerprints differ after load")
    return state


# ---------------------------------------------------------------- stage 0


def stub_triples(n_scenes: int, seed: int, per_task=None):
    """(description, question, answer) triples from fresh scene graphs."""
    per_task = dict(DEFAULT_PER_TASK if per_task is None else per_task)
    out = []
    cfg = SceneConfig()
    for k in range(n_scenes):
        for attempt in range(10):
            s_scene, s_qa = np.random.SeedSequence([seed, 0x57B, k, attempt]).generate_state(2)
            try:
                scene = generate_scene(int(s_scene), cfg)
            except PlacementError:
                continue
            desc = describe_scene(scene)
            out += [(desc, q.question, q.answer) for q in generate_qa(scene, per_task, int(s_qa))]
            break
    return out


def init_state(model_cfg: ModelConfig, vocab: Vocab, seed: int, stub_steps: int, stub_scenes: int,
               stub_batch=64, stub_lr=2e-3, init="transfer", log=None, config_hash=""):
    """Stage 0: pretrain and freeze the language-model stub, then build the full model around it."""
    if init not in ("random", "transfer"):
        raise InvalidConfig("init must be 'random' or 'transfer'")
    if len(vocab) != model_cfg.vocab_size:
        raise InvalidConfig("vocabulary size does not match the model config")
    triples = stub_triples(stub_scenes, seed)
    lm, losses = pretrain_stub(
        triples, vocab, stub_steps, seed, d=model_cfg.d_llm, n_heads=model_cfg.llm_heads,
        batch_size=stub_batch, peak_lr=stub_lr, max_len=model_cfg.max_text_len,
        ffn_mult=model_cfg.llm_ffn_mult, layers=model_cfg.llm_layers, log=log,
    )
    torch.manual_seed(seed)
    model = SceneQAModel(model_cfg, llm=lm)
    if init == "transfer":
        init_from_2d(model.qformer3d, model.fusion.qformer)
    model.eval()
    store = ParameterStore.from_module(model)
    store.freeze(GROUPS["llm"])
    return TrainState(model, vocab, 0, [0], None, store.frozen_names(), config_hash), losses


def clone_state(state: TrainState) -> TrainState:
    model = SceneQAModel(ModelConfig(**state.model.cfg.to_dict()))
    model.load_state_dict(state.model.state_dict())
    model.eval()
    store = ParameterStore.from_module(model)
    store.freeze(state.frozen)
    opt = None
    if state.optimizer is not None:
        o = state.optimizer
        opt = OptimizerState(o.step, {k: v.clone() for k, v in o.exp_avg.items()},
                             {k: v.clone() for k, v in o.exp_avg_sq.items()}, o.betas, o.weight_decay, o.eps)
    return TrainState(model, state.vocab, state.stage, list(state.history), opt, list(state.frozen),
                      state.config_hash)


def with_fusion_options(state: TrainState, aggregator=None, use_pose=None) -> TrainState:
    """Copy of ``state`` whose fusion module uses a different aggregator or pose setting."""
    new = clone_state(state)
    if aggregator is not None:
        new.model.cfg.aggregator = aggregator
        new.model.fusion.aggregator_mode = aggregator
    if use_pose is not None:
        new.model.cfg.use_pose = use_pose
        new.model.fusion.use_pose = use_pose
    return new


def check_metrics(metrics: dict):
    for k in FIELDS:
        if not math.isfinite(metrics[k]):
            raise NumericError(f"metric {k} is not finite")
