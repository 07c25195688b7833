"""End-to-end runs: dataset split, stage 0, stages 1-3, evaluation and ablations."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .config import RunConfig
from .data import PreparedData, corpus_vocab
from .errors import InvalidConfig
from .metrics import MetricReport
from .nn.params import LrSchedule
from .qformer3d import init_from_2d
from .scene.dataset import read_dataset
from .training import (
    StageConfig,
    TrainState,
    check_metrics,
    clone_state,
    evaluate,
    init_state,
    run_stage,
    with_fusion_options,
)

AXES = ("mode", "n_views", "aggregator", "pose", "init", "stages", "features")
AXIS_SETTINGS = {
    "mode": ("views_only", "points_only", "full"),
    "n_views": (8, 16, 32),
    "aggregator": ("mean", "max", "attention"),
    "pose": (False, True),
    "init": ("random", "transfer"),
    "stages": ((3,), (1, 3), (2, 3), (1, 2, 3)),
    "features": ("clean", "degraded"),
}


def split_samples(samples, eval_scenes: int):
    if not 1 <= eval_scenes < len(samples):
        raise InvalidConfig(f"need more than {eval_scenes} scenes to hold out {eval_scenes} for evaluation")
    return samples[:-eval_scenes], samples[-eval_scenes:]


def load_split(cfg: RunConfig):
    samples = read_dataset(cfg.data)
    return split_samples(samples, min(cfg.eval_scenes, len(samples) - 1))


def prepare(samples, vocab, cfg: RunConfig, n_views=None) -> PreparedData:
    return PreparedData(samples, vocab, cfg.max_text_len, cfg.n_point_tokens, cfg.knn, n_views=n_views)


def stage0(cfg: RunConfig, train_samples, init=None, log=None) -> TrainState:
    vocab = corpus_vocab(train_samples)
    state, _ = init_state(
        cfg.model_config(len(vocab)), vocab, cfg.seed, cfg.stub_steps, cfg.stub_scenes, cfg.stub_batch,
        cfg.stub_lr, init=init or cfg.init, log=log, config_hash=cfg.hash(),
    )
    return state


def stage_config(cfg: RunConfig, stage: int, seed_offset=0) -> StageConfig:
    steps = {1: cfg.steps1, 2: cfg.steps2, 3: cfg.steps3}[stage]
    warm = min(max(1, round(cfg.warmup_frac * steps)), steps - 2)
    sched = LrSchedule(warmup_steps=warm, total_steps=steps - 1, peak=cfg.peak_lr)
    freeze = {1: {"encoders", "fusion", "llm"}, 2: {"llm"}, 3: {"llm"}}[stage]
    if cfg.freeze_encoders:
        freeze = freeze | {"encoders"}
    return StageConfig(
        stage=stage, steps=steps, batch_size=cfg.batch_size, schedule=sched, freeze=frozenset(freeze),
        tasks=frozenset(cfg.task_set), seed=cfg.seed * 1000 + stage + seed_offset,
        point_source=cfg.point_source, modality_dropout=cfg.modality_dropout, weight_decay=cfg.weight_decay,
    )


def train_stages(state: TrainState, cfg: RunConfig, stages, data: PreparedData, allow_skip=False, log=None):
    records = []
    for k in stages:
        state, rec = run_stage(stage_config(cfg, k), data, state, allow_skip=allow_skip, log=log)
        records.append(rec)
    return state, records


def eval_modes(state, data, cfg: RunConfig, modes=("full",)):
    out = {}
    for m in modes:
        out[m] = evaluate(state.model, data, m, batch_size=cfg.eval_batch, point_source=cfg.point_source)
        check_metrics(out[m])
    return out


# ---------------------------------------------------------------- ablations


@dataclass
class AblationResult:
    axis: str
    header: list
    rows: list = field(default_factory=list)  # (label cells, metrics dict)
    all_bleu: bool = False
    notes: list = field(default_factory=list)
    records: list = field(default_factory=list)

    def table(self) -> str:
        lines = [_header(self.header, self.all_bleu)]
        for cells, m in self.rows:
            rep = MetricReport(**{k: m[k] for k in ("em", "bleu1", "bleu2", "bleu3", "bleu4", "rouge_l", "cider")})
            lines.append(rep.markdown_row(" | ".join(cells), self.all_bleu))
        out = "\n".join(lines) + "\n"
        if self.notes:
            out += "\n" + "\n".join(self.notes) + "\n"
        return out

    def to_json(self):
        return json.dumps(
            {"axis": self.axis, "rows": [{"setting": cells, "metrics": m} for cells, m in self.rows],
             "notes": self.notes},
            indent=1, sort_keys=True,
        )


def _header(label_cols, all_bleu):
    metric_cols = ["EM"] + ([f"BLEU-{k}" for k in range(1, 5)] if all_bleu else ["BLEU-1", "BLEU-4"])
    cols = list(label_cols) + metric_cols + ["ROUGE-L", "CIDEr"]
    return "| " + " | ".join(cols) + " |\n|" + "---|" * len(cols)


def _pipeline(base: TrainState, cfg: RunConfig, stages, train, evald, modes=("full",), allow_skip=False,
              log=None, result=None):
    state = clone_state(base)
    state, recs = train_stages(state, cfg, stages, train, allow_skip=allow_skip, log=log)
    if result is not None:
        result.records += recs
    return eval_modes(state, evald, cfg, modes)


def run_ablation(axis: str, cfg: RunConfig, train_samples, eval_samples, base: TrainState | None = None,
                 seeds=None, log=None) -> AblationResult:
    """Train and evaluate every setting of ``axis`` from one shared stage-0 state."""
    if axis not in AXES:
        raise InvalidConfig(f"axis must be one of {AXES}")
    if base is None:
        base = stage0(cfg, train_samples, init="random", log=log)
    vocab = base.vocab
    train = prepare(train_samples, vocab, cfg)
    evald = prepare(eval_samples, vocab, cfg)

    def from_base(init=cfg.init, **fusion):
        st = with_fusion_options(base, **fusion) if fusion else clone_state(base)
        if init == "transfer":
            init_from_2d(st.model.qformer3d, st.model.fusion.qformer)
        return st

    full = (1, 2, 3)
    if axis == "mode":
        res = AblationResult(axis, ["Modality"], all_bleu=True)
        ms = _pipeline(from_base(), cfg, full, train, evald, AXIS_SETTINGS["mode"], log=log, result=res)
        labels = {"views_only": "2D", "points_only": "3D", "full": "2D + 3D"}
        for m in AXIS_SETTINGS["mode"]:
            res.rows.append(([labels[m]], ms[m]))
        deg = {labels[m]: ms[m]["em_degraded"] for m in ms}
        res.notes.append(f"EM on degraded-target questions: {json.dumps(deg, sort_keys=True)}")
        return res
    if axis == "n_views":
        res = AblationResult(axis, ["Views per scene"])
        for n in AXIS_SETTINGS["n_views"]:
            tr = prepare(train_samples, vocab, cfg, n_views=n)
            ev = prepare(eval_samples, vocab, cfg, n_views=n)
            res.rows.append(([str(n)], _pipeline(from_base(), cfg, full, tr, ev, log=log, result=res)["full"]))
        return res
    if axis == "aggregator":
        res = AblationResult(axis, ["Method"])
        names = {"mean": "Average", "max": "Max", "attention": "Attention"}
        for a in AXIS_SETTINGS["aggregator"]:
            st = from_base(aggregator=a)
            res.rows.append(([names[a]], _pipeline(st, cfg.replace(aggregator=a), full, train, evald, log=log,
                                                   result=res)["full"]))
        return res
    if axis == "pose":
        res = AblationResult(axis, ["Method"])
        seeds = list(seeds) if seeds else [cfg.seed]
        spatial = {False: [], True: []}
        for k, s in enumerate(seeds):
            c = cfg.replace(seed=s)
            for pose in AXIS_SETTINGS["pose"]:
                m = _pipeline(from_base(use_pose=pose), c.replace(use_pose=pose), full, train, evald, log=log,
                              result=res)["full"]
                spatial[pose].append(m["em_by_task"]["spatial"])
                if k == 0:
                    res.rows.append((["w/ camera poses" if pose else "w/o camera poses"], m))
        wins = sum(on is not None and off is not None and on >= off for on, off in zip(spatial[True], spatial[False]))
        res.notes.append(f"Spatial EM per seed {seeds}: w/o poses {spatial[False]}, w/ poses {spatial[True]}")
        res.notes.append(f"Seeds where poses help or tie on spatial questions: {wins} of {len(seeds)}")
        return res
    if axis == "init":
        res = AblationResult(axis, ["Initialization"])
        for init in AXIS_SETTINGS["init"]:
            label = "Random" if init == "random" else "Transfer (2D Q-Former)"
            res.rows.append(([label], _pipeline(from_base(init=init), cfg, full, train, evald, log=log,
                                                result=res)["full"]))
        return res
    if axis == "stages":
        res = AblationResult(axis, ["Stage1", "Stage2", "Stage3"])
        for stages in AXIS_SETTINGS["stages"]:
            cells = ["✓" if k in stages else "✗" for k in (1, 2, 3)]
            res.rows.append((cells, _pipeline(from_base(), cfg, stages, train, evald, allow_skip=True, log=log,
                                              result=res)["full"]))
        return res
    # features: clean vs degraded point cloud as the 3D feature source
    res = AblationResult(axis, ["Feature"])
    for src in AXIS_SETTINGS["features"]:
        c = cfg.replace(point_source=src)
        res.rows.append(([src], _pipeline(from_base(), c, full, train, evald, log=log, result=res)["full"]))
    return res
