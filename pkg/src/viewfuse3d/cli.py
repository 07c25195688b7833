"""Command-line entry point: ``viewfuse3d <subcommand> [flags]``.

Exit codes: 0 success, 1 validation error (bad flags/config, missing stage), 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import fields
from pathlib import Path

from .config import RUN_ROOT_ENV, RunConfig, load_config
from .errors import DatasetFormatError, InvalidConfig, StageOrderError, ViewFuseError
from .qformer3d import MODES

VALIDATION_ERRORS = (InvalidConfig, StageOrderError, DatasetFormatError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _config_flags(parser):
    g = parser.add_argument_group("run configuration (overrides the config file)")
    for f in fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        if flag in ("--seed", "--data", "--workers", "--mode"):
            continue
        g.add_argument(flag, dest=f.name, default=None, metavar=f.name.upper())


def build_parser():
    p = _Parser(prog="viewfuse3d", description="Multi-view + point-cloud scene QA at desk scale.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", default=None, help="key = value config file")
        sp.add_argument("--seed", default=None, help="seed for all randomness")
        sp.add_argument("--out", default=None, help="output root")
        sp.add_argument("--data", default=None, help="dataset directory")
        _config_flags(sp)
        return sp

    g = add("gen-data", "generate a synthetic scene dataset")
    g.add_argument("--workers", default=None)
    add("pretrain-llm", "stage 0: pretrain and freeze the language-model stub")
    t = add("train", "run one training stage")
    t.add_argument("--stage", type=int, choices=(1, 2, 3), required=True)
    t.add_argument("--allow-skip", action="store_true", help="accept any earlier-stage checkpoint")
    e = add("eval", "evaluate the latest checkpoint")
    e.add_argument("--mode", choices=MODES, default=None)
    e.add_argument("--stage", type=int, choices=(0, 1, 2, 3), default=None)
    a = add("ablate", "run one ablation axis")
    from .pipeline import AXES

    a.add_argument("--axis", choices=AXES, required=True)
    a.add_argument("--seeds", type=int, default=1, help="number of seeds (pose axis)")
    add("report", "collect evaluations and ablation tables into report.md")
    return p


def _config(args) -> RunConfig:
    overrides = {f.name: getattr(args, f.name, None) for f in fields(RunConfig)}
    return load_config(args.config, overrides)


def _run_dir(args, cfg: RunConfig) -> Path:
    root = args.out or os.environ.get(RUN_ROOT_ENV) or "runs"
    return Path(root) / cfg.run_id


def _ckpt(run: Path, stage: int) -> Path:
    return run / "ckpt" / f"stage{stage}"


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _update_record(run: Path, records):
    """Replace this run's lines for the given stages in ``record.jsonl``."""
    path = run / "record.jsonl"
    stages = {r.stage for r in records}
    keep = []
    if path.exists():
        keep = [ln for ln in path.read_text().splitlines() if ln and json.loads(ln).get("stage") not in stages]
    new = [json.dumps(line) for r in records for line in r.lines()]
    lines = sorted(keep + new, key=lambda ln: json.loads(ln).get("stage", 0))
    path.write_text("\n".join(lines) + "\n")


def cmd_gen_data(args, cfg, log):
    from .scene.dataset import build_dataset, write_dataset

    out = Path(args.out or cfg.data)
    samples, attempts = build_dataset(cfg.scenes, cfg.seed, cfg.dataset_config(), workers=cfg.workers)
    manifest = write_dataset(samples, out, cfg.dataset_config(), cfg.seed, attempts)
    (out / "config.txt").write_text(cfg.dumps())
    log(f"wrote {manifest['count']} scenes, {manifest['qa_count']} questions to {out}")


def cmd_pretrain_llm(args, cfg, log):
    from .pipeline import load_split, stage0
    from .training import save_checkpoint

    run = _run_dir(args, cfg)
    train, _ = load_split(cfg)
    state = stage0(cfg, train, log=log)
    run.mkdir(parents=True, exist_ok=True)
    save_checkpoint(state, _ckpt(run, 0))
    (run / "config.txt").write_text(cfg.dumps())
    log(f"stage-0 checkpoint at {_ckpt(run, 0)}")


def _latest_checkpoint(run: Path, below=4):
    for k in range(below - 1, -1, -1):
        if (_ckpt(run, k) / "manifest.json").exists():
            return k
    return None


def cmd_train(args, cfg, log):
    from .pipeline import load_split, prepare, stage_config
    from .training import load_checkpoint, run_stage, save_checkpoint

    run = _run_dir(args, cfg)
    k = args.stage
    src = k - 1 if not args.allow_skip else _latest_checkpoint(run, k)
    if src is None or not (_ckpt(run, src) / "manifest.json").exists():
        raise StageOrderError(f"stage {k} needs a stage-{k - 1} checkpoint under {run / 'ckpt'}")
    state = load_checkpoint(_ckpt(run, src))
    train, _ = load_split(cfg)
    data = prepare(train, state.vocab, cfg)
    state, record = run_stage(stage_config(cfg, k), data, state, allow_skip=args.allow_skip, log=log)
    state.config_hash = cfg.hash()
    save_checkpoint(state, _ckpt(run, k))
    _update_record(run, [record])
    (run / "config.txt").write_text(cfg.dumps())
    log(f"stage-{k} checkpoint at {_ckpt(run, k)}; final loss {record.losses[-1]:.4f}")


def cmd_eval(args, cfg, log):
    from .pipeline import eval_modes, load_split, prepare
    from .training import load_checkpoint

    run = _run_dir(args, cfg)
    k = args.stage if args.stage is not None else _latest_checkpoint(run)
    if k is None or not (_ckpt(run, k) / "manifest.json").exists():
        raise StageOrderError(f"no checkpoint to evaluate under {run / 'ckpt'}")
    state = load_checkpoint(_ckpt(run, k))
    _, evs = load_split(cfg)
    metrics = eval_modes(state, prepare(evs, state.vocab, cfg), cfg, (cfg.mode,))[cfg.mode]
    metrics.update(mode=cfg.mode, stage=k, config_hash=cfg.hash())
    _write_json(run / "metrics.json", metrics)
    _write_json(run / f"eval_{cfg.mode}.json", metrics)
    (run / "config.txt").write_text(cfg.dumps())
    log(f"{cfg.mode}: EM {metrics['em']:.1f} (degraded targets {metrics['em_degraded']})")


def cmd_ablate(args, cfg, log):
    from .pipeline import load_split, run_ablation

    run = _run_dir(args, cfg) / f"ablate_{args.axis}"
    train, evs = load_split(cfg)
    seeds = [cfg.seed + i for i in range(max(1, args.seeds))]
    res = run_ablation(args.axis, cfg, train, evs, seeds=seeds, log=log)
    run.mkdir(parents=True, exist_ok=True)
    (run / "table.md").write_text(res.table())
    (run / "metrics.json").write_text(res.to_json() + "\n")
    (run / "record.jsonl").write_text("".join(json.dumps(line) + "\n" for r in res.records for line in r.lines()))
    (run / "config.txt").write_text(cfg.dumps())
    log(res.table())


def cmd_report(args, cfg, log):
    from .metrics import MetricReport

    run = _run_dir(args, cfg)
    if not run.exists():
        raise InvalidConfig(f"no run directory {run}")
    parts = [f"# Run {cfg.run_id}\n"]
    evals = sorted(run.glob("eval_*.json"))
    if evals:
        parts.append("## Evaluation\n")
        parts.append(MetricReport.header("Mode", all_bleu=True))
        for p in evals:
            m = json.loads(p.read_text())
            rep = MetricReport(**{k: m[k] for k in ("em", "bleu1", "bleu2", "bleu3", "bleu4", "rouge_l", "cider")})
            parts.append(rep.markdown_row(m["mode"], all_bleu=True))
        parts.append("")
    for t in sorted(run.glob("ablate_*/table.md")):
        parts.append(f"## Ablation: {t.parent.name[len('ablate_'):]}\n")
        parts.append(t.read_text())
    text = "\n".join(parts) + "\n"
    (run / "report.md").write_text(text)
    log(text)


COMMANDS = {
    "gen-data": cmd_gen_data,
    "pretrain-llm": cmd_pretrain_llm,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "report": cmd_report,
}


def main(argv=None) -> int:
    def log(msg):
        print(msg, file=sys.stderr, flush=True)

    try:
        args = build_parser().parse_args(argv)
        cfg = _config(args)
    except UsageError as e:
        log(str(e))
        return 1
    except SystemExit as e:  # --help
        return 0 if e.code in (0, None) else 1
    except VALIDATION_ERRORS as e:
        log(f"error: {e}")
        return 1
    import torch

    torch.set_num_threads(max(1, int(os.environ.get("VIEWFUSE3D_THREADS", "1"))))
    try:
        COMMANDS[args.command](args, cfg, log)
    except VALIDATION_ERRORS as e:
        log(f"error: {type(e).__name__}: {e}")
        return 1
    except (ViewFuseError, OSError, ArithmeticError, RuntimeError, ValueError) as e:
        log(f"error: {type(e).__name__}: {e}")
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
