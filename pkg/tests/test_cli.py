import json

import pytest
from conftest import TINY

from viewfuse3d.cli import main
from viewfuse3d.config import RunConfig, load_config, parse_config_text
from viewfuse3d.errors import InvalidConfig
from viewfuse3d.scene.dataset import read_manifest
from viewfuse3d.training import load_checkpoint


def _write_config(path, **kw):
    lines = [f"{k} = {v}" for k, v in {**TINY, **kw}.items()]
    path.write_text("# tiny run\n" + "\n".join(lines) + "\n")
    return path


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    """gen-data, pretrain-llm and stages 1-3 on the tiny config."""
    root = tmp_path_factory.mktemp("cli")
    cfg = _write_config(root / "tiny.cfg", data=str(root / "data"))
    common = ["--config", str(cfg), "--seed", "3"]
    assert main(["gen-data", *common, "--out", str(root / "data")]) == 0
    assert main(["pretrain-llm", *common, "--out", str(root / "runs")]) == 0
    for k in (1, 2, 3):
        assert main(["train", "--stage", str(k), *common, "--out", str(root / "runs")]) == 0
    assert main(["eval", "--mode", "full", *common, "--out", str(root / "runs")]) == 0
    return root, common


def test_gen_data_contract(tmp_path):
    assert main(["gen-data", "--scenes", "10", "--seed", "3", "--n-points", "256", "--n-views", "2",
                 "--eval-scenes", "2", "--out", str(tmp_path / "d")]) == 0
    m = read_manifest(tmp_path / "d")
    assert m["count"] == 10
    assert len([p for p in (tmp_path / "d").iterdir() if p.is_dir()]) == 10
    assert (tmp_path / "d" / "config.txt").read_text().startswith("# config_hash = ")


def test_pipeline_outputs(run):
    root, _ = run
    rdir = root / "runs" / "default"
    metrics = json.loads((rdir / "metrics.json").read_text())
    assert metrics["mode"] == "full" and metrics["stage"] == 3
    lines = [json.loads(x) for x in (rdir / "record.jsonl").read_text().splitlines()]
    assert sorted({x["stage"] for x in lines}) == [1, 2, 3]
    assert load_checkpoint(rdir / "ckpt" / "stage3").history == [0, 1, 2, 3]
    assert "config_hash" in (rdir / "config.txt").read_text()


def test_rerun_is_identical(run, tmp_path):
    root, common = run
    out = tmp_path / "again"
    assert main(["pretrain-llm", *common, "--out", str(out)]) == 0
    for k in (1, 2, 3):
        assert main(["train", "--stage", str(k), *common, "--out", str(out)]) == 0
    assert main(["eval", "--mode", "full", *common, "--out", str(out)]) == 0
    a, b = root / "runs" / "default", out / "default"
    assert (a / "metrics.json").read_bytes() == (b / "metrics.json").read_bytes()
    for k in range(4):
        ma = json.loads((a / "ckpt" / f"stage{k}" / "manifest.json").read_text())
        mb = json.loads((b / "ckpt" / f"stage{k}" / "manifest.json").read_text())
        assert ma["fingerprints"] == mb["fingerprints"]
        assert (a / "ckpt" / f"stage{k}" / "tensors.bin").read_bytes() == (b / "ckpt" / f"stage{k}" / "tensors.bin").read_bytes()


def test_stage3_without_checkpoint_exits_1(run, tmp_path, capsys):
    _, common = run
    assert main(["train", "--stage", "3", *common, "--out", str(tmp_path / "empty")]) == 1
    assert "StageOrderError" in capsys.readouterr().err


def test_usage_errors_exit_1(capsys):
    assert main(["train", "--stage", "1", "--bogus"]) == 1
    assert "usage" in capsys.readouterr().err
    assert main([]) == 1
    assert main(["train", "--stage", "7"]) == 1
    assert main(["eval", "--d", "-3"]) == 1
    assert main(["eval", "--config", "/nonexistent.cfg"]) == 1


def test_ablate_pose_and_report(run):
    root, common = run
    assert main(["ablate", "--axis", "pose", *common, "--out", str(root / "runs")]) == 0
    table = (root / "runs" / "default" / "ablate_pose" / "table.md").read_text()
    rows = [ln for ln in table.splitlines() if ln.startswith("| w")]
    assert [r.split(" | ")[0] for r in rows] == ["| w/o camera poses", "| w/ camera poses"]
    assert main(["report", *common, "--out", str(root / "runs")]) == 0
    rep = (root / "runs" / "default" / "report.md").read_text()
    assert "Ablation: pose" in rep and "| full |" in rep


def test_config_precedence(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("d = 32\nn_heads = 2  # trailing comment\nuse_pose = false\n")
    c = load_config(cfg, {"d": "48"})
    assert c.d == 48 and c.n_heads == 2 and c.use_pose is False
    assert load_config(None).d == RunConfig().d
    with pytest.raises(InvalidConfig):
        parse_config_text("nonsense = 1")
    with pytest.raises(InvalidConfig):
        parse_config_text("d 3")
    with pytest.raises(InvalidConfig):
        load_config(None, {"d": "abc"})


def test_hash_ignores_bookkeeping():
    a = RunConfig()
    assert a.hash() == a.replace(run_id="x", workers=4, data="elsewhere").hash()
    assert a.hash() != a.replace(seed=1).hash()
