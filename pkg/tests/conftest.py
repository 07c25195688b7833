import pytest
import torch

from viewfuse3d.config import RunConfig
from viewfuse3d.pipeline import split_samples, stage0
from viewfuse3d.scene.dataset import build_sample

torch.set_num_threads(1)

TINY = dict(
    scenes=6, eval_scenes=2, n_points=256, n_views=3, d=16, d_llm=32, n_heads=2, n_point_tokens=32, knn=4,
    qformer_depth=1, fusion_layers=1, encoder_depth=1, llm_layers=1, ffn_mult=1, stub_steps=10, stub_scenes=10,
    stub_batch=16, steps1=4, steps2=4, steps3=4, batch_size=4, eval_batch=8,
)


def tiny_config(**kw) -> RunConfig:
    return RunConfig(**{**TINY, **kw}).validate()


@pytest.fixture(scope="session")
def tiny_cfg():
    return tiny_config()


@pytest.fixture(scope="session")
def tiny_samples(tiny_cfg):
    samples = [build_sample(i, tiny_cfg.seed, tiny_cfg.dataset_config())[0] for i in range(tiny_cfg.scenes)]
    return split_samples(samples, tiny_cfg.eval_scenes)


@pytest.fixture(scope="session")
def tiny_base(tiny_cfg, tiny_samples):
    return stage0(tiny_cfg, tiny_samples[0])


# one line per acceptance criterion, printed after the run
ACCEPTANCE: dict = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[number] = (ok, detail)
    print(f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
