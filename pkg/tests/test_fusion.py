import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from viewfuse3d.encoders import TextEmbedding
from viewfuse3d.errors import EmptyInputError, ShapeError
from viewfuse3d.fusion import (
    FusionModule,
    PoseMLP,
    QFormer,
    ViewAggregator,
    aggregate_baseline,
    aggregate_views,
    extract_view_features,
    fuse_pose,
    pose_embedding,
)
from viewfuse3d.scene.render import look_at


def _text(n=5, d=16, masked=0, dtype=torch.float64):
    mask = torch.ones(n, dtype=torch.bool)
    if masked:
        mask[-masked:] = False
    return TextEmbedding(torch.randn(n, d, dtype=dtype), mask)


def test_view_features_shape_and_distinct_images():
    torch.manual_seed(0)
    qf = QFormer(16, 4, 2).double()
    text = _text()
    a = extract_view_features(torch.randn(16, 16, dtype=torch.float64), text, qf)
    b = extract_view_features(torch.randn(16, 16, dtype=torch.float64), text, qf)
    assert a.shape == (32, 16)
    assert (a - b).abs().max() > 0
    with pytest.raises(ShapeError):
        extract_view_features(torch.randn(16, 8, dtype=torch.float64), text, qf)


def test_empty_instruction_is_ignored():
    torch.manual_seed(1)
    qf = QFormer(16, 4, 2).double()
    img = torch.randn(16, 16, dtype=torch.float64)
    t1 = TextEmbedding(torch.randn(4, 16, dtype=torch.float64), torch.zeros(4, dtype=torch.bool))
    t2 = TextEmbedding(torch.randn(4, 16, dtype=torch.float64), torch.zeros(4, dtype=torch.bool))
    a = extract_view_features(img, t1, qf)
    assert torch.equal(a, extract_view_features(img, t2, qf))
    assert (a - qf(img)).abs().max() < 1e-12


def test_pose_embedding_cases():
    torch.manual_seed(0)
    mlp = PoseMLP(16).double()
    pose = look_at(np.array([3.0, 1.0, 2.0]), np.zeros(3))
    e = pose_embedding(pose, mlp)
    assert e.shape == (16,)
    assert torch.equal(e, pose_embedding(pose.copy(), mlp))
    with torch.no_grad():
        for p in mlp.parameters():
            p.zero_()
        mlp.fc2.bias.copy_(torch.arange(16.0))
    assert torch.equal(pose_embedding(pose, mlp), torch.arange(16.0, dtype=torch.float64))
    with pytest.raises(ShapeError):
        mlp(torch.zeros(3, 3, dtype=torch.float64))


def test_fuse_pose_definition():
    v = torch.randn(32, 16)
    e = torch.randn(16)
    out = fuse_pose(v, e)
    assert torch.equal(fuse_pose(v, torch.zeros(16)), v)
    # bitwise in construction order; row differences equal e up to rounding
    assert torch.equal(out, v + e[None, :])
    assert ((out - v) - e).abs().max() < 1e-6
    assert (fuse_pose(out, -e) - v).abs().max() < 1e-6
    with pytest.raises(ShapeError):
        fuse_pose(v, torch.zeros(8))


@pytest.mark.parametrize("n", [1, 8, 16, 32])
def test_aggregate_shape_any_n(n):
    torch.manual_seed(0)
    agg = ViewAggregator(16, 4, 4)
    assert aggregate_views(torch.randn(n, 32, 16), agg).shape == (32, 16)


def test_aggregate_empty():
    agg = ViewAggregator(16, 4, 4)
    with pytest.raises(EmptyInputError):
        aggregate_views([], agg)
    with pytest.raises(EmptyInputError):
        aggregate_baseline([])
    with pytest.raises(EmptyInputError):
        aggregate_views(torch.zeros(0, 32, 16), agg)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), n=st.integers(2, 10))
def test_aggregation_permutation_invariance(seed, n):
    torch.manual_seed(seed)
    agg = ViewAggregator(16, 4, 4).double()
    views = torch.randn(n, 32, 16, dtype=torch.float64)
    perm = torch.randperm(n)
    assert (aggregate_views(views, agg) - aggregate_views(views[perm], agg)).abs().max() < 1e-8
    for mode in ("mean", "max"):
        assert (aggregate_baseline(views, mode) - aggregate_baseline(views[perm], mode)).abs().max() < 1e-8


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_pose_swap_changes_output(seed):
    torch.manual_seed(seed)
    fm = FusionModule(16, 4, 2, 4).double()
    feats = torch.randn(1, 4, 16, 16, dtype=torch.float64)
    poses = torch.randn(1, 4, 4, 4, dtype=torch.float64)
    text = TextEmbedding(torch.randn(1, 3, 16, dtype=torch.float64), torch.ones(1, 3, dtype=torch.bool))
    base = fm(feats, poses, text)
    swapped = poses.clone()
    swapped[0, [0, 1]] = poses[0, [1, 0]]
    assert (fm(feats, swapped, text) - base).abs().max() > 1e-6
    perm = torch.randperm(4)
    assert (fm(feats[:, perm], poses[:, perm], text) - base).abs().max() < 1e-8


def test_baseline_cases():
    v = torch.randn(32, 16)
    assert torch.equal(aggregate_baseline([v], "mean"), v)
    assert torch.equal(aggregate_baseline([v], "max"), v)
    assert torch.equal(aggregate_baseline([v, -v], "mean"), torch.zeros(32, 16))
    a = torch.tensor([[1.0, -2.0], [3.0, 0.0]])
    b = torch.tensor([[0.0, 5.0], [3.5, -1.0]])
    assert torch.equal(aggregate_baseline([a, b], "max"), torch.tensor([[1.0, 5.0], [3.5, 0.0]]))
    with pytest.raises(ValueError):
        aggregate_baseline([a], "median")


@pytest.mark.parametrize("seed", range(5))
def test_gradients_reach_every_fusion_parameter(seed):
    torch.manual_seed(seed)
    fm = FusionModule(16, 4, 2, 4).double()
    feats = torch.randn(2, 3, 16, 16, dtype=torch.float64)
    poses = torch.randn(2, 3, 4, 4, dtype=torch.float64)
    text = TextEmbedding(torch.randn(2, 3, 16, dtype=torch.float64), torch.ones(2, 3, dtype=torch.bool))
    out = fm(feats, poses, text)
    (out * torch.randn_like(out)).sum().backward()
    for name, p in fm.named_parameters():
        assert p.grad is not None and p.grad.abs().max() > 0, name


def test_unused_prefixes():
    assert FusionModule(16, 4).unused_prefixes() == []
    assert FusionModule(16, 4, aggregator="max", use_pose=False).unused_prefixes() == ["aggregator", "pose_mlp"]
    with pytest.raises(ValueError):
        FusionModule(16, 4, aggregator="sum")
