import math

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from viewfuse3d.errors import GradError, NumericError, RangeError, ShapeError, UndefinedLossError
from viewfuse3d.nn.core import (
    MultiHeadAttention,
    TransformerBlock,
    attention,
    cross_entropy,
    zero_residual_branches,
)
from viewfuse3d.nn.gradcheck import gradcheck
from viewfuse3d.nn.params import LrSchedule, OptimizerState, ParameterStore, adamw_step, lr_at_step


def test_hand_softmax_single_head():
    q = torch.tensor([[1.0, 0.0]], dtype=torch.float64)
    k = torch.tensor([[1.0, 0.0], [0.0, 1.0]], dtype=torch.float64)
    v = torch.tensor([[3.0, -1.0], [0.5, 2.0]], dtype=torch.float64)
    out, w = attention(q, k, v, 1, return_weights=True)
    a = math.exp(1 / math.sqrt(2))
    expect = torch.tensor([a / (a + 1), 1 / (a + 1)], dtype=torch.float64)
    assert torch.allclose(w[0, 0], expect, atol=1e-15)
    assert torch.allclose(out[0], expect @ v, atol=1e-14)


def test_single_key_and_identical_keys():
    g = torch.Generator().manual_seed(0)
    q = torch.randn(5, 8, generator=g, dtype=torch.float64)
    v1 = torch.randn(1, 8, generator=g, dtype=torch.float64)
    out = attention(q, torch.randn(1, 8, generator=g, dtype=torch.float64), v1, 2)
    assert torch.allclose(out, v1.expand(5, 8), atol=1e-14)
    k = torch.randn(1, 8, generator=g, dtype=torch.float64).expand(4, 8)
    v = torch.randn(4, 8, generator=g, dtype=torch.float64)
    out = attention(q, k, v, 4)
    assert torch.allclose(out, v.mean(0).expand(5, 8), atol=1e-14)


def test_attention_shape_errors():
    x = torch.zeros(3, 6)
    with pytest.raises(ShapeError):
        attention(x, x, x, 4)
    with pytest.raises(ShapeError):
        attention(x, torch.zeros(3, 4), x, 2)
    with pytest.raises(ShapeError):
        MultiHeadAttention(6, 4)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), tq=st.integers(1, 6), tk=st.integers(1, 9), heads=st.sampled_from([1, 2, 4]))
def test_softmax_rows_sum_to_one(seed, tq, tk, heads):
    torch.manual_seed(seed)
    mha = MultiHeadAttention(8, heads).double()
    _, w = mha(torch.randn(tq, 8, dtype=torch.float64) * 5, torch.randn(tk, 8, dtype=torch.float64) * 5,
               return_weights=True)
    assert (w.sum(-1) - 1).abs().max() < 1e-12
    mha32 = MultiHeadAttention(8, heads)
    _, w32 = mha32(torch.randn(tq, 8) * 5, torch.randn(tk, 8) * 5, return_weights=True)
    assert (w32.sum(-1) - 1).abs().max() < 1e-6


def test_block_residual_identity_and_shape():
    torch.manual_seed(0)
    blk = TransformerBlock(64, 4, cross=True)
    x = torch.randn(32, 64)
    assert blk(x, torch.randn(7, 64)).shape == (32, 64)
    zero_residual_branches(blk)
    assert torch.equal(blk(x, torch.randn(7, 64)), x)


def test_block_context_contract():
    blk = TransformerBlock(8, 2)
    with pytest.raises(ShapeError):
        blk(torch.zeros(2, 8), torch.zeros(3, 8))
    with pytest.raises(ShapeError):
        TransformerBlock(8, 2, cross=True)(torch.zeros(2, 8))


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_block_permutation_equivariance(seed):
    torch.manual_seed(seed)
    blk = TransformerBlock(16, 4, cross=True).double()
    x = torch.randn(6, 16, dtype=torch.float64)
    ctx = torch.randn(5, 16, dtype=torch.float64)
    perm = torch.randperm(6)
    assert (blk(x, ctx)[perm] - blk(x[perm], ctx)).abs().max() < 1e-8
    # context order is irrelevant too
    assert (blk(x, ctx) - blk(x, ctx[torch.randperm(5)])).abs().max() < 1e-8


def test_cross_entropy_cases():
    v = 8
    assert cross_entropy(torch.zeros(3, v), torch.tensor([1, 2, 3])).item() == pytest.approx(math.log(v), abs=1e-6)
    sure = torch.full((2, v), -1e4)
    sure[0, 3] = sure[1, 5] = 1e4
    assert cross_entropy(sure, torch.tensor([3, 5])).item() == pytest.approx(0.0, abs=1e-6)
    logits = torch.tensor([[1.0, 2.0, 0.0], [0.5, -0.5, 3.0]], dtype=torch.float64)
    l0 = -(1.0 - math.log(math.e**1 + math.e**2 + 1))
    l1 = -(3.0 - math.log(math.e**0.5 + math.e**-0.5 + math.e**3))
    got = cross_entropy(logits, torch.tensor([0, 2])).item()
    assert got == pytest.approx((l0 + l1) / 2, abs=1e-12)
    assert cross_entropy(logits, torch.tensor([0, -100])).item() == pytest.approx(l0, abs=1e-12)
    with pytest.raises(UndefinedLossError):
        cross_entropy(logits, torch.tensor([-100, -100]))
    with pytest.raises(ShapeError):
        cross_entropy(logits, torch.tensor([0, 3]))


def _store(*values, frozen=()):
    return ParameterStore({f"p{i}": torch.tensor([v], dtype=torch.float64) for i, v in enumerate(values)}, frozen)


def test_adamw_hand_oracle():
    lr = 1e-3
    store = _store(0.5)
    state = OptimizerState()
    adamw_step(store, {"p0": torch.tensor([1.0], dtype=torch.float64)}, state, lr)
    # m_hat = 1, v_hat = 1 after bias correction
    expect = 0.5 * (1 - lr * 0.05) - lr * 1.0 / (1.0 + 1e-8)
    assert store["p0"].item() == pytest.approx(expect, abs=1e-15)
    assert state.step == 1
    assert state.exp_avg["p0"].shape == store["p0"].shape
    # second step, gradient -2
    adamw_step(store, {"p0": torch.tensor([-2.0], dtype=torch.float64)}, state, lr)
    m = 0.9 * 0.1 + 0.1 * -2.0
    v = 0.999 * 0.001 + 0.001 * 4.0
    m_hat, v_hat = m / (1 - 0.9**2), v / (1 - 0.999**2)
    expect = expect * (1 - lr * 0.05) - lr * m_hat / (math.sqrt(v_hat) + 1e-8)
    assert store["p0"].item() == pytest.approx(expect, abs=1e-15)


def test_adamw_fixed_point_and_freeze():
    store = _store(0.3, -1.2)
    state = OptimizerState(weight_decay=0.0)
    adamw_step(store, {"p0": torch.zeros(1, dtype=torch.float64), "p1": torch.zeros(1, dtype=torch.float64)}, state, 1e-2)
    assert store["p0"].item() == 0.3 and store["p1"].item() == -1.2
    frozen = _store(0.3, -1.2, frozen=("p0", "p1"))
    fp = frozen.fingerprint()
    adamw_step(frozen, {}, OptimizerState(), 1e-2)
    assert frozen.fingerprint() == fp
    with pytest.raises(GradError):
        adamw_step(_store(1.0), {}, OptimizerState(), 1e-2)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), steps=st.integers(1, 6), mask=st.lists(st.booleans(), min_size=4, max_size=4))
def test_frozen_subset_invariant(seed, steps, mask):
    g = torch.Generator().manual_seed(seed)
    store = ParameterStore({f"w{i}": torch.randn(3, generator=g) for i in range(4)},
                           [f"w{i}" for i, m in enumerate(mask) if m])
    frozen = store.frozen_names()
    fp = store.fingerprint(frozen) if frozen else None
    state = OptimizerState()
    for _ in range(steps):
        adamw_step(store, {n: torch.randn(3, generator=g) for n in store.trainable_names()}, state, 1e-2)
    if frozen:
        assert store.fingerprint(frozen) == fp


def test_schedule_quoted_values():
    s = LrSchedule(warmup_steps=10, total_steps=100)
    assert lr_at_step(s, 0) == 1e-8
    assert lr_at_step(s, 10) == 1e-4
    assert lr_at_step(s, 100) == 1e-5
    assert lr_at_step(s, 100, finetune=True) == 1e-6
    with pytest.raises(RangeError):
        lr_at_step(s, 101)
    with pytest.raises(RangeError):
        lr_at_step(s, -1)
    with pytest.raises(ValueError):
        LrSchedule(warmup_steps=10, total_steps=10)


@given(warm=st.integers(1, 50), extra=st.integers(1, 200), finetune=st.booleans())
def test_schedule_continuity_and_bounds(warm, extra, finetune):
    s = LrSchedule(warmup_steps=warm, total_steps=warm + extra)
    lrs = [lr_at_step(s, i, finetune) for i in range(s.total_steps + 1)]
    assert abs(lrs[warm] - lrs[warm - 1]) <= (s.peak - s.warmup_start) / warm + 1e-12
    floor = s.finetune_floor if finetune else s.floor
    assert all(floor - 1e-18 <= x <= s.peak for x in lrs[warm:])
    assert all(a <= b for a, b in zip(lrs[: warm + 1], lrs[1 : warm + 1]))
    assert all(a >= b for a, b in zip(lrs[warm:], lrs[warm + 1 :]))


def test_gradcheck_quadratic_and_negative_control():
    x = torch.randn(6, dtype=torch.float64, requires_grad=True)
    assert gradcheck(lambda: 0.5 * (x * x).sum(), [x]) < 1e-9

    class Wrong(torch.autograd.Function):
        @staticmethod
        def forward(ctx, t):
            ctx.save_for_backward(t)
            return 0.5 * (t * t).sum()

        @staticmethod
        def backward(ctx, g):
            (t,) = ctx.saved_tensors
            return g * (t + 0.1)

    assert gradcheck(lambda: Wrong.apply(x), [x]) > 1e-2


def test_gradcheck_errors():
    x = torch.ones(2, dtype=torch.float64, requires_grad=True)
    with pytest.raises(NumericError):
        gradcheck(lambda: (x / 0).sum(), [x])
    with pytest.raises(TypeError):
        gradcheck(lambda: x.float().sum(), [x.float().detach().requires_grad_()])
