import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cyclemlp import ops
from cyclemlp.errors import InputTooSmallError, ShapeError
from cyclemlp.ops import CycleFcParams, LayerNormParams, MlpParams, PatchEmbedParams
from cyclemlp.tensor import Rng


def rand(rng, *shape, dtype=np.float64):
    return rng.normal(int(np.prod(shape))).reshape(shape).astype(dtype)


# -- channel FC -------------------------------------------------------------------


def test_channel_fc_identity_and_sum():
    x = rand(Rng(0), 2, 2, 3, 3)
    y, _ = ops.channel_fc_forward(x, CycleFcParams(np.eye(2), np.zeros(2)))
    assert np.array_equal(y, x)
    x = np.empty((1, 2, 3, 4))
    x[:, 0], x[:, 1] = 2.0, 5.0
    y, _ = ops.channel_fc_forward(x, CycleFcParams(np.ones((2, 1)), np.array([3.0])))
    assert np.all(y == 10.0)


def test_fc_channel_mismatch():
    p = CycleFcParams(np.ones((3, 2)), np.zeros(2))
    with pytest.raises(ShapeError):
        ops.channel_fc_forward(np.zeros((1, 2, 2, 2)), p)
    with pytest.raises(ShapeError):
        ops.cycle_fc_forward(np.zeros((1, 2, 2, 2)), CycleFcParams(np.ones((3, 2)), np.zeros(2),
                                                                   (1, 3)))


# -- offsets ---------------------------------------------------------------------


def test_offset_examples():
    t = ops.build_offset_table(6, (1, 3))
    assert t.dw.tolist() == [-1, 0, 1, -1, 0, 1] and t.dh.tolist() == [0] * 6
    t = ops.build_offset_table(4, (1, 1))
    assert t.dh.tolist() == [0] * 4 and t.dw.tolist() == [0] * 4
    t = ops.build_offset_table(5, (3, 1))
    assert t.dh.tolist() == [-1, 0, 1, -1, 0] and t.dw.tolist() == [0] * 5


@pytest.mark.parametrize("kernel", [(2, 1), (1, 4), (0, 1), (-1, 1), (3, 3)])
def test_offset_rejects_bad_kernels(kernel):
    with pytest.raises(ValueError):
        ops.build_offset_table(4, kernel)


@given(st.integers(1, 64), st.sampled_from([1, 3, 5, 7, 9]), st.booleans())
def test_offset_invariants(c, k, vertical):
    kernel = (k, 1) if vertical else (1, k)
    t = ops.build_offset_table(c, kernel)
    moving, still = (t.dh, t.dw) if vertical else (t.dw, t.dh)
    assert np.all(still == 0)
    assert np.all(np.abs(moving) <= k // 2)
    assert np.array_equal(moving[k:], moving[:-k] if c > k else moving[k:])
    if c >= k:
        assert sorted(moving[:k].tolist()) == list(range(-(k // 2), k // 2 + 1))


# -- cycle FC -----------------------------------------------------------------------


def test_cycle_fc_worked_example():
    xw = np.array([[1, 2, 3], [4, 5, 6], [7, 8, 9]], dtype=np.float64)  # [w][c]
    x = xw.T[None, :, None, :]
    p = CycleFcParams(np.ones((3, 1)), np.zeros(1), (1, 3))
    y, _ = ops.cycle_fc_forward(x, p)
    assert y.reshape(-1).tolist() == [8.0, 15.0, 12.0]


def test_cycle_fc_degenerates_to_channel_fc():
    rng = Rng(3)
    for _ in range(50):
        c, co = int(rng.integers(1, 9, 1)[0]), int(rng.integers(1, 9, 1)[0])
        x = rand(rng, 2, c, 3, 5, dtype=np.float32)
        p = CycleFcParams(rand(rng, c, co, dtype=np.float32), rand(rng, co, dtype=np.float32))
        assert np.array_equal(ops.cycle_fc_forward(x, p)[0], ops.channel_fc_forward(x, p)[0])


def test_cycle_fc_locality():
    # changing X at one site only moves outputs within the pseudo-kernel footprint
    rng = Rng(4)
    x = rand(rng, 1, 6, 7, 9)
    p = CycleFcParams(rand(rng, 6, 4), rand(rng, 4), (1, 5))
    y0 = ops.cycle_fc_forward(x, p)[0]
    x2 = x.copy()
    x2[0, :, 3, 4] += 1.0
    diff = np.abs(ops.cycle_fc_forward(x2, p)[0] - y0).sum(axis=(0, 1))
    changed = np.argwhere(diff > 0)
    assert set(changed[:, 0]) == {3}
    assert set(changed[:, 1]) <= set(range(2, 7))


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 12), st.integers(1, 12), st.sampled_from([(1, 3), (3, 1), (1, 7)]))
def test_cycle_fc_resolution_agnostic(h, w, kernel):
    rng = Rng(h * 100 + w)
    p = CycleFcParams(rand(rng, 5, 3), rand(rng, 3), kernel)
    y, _ = ops.cycle_fc_forward(rand(rng, 1, 5, h, w), p)
    assert y.shape == (1, 3, h, w)


def test_cycle_fc_vjp_zero_dy():
    rng = Rng(5)
    x = rand(rng, 2, 4, 3, 3)
    y, tape = ops.cycle_fc_forward(x, CycleFcParams(rand(rng, 4, 2), rand(rng, 2), (3, 1)))
    dx, dw, db = ops.cycle_fc_vjp(tape, np.zeros_like(y))
    assert not dx.any() and not dw.any() and not db.any()
    with pytest.raises(ShapeError):
        ops.cycle_fc_vjp(tape, np.zeros((1, 2, 3, 3)))


def test_cycle_fc_is_adjoint():
    # <cycle(x), g> == <x, vjp(g)> for the bias-free map
    rng = Rng(6)
    x = rand(rng, 2, 7, 4, 6)
    p = CycleFcParams(rand(rng, 7, 3), np.zeros(3), (1, 5))
    y, tape = ops.cycle_fc_forward(x, p)
    g = rand(rng, *y.shape)
    dx = ops.cycle_fc_vjp(tape, g)[0]
    assert np.sum(y * g) == pytest.approx(np.sum(x * dx), rel=1e-12)


# -- layer norm / gelu / mlp -----------------------------------------------------------


def test_layer_norm_examples():
    p = LayerNormParams(np.ones(3), np.zeros(3))
    y, _ = ops.layer_norm_forward(np.full((1, 3, 2, 2), 4.0), p)
    assert np.all(y == 0.0)
    x = np.array([1.0, 3.0]).reshape(1, 2, 1, 1)
    y, _ = ops.layer_norm_forward(x, LayerNormParams(np.ones(2), np.zeros(2), eps=1e-12))
    assert y.reshape(-1) == pytest.approx([-1.0, 1.0], abs=1e-9)


def test_layer_norm_vjp_zero_dy():
    x = rand(Rng(0), 2, 3, 2, 2)
    y, tape = ops.layer_norm_forward(x, LayerNormParams(np.ones(3), np.zeros(3)))
    assert all(not g.any() for g in ops.layer_norm_vjp(tape, np.zeros_like(y)))


def test_gelu_examples():
    x = np.array([0.0, 6.0, -6.0, 1.0]).reshape(1, 1, 1, 4)
    y, tape = ops.gelu_forward(x)
    y = y.reshape(-1)
    assert y[0] == 0.0
    assert abs(y[1] - 6.0) < 1e-6
    assert abs(y[2]) < 1e-6
    assert y[3] == pytest.approx(0.5 * (1 + math.erf(1 / math.sqrt(2))), rel=1e-15)
    dx = ops.gelu_vjp(tape, np.ones_like(x)).reshape(-1)
    assert dx[0] == pytest.approx(0.5)


def test_gelu_keeps_f32():
    x = np.ones((1, 1, 2, 2), np.float32)
    y, tape = ops.gelu_forward(x)
    assert y.dtype == np.float32 and ops.gelu_vjp(tape, x).dtype == np.float32


def test_channel_mlp_examples():
    x = np.abs(rand(Rng(1), 1, 3, 2, 2)) + 10.0
    z = MlpParams(CycleFcParams(np.zeros((3, 6)), np.zeros(6)),
                  CycleFcParams(np.zeros((6, 3)), np.zeros(3)))
    assert not ops.channel_mlp_forward(x, z)[0].any()
    ident = MlpParams(CycleFcParams(np.eye(3), np.zeros(3)), CycleFcParams(np.eye(3), np.zeros(3)))
    assert ops.channel_mlp_forward(x, ident)[0] == pytest.approx(x, rel=1e-12)


# -- patch embed / pool / loss -------------------------------------------------------------


@pytest.mark.parametrize("hw,k,s,pad,out", [(224, 7, 4, 3, 56), (56, 3, 2, 1, 28), (7, 3, 2, 1, 4),
                                             (1, 3, 2, 1, 1)])
def test_patch_embed_sizes(hw, k, s, pad, out):
    assert ops.conv_out_size(hw, k, s, pad) == out
    p = PatchEmbedParams(np.ones((2, 1, k, k)), np.zeros(2), s, pad)
    y, _ = ops.patch_embed_forward(np.ones((1, 1, hw, hw)), p)
    assert y.shape == (1, 2, out, out)


def test_patch_embed_too_small_and_zero_vjp():
    p = PatchEmbedParams(np.ones((2, 1, 7, 7)), np.zeros(2), 4, 0)
    with pytest.raises(InputTooSmallError):
        ops.patch_embed_forward(np.ones((1, 1, 6, 6)), p)
    p = PatchEmbedParams(np.ones((2, 1, 3, 3)), np.zeros(2), 2, 1)
    y, tape = ops.patch_embed_forward(np.ones((1, 1, 5, 5)), p)
    assert all(not g.any() for g in ops.patch_embed_vjp(tape, np.zeros_like(y)))


def test_avg_pool():
    y, _ = ops.global_avg_pool_forward(np.full((2, 3, 4, 5), 2.5))
    assert y.shape == (2, 3, 1, 1) and np.all(y == 2.5)
    x = rand(Rng(2), 2, 3, 1, 1)
    assert np.array_equal(ops.global_avg_pool_forward(x)[0], x)
    x = rand(Rng(2), 2, 3, 4, 5)
    assert ops.global_avg_pool_forward(x)[0] == pytest.approx(x.mean(axis=(2, 3), keepdims=True))


def test_softmax_xent_examples():
    for k in (2, 5, 1000):
        loss, d = ops.softmax_xent(np.zeros((3, k, 1, 1)), [0, 1, 1])
        assert loss == pytest.approx(math.log(k), rel=1e-12)
        assert d.sum() == pytest.approx(0.0, abs=1e-12)
    logits = np.zeros((1, 3, 1, 1))
    logits[0, 2] = 20.0
    assert ops.softmax_xent(logits, [2])[0] < 1e-8
    with pytest.raises(ValueError):
        ops.softmax_xent(logits, [3])
