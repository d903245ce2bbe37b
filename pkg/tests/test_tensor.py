import numpy as np
import pytest
from hypothesis import given, strategies as st

from cyclemlp.errors import ShapeError
from cyclemlp.tensor import (Rng, check_tensor, flat_index, tensor_close, tensor_new,
                             tensor_rand_normal, unflat_index)

M64 = (1 << 64) - 1


def ref_splitmix(seed, count):
    out, s = [], seed
    for _ in range(count):
        s = (s + 0x9E3779B97F4A7C15) & M64
        z = s
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & M64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & M64
        out.append(z ^ (z >> 31))
    return out


def ref_xoshiro(state, count):
    rotl = lambda x, k: ((x << k) | (x >> (64 - k))) & M64  # noqa: E731
    s = list(state)
    out = []
    for _ in range(count):
        out.append((rotl((s[1] * 5) & M64, 7) * 9) & M64)
        t = (s[1] << 17) & M64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = rotl(s[3], 45)
    return out


def test_new_fill_semantics():
    x = tensor_new((1, 1, 1, 1), 0.0)
    assert x.shape == (1, 1, 1, 1) and x[0, 0, 0, 0] == 0.0
    y = tensor_new((2, 3, 4, 4), 1.0)
    assert y.size == 96 and np.all(y == 1.0)
    z = tensor_new((1, 0, 4, 4), 5.0)
    assert z.size == 0


def test_new_rejects_bad_extents():
    with pytest.raises(ShapeError):
        tensor_new((1, -1, 2, 2))
    with pytest.raises(ShapeError):
        tensor_new((2, 2, 2))
    with pytest.raises(OverflowError):
        tensor_new((1 << 20, 1 << 20, 1 << 20, 1 << 20))


def test_check_tensor():
    check_tensor(np.zeros((1, 2, 3, 4), np.float32))
    with pytest.raises(ShapeError):
        check_tensor(np.zeros((2, 3, 4)))
    with pytest.raises(TypeError):
        check_tensor(np.zeros((1, 1, 1, 1), np.int32))


def test_rng_matches_scalar_reference():
    seed = 7
    words = ref_splitmix(seed, 8)
    lane0, lane1 = words[:4], words[4:]
    r = Rng(seed)
    first_round = r.words(Rng.LANES)
    second_round = r.words(Rng.LANES)
    exp0 = ref_xoshiro(lane0, 2)
    exp1 = ref_xoshiro(lane1, 2)
    assert [int(first_round[0]), int(second_round[0])] == exp0
    assert [int(first_round[1]), int(second_round[1])] == exp1


def test_rng_stream_independent_of_batching():
    a = Rng(3).uniform(10_000)
    r = Rng(3)
    b = np.concatenate([r.uniform(1), r.uniform(4095), r.uniform(17), r.uniform(10_000 - 4113)])
    assert np.array_equal(a, b)


def test_rand_normal_degenerate_and_deterministic():
    x = tensor_rand_normal((2, 3, 4, 5), Rng(1), mean=1.5, std=0.0)
    assert np.all(x == np.float32(1.5))
    a = tensor_rand_normal((2, 3, 4, 5), Rng(9))
    b = tensor_rand_normal((2, 3, 4, 5), Rng(9))
    assert np.array_equal(a, b)
    with pytest.raises(ValueError):
        tensor_rand_normal((1, 1, 1, 1), Rng(0), std=-1.0)


def test_rand_normal_pinned_sample_mean():
    x = tensor_rand_normal((1, 1, 100, 100), Rng(42), 0.0, 1.0, dtype=np.float64)
    # frozen from the fixed generator
    assert x.mean() == pytest.approx(0.0020816093490638086, abs=1e-15)
    assert -0.05 < x.mean() < 0.05


def test_rand_normal_moments():
    n = 200_000
    x = tensor_rand_normal((1, 1, 1, n), Rng(5), mean=2.0, std=3.0, dtype=np.float64)
    assert abs(x.mean() - 2.0) < 5 * 3.0 / np.sqrt(n)
    assert x.std() == pytest.approx(3.0, rel=0.01)


def test_close():
    a = np.zeros((1, 1, 1, 1))
    assert tensor_close(a, a, 0, 0)
    assert tensor_close(a, a + 1e-9, atol=1e-8, rtol=0)
    assert not tensor_close(a, a + 1.0, atol=1e-8, rtol=1e-8)
    with pytest.raises(ShapeError):
        tensor_close(a, np.zeros((1, 1, 1, 2)))


@given(st.tuples(*[st.integers(1, 6)] * 4), st.data())
def test_flat_index_roundtrip(dims, data):
    coords = tuple(data.draw(st.integers(0, d - 1)) for d in dims)
    i = flat_index(dims, *coords)
    assert i == np.ravel_multi_index(coords, dims)
    assert unflat_index(dims, i) == coords
    x = np.arange(np.prod(dims)).reshape(dims)
    assert x.reshape(-1)[i] == x[coords]
