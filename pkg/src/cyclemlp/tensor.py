"""Dense 4-D tensors and the seeded random generator.

Tensors are plain ``numpy.ndarray`` objects with four axes laid out as
(N, C, H, W), C-contiguous, dtype float32 or float64.  The helpers here
construct and validate them; no operator logic lives in this module.
"""

from __future__ import annotations

import math
import sys

import numpy as np

from .errors import ShapeError

DTYPES = (np.dtype(np.float32), np.dtype(np.float64))

_MASK64 = (1 << 64) - 1
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def _check_dims(dims) -> tuple[int, int, int, int]:
    dims = tuple(int(d) for d in dims)
    if len(dims) != 4:
        raise ShapeError(f"expected 4 extents (N, C, H, W), got {dims}")
    if any(d < 0 for d in dims):
        raise ShapeError(f"negative extent in {dims}")
    if math.prod(dims) > sys.maxsize:
        raise OverflowError(f"extent product of {dims} overflows the platform size type")
    return dims


def check_tensor(x: np.ndarray, name: str = "tensor") -> np.ndarray:
    if not isinstance(x, np.ndarray):
        raise TypeError(f"{name} must be a numpy array, got {type(x).__name__}")
    if x.ndim != 4:
        raise ShapeError(f"{name} must be 4-D (N, C, H, W), got shape {x.shape}")
    if x.dtype not in DTYPES:
        raise TypeError(f"{name} must be float32 or float64, got {x.dtype}")
    return x


def tensor_new(dims, fill: float = 0.0, dtype=np.float32) -> np.ndarray:
    dims = _check_dims(dims)
    return np.full(dims, fill, dtype=dtype)


def tensor_rand_normal(dims, rng: "Rng", mean: float = 0.0, std: float = 1.0,
                       dtype=np.float32) -> np.ndarray:
    if std < 0:
        raise ValueError(f"std must be non-negative, got {std}")
    dims = _check_dims(dims)
    z = rng.normal(math.prod(dims))
    return (mean + std * z).astype(dtype).reshape(dims)


def tensor_close(a: np.ndarray, b: np.ndarray, atol: float = 1e-8, rtol: float = 1e-5) -> bool:
    """True iff ``|a - b| <= atol + rtol * |b|`` holds elementwise."""
    if a.shape != b.shape:
        raise ShapeError(f"dims mismatch: {a.shape} vs {b.shape}")
    if a.dtype != b.dtype:
        raise ShapeError(f"dtype mismatch: {a.dtype} vs {b.dtype}")
    a64 = a.astype(np.float64)
    b64 = b.astype(np.float64)
    return bool(np.all(np.abs(a64 - b64) <= atol + rtol * np.abs(b64)))


def flat_index(dims, n: int, c: int, h: int, w: int) -> int:
    _, C, H, W = dims
    return ((n * C + c) * H + h) * W + w


def unflat_index(dims, i: int) -> tuple[int, int, int, int]:
    _, C, H, W = dims
    i, w = divmod(i, W)
    i, h = divmod(i, H)
    n, c = divmod(i, C)
    return n, c, h, w


def _splitmix64(seed: int, count: int) -> np.ndarray:
    """First ``count`` outputs of splitmix64 started at ``seed``."""
    k = np.arange(1, count + 1, dtype=np.uint64)
    z = np.uint64(seed & _MASK64) + k * _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def _rotl(x: np.ndarray, k: int) -> np.ndarray:
    return (x << np.uint64(k)) | (x >> np.uint64(64 - k))


class Rng:
    """Deterministic generator: xoshiro256** lanes seeded by splitmix64.

    ``LANES`` independent xoshiro256** states are advanced in lockstep so
    that bulk draws vectorize.  Lane ``i`` is seeded with splitmix64 outputs
    ``4i .. 4i+3`` of the user seed, and each lockstep round emits lanes
    0..LANES-1 in order.  Unused words of a round are buffered, so the value
    stream depends only on the seed, never on how draws are batched.

    Uniforms take the top 53 bits of each word; normals use Box-Muller on
    consecutive uniform pairs ``(u0, u1)`` giving ``r cos t`` then ``r sin t``.
    """

    LANES = 4096

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        words = _splitmix64(self.seed, 4 * self.LANES).reshape(self.LANES, 4)
        self._s = [words[:, j].copy() for j in range(4)]
        self._buf = np.empty(0, dtype=np.uint64)

    def _round(self) -> np.ndarray:
        s0, s1, s2, s3 = self._s
        out = _rotl(s1 * np.uint64(5), 7) * np.uint64(9)
        t = s1 << np.uint64(17)
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        self._s[3] = _rotl(s3, 45)
        return out

    def words(self, n: int) -> np.ndarray:
        """Next ``n`` raw 64-bit words."""
        have = self._buf.size
        if n <= have:
            out, self._buf = self._buf[:n], self._buf[n:]
            return out
        rounds = -(-(n - have) // self.LANES)
        chunks = [self._buf] + [self._round() for _ in range(rounds)]
        allw = np.concatenate(chunks)
        out, self._buf = allw[:n], allw[n:].copy()
        return out

    def uniform(self, n: int) -> np.ndarray:
        """``n`` float64 samples in [0, 1)."""
        return (self.words(n) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))

    def normal(self, n: int) -> np.ndarray:
        pairs = -(-n // 2)
        u = self.uniform(2 * pairs).reshape(pairs, 2)
        r = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
        t = 2.0 * np.pi * u[:, 1]
        z = np.stack([r * np.cos(t), r * np.sin(t)], axis=1).reshape(-1)
        return z[:n]

    def integers(self, low: int, high: int, n: int) -> np.ndarray:
        """``n`` integers in [low, high)."""
        if high <= low:
            raise ValueError(f"empty range [{low}, {high})")
        return low + np.floor(self.uniform(n) * (high - low)).astype(np.int64)

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.uniform(n), kind="stable")
