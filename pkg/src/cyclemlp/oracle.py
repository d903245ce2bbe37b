"""Loop-based reference implementations, for equivalence tests only.

Everything here is a direct transcription with explicit Python loops over
float64 scalars; results are cast back to the input dtype at the end.
Nothing is vectorized, so the code can be checked by eye.  Keep inputs small.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import ScaleError, ShapeError
from .tensor import Rng


@dataclass(frozen=True)
class OracleReport:
    op: str
    max_abs: float
    max_rel: float
    cases: int

    def __post_init__(self):
        if self.max_abs < 0 or self.max_rel < 0:
            raise ValueError("diffs must be non-negative")
        if self.cases < 1:
            raise ValueError("at least one case required")


def _offset(c: int, kh: int, kw: int) -> tuple[int, int]:
    size = kh * kw
    d = c % size - size // 2
    if kh > 1:
        return d, 0
    if kw > 1:
        return 0, d
    return 0, 0


def oracle_cycle_fc(x, p, count_macs: bool = False):
    """Y[n,j,h,w] = b[j] + sum_c F[c,j] * X[n, c, h+dh(c), w+dw(c)], zero outside."""
    N, C, H, W = x.shape
    if C != p.weight.shape[0]:
        raise ShapeError("channel mismatch")
    kh, kw = p.kernel
    Co = p.weight.shape[1]
    y = np.zeros((N, Co, H, W))
    macs = 0
    for n in range(N):
        for j in range(Co):
            for h in range(H):
                for w in range(W):
                    acc = float(p.bias[j])
                    for c in range(C):
                        dh, dw = _offset(c, kh, kw)
                        hh, ww = h + dh, w + dw
                        v = float(x[n, c, hh, ww]) if 0 <= hh < H and 0 <= ww < W else 0.0
                        acc += float(p.weight[c, j]) * v
                        macs += 1
                    y[n, j, h, w] = acc
    y = y.astype(x.dtype)
    return (y, macs) if count_macs else y


def oracle_channel_fc(x, p, count_macs: bool = False):
    """Y[n,j,h,w] = b[j] + sum_c F[c,j] * X[n,c,h,w]."""
    N, C, H, W = x.shape
    if C != p.weight.shape[0]:
        raise ShapeError("channel mismatch")
    Co = p.weight.shape[1]
    y = np.zeros((N, Co, H, W))
    macs = 0
    for n in range(N):
        for j in range(Co):
            for h in range(H):
                for w in range(W):
                    acc = float(p.bias[j])
                    for c in range(C):
                        acc += float(p.weight[c, j]) * float(x[n, c, h, w])
                        macs += 1
                    y[n, j, h, w] = acc
    y = y.astype(x.dtype)
    return (y, macs) if count_macs else y


def oracle_spatial_fc(x, ws, count_macs: bool = False):
    """Per channel, the flattened H*W map times a fixed (HW x HW) matrix.

    The weight is tied to one spatial size; any other size is rejected.
    """
    N, C, H, W = x.shape
    side = ws.shape[0]
    if ws.ndim != 2 or ws.shape[1] != side:
        raise ShapeError("spatial FC weight must be square")
    if H * W != side:
        raise ScaleError(f"spatial FC weight is bound to {side} positions, input has {H}x{W}={H * W}")
    y = np.zeros((N, C, H, W))
    macs = 0
    for n in range(N):
        for c in range(C):
            for o in range(side):
                acc = 0.0
                for i in range(side):
                    acc += float(x[n, c, i // W, i % W]) * float(ws[i, o])
                    macs += 1
                y[n, c, o // W, o % W] = acc
    y = y.astype(x.dtype)
    return (y, macs) if count_macs else y


def oracle_layer_norm(x, p):
    N, C, H, W = x.shape
    y = np.zeros(x.shape)
    for n in range(N):
        for h in range(H):
            for w in range(W):
                vals = [float(x[n, c, h, w]) for c in range(C)]
                mu = sum(vals) / C
                var = sum((v - mu) ** 2 for v in vals) / C
                for c in range(C):
                    xhat = (vals[c] - mu) / math.sqrt(var + p.eps)
                    y[n, c, h, w] = xhat * float(p.gamma[c]) + float(p.beta[c])
    return y.astype(x.dtype)


def _gelu(v: float) -> float:
    return 0.5 * v * (1.0 + math.erf(v / math.sqrt(2.0)))


def oracle_gelu(x):
    y = np.zeros(x.shape)
    for i, v in enumerate(x.reshape(-1)):
        y.reshape(-1)[i] = _gelu(float(v))
    return y.astype(x.dtype)


def oracle_channel_mlp(x, p):
    N, C, H, W = x.shape
    w1, b1, w2, b2 = p.fc1.weight, p.fc1.bias, p.fc2.weight, p.fc2.bias
    hid, Co = w1.shape[1], w2.shape[1]
    y = np.zeros((N, Co, H, W))
    for n in range(N):
        for h in range(H):
            for w in range(W):
                mid = []
                for k in range(hid):
                    acc = float(b1[k])
                    for c in range(C):
                        acc += float(w1[c, k]) * float(x[n, c, h, w])
                    mid.append(_gelu(acc))
                for j in range(Co):
                    acc = float(b2[j])
                    for k in range(hid):
                        acc += float(w2[k, j]) * mid[k]
                    y[n, j, h, w] = acc
    return y.astype(x.dtype)


def oracle_patch_embed(x, p):
    N, C, H, W = x.shape
    Co, Ci, k, _ = p.weight.shape
    s, pad = p.stride, p.padding
    Ho = (H + 2 * pad - k) // s + 1
    Wo = (W + 2 * pad - k) // s + 1
    y = np.zeros((N, Co, Ho, Wo))
    for n in range(N):
        for o in range(Co):
            for i in range(Ho):
                for j in range(Wo):
                    acc = float(p.bias[o])
                    for c in range(Ci):
                        for a in range(k):
                            for b in range(k):
                                hh, ww = i * s + a - pad, j * s + b - pad
                                if 0 <= hh < H and 0 <= ww < W:
                                    acc += float(p.weight[o, c, a, b]) * float(x[n, c, hh, ww])
                    y[n, o, i, j] = acc
    return y.astype(x.dtype)


def oracle_avg_pool(x):
    N, C, H, W = x.shape
    y = np.zeros((N, C, 1, 1))
    for n in range(N):
        for c in range(C):
            total = 0.0
            for h in range(H):
                for w in range(W):
                    total += float(x[n, c, h, w])
            y[n, c, 0, 0] = total / (H * W)
    return y.astype(x.dtype)


def oracle_softmax_xent(logits, labels) -> float:
    N, K = logits.shape[:2]
    total = 0.0
    for n in range(N):
        z = [float(logits[n, k, 0, 0]) for k in range(K)]
        m = max(z)
        lse = m + math.log(sum(math.exp(v - m) for v in z))
        total += lse - z[int(labels[n])]
    return total / N


# -- equivalence harness ----------------------------------------------------------------


def _rand(rng: Rng, shape, dtype, scale=1.0):
    return (scale * rng.normal(int(np.prod(shape)))).reshape(shape).astype(dtype)


def _dims(rng: Rng):
    n = int(rng.integers(1, 3, 1)[0])
    c = int(rng.integers(1, 7, 1)[0])
    h = int(rng.integers(1, 6, 1)[0])
    w = int(rng.integers(1, 6, 1)[0])
    return n, c, h, w


_KERNELS = [(1, 1), (1, 3), (3, 1), (1, 5), (5, 1), (1, 7), (7, 1)]


def _case(op: str, rng: Rng, dtype):
    """One random (fast result, oracle result) pair."""
    n, c, h, w = _dims(rng)
    x = _rand(rng, (n, c, h, w), dtype)
    if op in ("cycle_fc", "channel_fc"):
        co = int(rng.integers(1, 7, 1)[0])
        kernel = _KERNELS[int(rng.integers(0, len(_KERNELS), 1)[0])] if op == "cycle_fc" else (1, 1)
        p = ops.CycleFcParams(_rand(rng, (c, co), dtype), _rand(rng, (co,), dtype), kernel)
        if op == "cycle_fc":
            return ops.cycle_fc_forward(x, p)[0], oracle_cycle_fc(x, p)
        return ops.channel_fc_forward(x, p)[0], oracle_channel_fc(x, p)
    if op == "layer_norm":
        p = ops.LayerNormParams(_rand(rng, (c,), dtype), _rand(rng, (c,), dtype))
        return ops.layer_norm_forward(x, p)[0], oracle_layer_norm(x, p)
    if op == "gelu":
        x = x * dtype(3.0)
        return ops.gelu_forward(x)[0], oracle_gelu(x)
    if op == "channel_mlp":
        e = int(rng.integers(1, 4, 1)[0])
        p = ops.MlpParams(
            ops.CycleFcParams(_rand(rng, (c, e * c), dtype), _rand(rng, (e * c,), dtype)),
            ops.CycleFcParams(_rand(rng, (e * c, c), dtype), _rand(rng, (c,), dtype)))
        return ops.channel_mlp_forward(x, p)[0], oracle_channel_mlp(x, p)
    if op == "patch_embed":
        k = [1, 3, 5, 7][int(rng.integers(0, 4, 1)[0])]
        s = int(rng.integers(1, 5, 1)[0])
        pad = k // 2
        hh, ww = int(rng.integers(k, k + 8, 1)[0]), int(rng.integers(k, k + 8, 1)[0])
        x = _rand(rng, (n, c, hh, ww), dtype)
        co = int(rng.integers(1, 5, 1)[0])
        p = ops.PatchEmbedParams(_rand(rng, (co, c, k, k), dtype, 0.3), _rand(rng, (co,), dtype),
                                 s, pad)
        return ops.patch_embed_forward(x, p)[0], oracle_patch_embed(x, p)
    if op == "avg_pool":
        return ops.global_avg_pool_forward(x)[0], oracle_avg_pool(x)
    if op == "softmax_xent":
        logits = _rand(rng, (n, c, 1, 1), dtype, 3.0)
        labels = rng.integers(0, c, n)
        return (np.array(ops.softmax_xent(logits, labels)[0]),
                np.array(oracle_softmax_xent(logits, labels)))
    raise ValueError(f"unknown op {op!r}")


FORWARD_OPS = ("channel_fc", "cycle_fc", "layer_norm", "gelu", "channel_mlp", "patch_embed",
               "avg_pool", "softmax_xent")


def compare(op: str, seed: int = 0, cases: int = 100, dtype=np.float32) -> OracleReport:
    rng = Rng(seed)
    max_abs = max_rel = 0.0
    for _ in range(cases):
        fast, ref = _case(op, rng, dtype)
        fast = np.asarray(fast, dtype=np.float64)
        ref = np.asarray(ref, dtype=np.float64)
        if fast.shape != ref.shape:
            raise ShapeError(f"{op}: shape {fast.shape} vs oracle {ref.shape}")
        diff = np.abs(fast - ref)
        max_abs = max(max_abs, float(diff.max(initial=0.0)))
        max_rel = max(max_rel, float((diff / np.maximum(np.abs(ref), 1e-12)).max(initial=0.0)))
    return OracleReport(op, max_abs, max_rel, cases)


def compare_all(seed: int = 0, cases: int = 100, dtype=np.float32) -> list[OracleReport]:
    return [compare(op, seed, cases, dtype) for op in FORWARD_OPS]


def spatial_fc_scale_demo(side: int = 4) -> tuple[bool, str]:
    """Apply a spatial FC built for ``side x side`` maps to a larger map.

    Returns ``(rejected, message)``; ``rejected`` is True when the oracle
    raises ScaleError, as it must.
    """
    ws = np.eye(side * side)
    x = np.ones((1, 1, side + 1, side), dtype=np.float64)
    try:
        oracle_spatial_fc(x, ws)
    except ScaleError as e:
        return True, str(e)
    return False, "spatial FC accepted a mismatched scale"
