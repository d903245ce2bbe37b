"""Forward operators and their vector-Jacobian products.

Every ``*_forward`` returns ``(output, Tape)``; the matching ``*_vjp`` takes
that tape and the output gradient and returns input and parameter
gradients.  All tensors are (N, C, H, W) numpy arrays.

Cycle FC is a channel FC whose input channel ``c`` is read at a spatial
offset that cycles with ``c``.  For a ``1 x K`` pseudo-kernel channel ``c``
is read at ``(h, w + (c % K) - K // 2)``; ``K x 1`` is the same along
``h``.  Reads outside the map are zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

from .errors import InputTooSmallError, ShapeError
from .tensor import check_tensor

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class Tape:
    """Values retained by one forward call for its VJP."""

    op: str
    saved: dict[str, Any] = field(default_factory=dict)

    def __getitem__(self, key):
        return self.saved[key]


def _expect(tape: Tape, op: str) -> None:
    if tape.op != op:
        raise ShapeError(f"tape from {tape.op!r} passed to {op!r} VJP")


def _check_dy(dy: np.ndarray, shape) -> None:
    if dy.shape != tuple(shape):
        raise ShapeError(f"gradient shape {dy.shape} does not match forward output {tuple(shape)}")


# -- parameter containers -----------------------------------------------------


def check_kernel(kernel) -> tuple[int, int]:
    kh, kw = (int(k) for k in kernel)
    if kh < 1 or kw < 1 or kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"pseudo-kernel extents must be odd and positive, got {kh}x{kw}")
    if kh > 1 and kw > 1:
        raise ValueError(f"only 1xK, Kx1 and 1x1 pseudo-kernels are supported, got {kh}x{kw}")
    return kh, kw


@dataclass
class CycleFcParams:
    """Weight ``(C_in, C_out)``, bias ``(C_out,)`` and pseudo-kernel size.

    With the default 1x1 kernel this is an ordinary channel FC; the model
    uses it that way for the projection, MLP and head layers too.
    """

    weight: np.ndarray
    bias: np.ndarray
    kernel: tuple[int, int] = (1, 1)

    def __post_init__(self):
        self.kernel = check_kernel(self.kernel)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[1],):
            raise ShapeError(
                f"weight {self.weight.shape} and bias {self.bias.shape} are inconsistent")

    @property
    def c_in(self) -> int:
        return self.weight.shape[0]

    @property
    def c_out(self) -> int:
        return self.weight.shape[1]

    @property
    def num_params(self) -> int:
        return self.weight.size + self.bias.size


@dataclass
class LayerNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    eps: float = 1e-6

    def __post_init__(self):
        if self.gamma.shape != self.beta.shape or self.gamma.ndim != 1:
            raise ShapeError(f"gamma {self.gamma.shape} / beta {self.beta.shape} mismatch")
        if self.eps <= 0:
            raise ValueError("eps must be positive")


@dataclass
class MlpParams:
    """Channel MLP: ``fc2(gelu(fc1(x)))`` with hidden width ``E * C``."""

    fc1: CycleFcParams
    fc2: CycleFcParams


@dataclass
class PatchEmbedParams:
    weight: np.ndarray  # (C_out, C_in, k, k)
    bias: np.ndarray
    stride: int
    padding: int

    def __post_init__(self):
        w = self.weight
        if w.ndim != 4 or w.shape[2] != w.shape[3] or w.shape[2] % 2 == 0:
            raise ShapeError(f"patch-embed weight must be (C_out, C_in, k, k) with odd k, got {w.shape}")
        if self.bias.shape != (w.shape[0],):
            raise ShapeError(f"bias {self.bias.shape} does not match {w.shape[0]} output channels")

    @property
    def kernel(self) -> int:
        return self.weight.shape[2]


# -- offsets --------------------------------------------------------------------


@dataclass(frozen=True)
class OffsetTable:
    """Per-channel spatial read offsets, periodic in the pseudo-kernel size."""

    dh: np.ndarray
    dw: np.ndarray
    period: int

    def __len__(self):
        return len(self.dh)


def build_offset_table(c_in: int, kernel) -> OffsetTable:
    kh, kw = check_kernel(kernel)
    period = kh * kw
    cyc = np.arange(c_in) % period - period // 2
    zero = np.zeros(c_in, dtype=np.int64)
    if kh > 1:
        return OffsetTable(dh=cyc, dw=zero, period=period)
    if kw > 1:
        return OffsetTable(dh=zero, dw=cyc, period=period)
    return OffsetTable(dh=zero, dw=zero.copy(), period=1)


def _shift(x: np.ndarray, offsets: OffsetTable, sign: int = 1) -> np.ndarray:
    """out[:, c, h, w] = x[:, c, h + sign*dh(c), w + sign*dw(c)], zero outside."""
    out = np.zeros_like(x)
    H, W = x.shape[2:]
    S = offsets.period
    for r in range(min(S, x.shape[1])):
        dh = sign * int(offsets.dh[r])
        dw = sign * int(offsets.dw[r])
        h0, h1 = max(0, -dh), min(H, H - dh)
        w0, w1 = max(0, -dw), min(W, W - dw)
        if h0 < h1 and w0 < w1:
            out[:, r::S, h0:h1, w0:w1] = x[:, r::S, h0 + dh:h1 + dh, w0 + dw:w1 + dw]
    return out


# -- channel FC / Cycle FC ----------------------------------------------------------


def _fc(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    y = np.matmul(x.transpose(0, 2, 3, 1), weight)
    y += bias
    return np.ascontiguousarray(y.transpose(0, 3, 1, 2))


def _check_fc_input(x: np.ndarray, p: CycleFcParams) -> None:
    check_tensor(x, "x")
    if x.shape[1] != p.c_in:
        raise ShapeError(f"input has {x.shape[1]} channels, weight expects {p.c_in}")


def channel_fc_forward(x: np.ndarray, p: CycleFcParams):
    _check_fc_input(x, p)
    if p.kernel != (1, 1):
        raise ValueError(f"channel FC needs a 1x1 kernel, got {p.kernel}")
    y = _fc(x, p.weight, p.bias)
    return y, Tape("channel_fc", {"x": x, "weight": p.weight, "out_shape": y.shape})


def _fc_grads(xin: np.ndarray, weight: np.ndarray, dy: np.ndarray):
    c_in, c_out = weight.shape
    dy_t = dy.transpose(0, 2, 3, 1)
    dxin = np.ascontiguousarray(np.matmul(dy_t, weight.T).transpose(0, 3, 1, 2))
    dweight = xin.transpose(0, 2, 3, 1).reshape(-1, c_in).T @ dy_t.reshape(-1, c_out)
    dbias = dy.sum(axis=(0, 2, 3))
    return dxin, dweight, dbias


def channel_fc_vjp(tape: Tape, dy: np.ndarray):
    """Returns ``(dx, dweight, dbias)``."""
    _expect(tape, "channel_fc")
    _check_dy(dy, tape["out_shape"])
    return _fc_grads(tape["x"], tape["weight"], dy)


def cycle_fc_forward(x: np.ndarray, p: CycleFcParams):
    _check_fc_input(x, p)
    offsets = build_offset_table(p.c_in, p.kernel)
    xs = _shift(x, offsets)
    y = _fc(xs, p.weight, p.bias)
    return y, Tape("cycle_fc", {"xs": xs, "weight": p.weight, "offsets": offsets,
                                "kernel": p.kernel, "out_shape": y.shape})


def cycle_fc_vjp(tape: Tape, dy: np.ndarray):
    """Returns ``(dx, dweight, dbias)``."""
    _expect(tape, "cycle_fc")
    _check_dy(dy, tape["out_shape"])
    dxs, dweight, dbias = _fc_grads(tape["xs"], tape["weight"], dy)
    return _shift(dxs, tape["offsets"], sign=-1), dweight, dbias


# -- layer norm ---------------------------------------------------------------------


def layer_norm_forward(x: np.ndarray, p: LayerNormParams):
    """Normalizes each token over the channel axis."""
    check_tensor(x, "x")
    if x.shape[1] != p.gamma.shape[0]:
        raise ShapeError(f"input has {x.shape[1]} channels, norm expects {p.gamma.shape[0]}")
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + p.eps)
    xhat = xc * rstd
    y = xhat * p.gamma[:, None, None] + p.beta[:, None, None]
    return y.astype(x.dtype, copy=False), Tape("layer_norm", {"xhat": xhat, "rstd": rstd,
                                                              "gamma": p.gamma})


def layer_norm_vjp(tape: Tape, dy: np.ndarray):
    """Returns ``(dx, dgamma, dbeta)``."""
    _expect(tape, "layer_norm")
    xhat, rstd = tape["xhat"], tape["rstd"]
    _check_dy(dy, xhat.shape)
    dgamma = (dy * xhat).sum(axis=(0, 2, 3))
    dbeta = dy.sum(axis=(0, 2, 3))
    g = dy * tape["gamma"][:, None, None]
    dx = rstd * (g - g.mean(axis=1, keepdims=True)
                 - xhat * (g * xhat).mean(axis=1, keepdims=True))
    return dx, dgamma, dbeta


# -- GELU ---------------------------------------------------------------------------


def gelu_forward(x: np.ndarray):
    """Exact GELU, ``0.5 x (1 + erf(x / sqrt 2))``."""
    y = 0.5 * x * (1.0 + erf(x / _SQRT2))
    return y.astype(x.dtype, copy=False), Tape("gelu", {"x": x})


def gelu_vjp(tape: Tape, dy: np.ndarray):
    _expect(tape, "gelu")
    x = tape["x"]
    _check_dy(dy, x.shape)
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return (dy * (cdf + x * pdf)).astype(x.dtype, copy=False)


# -- channel MLP ----------------------------------------------------------------------


def channel_mlp_forward(x: np.ndarray, p: MlpParams):
    h, t1 = channel_fc_forward(x, p.fc1)
    g, t2 = gelu_forward(h)
    y, t3 = channel_fc_forward(g, p.fc2)
    return y, Tape("channel_mlp", {"fc1": t1, "gelu": t2, "fc2": t3})


def channel_mlp_vjp(tape: Tape, dy: np.ndarray):
    """Returns ``(dx, MlpParams of gradients)``."""
    _expect(tape, "channel_mlp")
    dg, dw2, db2 = channel_fc_vjp(tape["fc2"], dy)
    dh = gelu_vjp(tape["gelu"], dg)
    dx, dw1, db1 = channel_fc_vjp(tape["fc1"], dh)
    return dx, MlpParams(CycleFcParams(dw1, db1), CycleFcParams(dw2, db2))


# -- overlapping patch embedding ------------------------------------------------------


def conv_out_size(d: int, kernel: int, stride: int, padding: int) -> int:
    return (d + 2 * padding - kernel) // stride + 1


def patch_embed_forward(x: np.ndarray, p: PatchEmbedParams):
    """Strided, zero-padded cross-correlation."""
    check_tensor(x, "x")
    N, C, H, W = x.shape
    c_out, c_in, k, _ = p.weight.shape
    if C != c_in:
        raise ShapeError(f"input has {C} channels, patch embedding expects {c_in}")
    s, pad = p.stride, p.padding
    Ho, Wo = conv_out_size(H, k, s, pad), conv_out_size(W, k, s, pad)
    if Ho < 1 or Wo < 1:
        raise InputTooSmallError(
            f"{H}x{W} input is too small for kernel {k}, stride {s}, padding {pad}")
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s][:, :, :Ho, :Wo]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(N * Ho * Wo, C * k * k)
    wmat = p.weight.reshape(c_out, -1)
    y = cols @ wmat.T + p.bias
    y = np.ascontiguousarray(y.reshape(N, Ho, Wo, c_out).transpose(0, 3, 1, 2))
    return y, Tape("patch_embed", {"cols": cols, "weight": p.weight, "x_shape": x.shape,
                                   "stride": s, "padding": pad, "out_shape": y.shape})


def patch_embed_vjp(tape: Tape, dy: np.ndarray):
    """Returns ``(dx, dweight, dbias)``."""
    _expect(tape, "patch_embed")
    _check_dy(dy, tape["out_shape"])
    weight, cols = tape["weight"], tape["cols"]
    N, C, H, W = tape["x_shape"]
    s, pad = tape["stride"], tape["padding"]
    c_out, _, k, _ = weight.shape
    _, _, Ho, Wo = dy.shape

    dy_flat = dy.transpose(0, 2, 3, 1).reshape(-1, c_out)
    dweight = (dy_flat.T @ cols).reshape(weight.shape)
    dbias = dy_flat.sum(axis=0)
    dcols = (dy_flat @ weight.reshape(c_out, -1)).reshape(N, Ho, Wo, C, k, k)
    dxp = np.zeros((N, C, H + 2 * pad, W + 2 * pad), dtype=dy.dtype)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i:i + s * (Ho - 1) + 1:s, j:j + s * (Wo - 1) + 1:s] += \
                dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return dxp[:, :, pad:pad + H, pad:pad + W].copy(), dweight, dbias


# -- pooling, head loss -------------------------------------------------------------


def global_avg_pool_forward(x: np.ndarray):
    check_tensor(x, "x")
    return x.mean(axis=(2, 3), keepdims=True), Tape("avg_pool", {"x_shape": x.shape})


def global_avg_pool_vjp(tape: Tape, dy: np.ndarray):
    _expect(tape, "avg_pool")
    N, C, H, W = tape["x_shape"]
    _check_dy(dy, (N, C, 1, 1))
    return np.broadcast_to(dy / (H * W), (N, C, H, W)).copy()


def softmax(z: np.ndarray, axis: int) -> np.ndarray:
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def softmax_xent(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its gradient w.r.t. ``logits``."""
    check_tensor(logits, "logits")
    N, K = logits.shape[:2]
    if logits.shape[2:] != (1, 1):
        raise ShapeError(f"logits must be (N, K, 1, 1), got {logits.shape}")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (N,):
        raise ShapeError(f"expected {N} labels, got shape {labels.shape}")
    if np.any(labels < 0) or np.any(labels >= K):
        raise ValueError(f"labels must lie in [0, {K})")
    z = logits[:, :, 0, 0].astype(np.float64)
    zmax = z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z - zmax).sum(axis=1, keepdims=True)) + zmax
    logp = z - logsum
    rows = np.arange(N)
    loss = float(-logp[rows, labels].mean())
    d = np.exp(logp)
    d[rows, labels] -= 1.0
    d /= N
    return loss, d.astype(logits.dtype)[:, :, None, None]
