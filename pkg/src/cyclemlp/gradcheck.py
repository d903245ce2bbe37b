"""Central finite-difference checks for every VJP, the block and the toy model.

All checks run in float64.  The scalar objective is ``sum(probe * output)``
with a random probe (or the cross-entropy itself for the loss and the full
model), so the analytic gradient is the VJP of the probe.

Error metric, per gradient tensor::

    max_i |analytic_i - numeric_i| / max(max_i |analytic_i|, max_i |numeric_i|, 1e-12)

i.e. the worst absolute deviation relative to the tensor's gradient scale.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .model import (BlockParams, FusionParams, block_forward, block_vjp, model_backward,
                    model_forward, model_init, variant_config)
from .ops import CycleFcParams, LayerNormParams, MlpParams, PatchEmbedParams
from .tensor import Rng

STEP = 1e-5
OP_NAMES = ("channel_fc", "cycle_fc", "layer_norm", "gelu", "channel_mlp", "patch_embed",
            "avg_pool", "softmax_xent")
TARGETS = OP_NAMES + ("block", "model-toy")
TOLERANCE = {"model-toy": 1e-3}
DEFAULT_TOLERANCE = 1e-4


def _normal(rng: Rng, *shape, scale=1.0) -> np.ndarray:
    n = int(np.prod(shape))
    return scale * rng.normal(n).reshape(shape)


def rel_error(analytic: np.ndarray, numeric: np.ndarray, scale: float | None = None) -> float:
    diff = float(np.max(np.abs(analytic - numeric))) if analytic.size else 0.0
    if scale is None:
        scale = max(float(np.max(np.abs(analytic), initial=0.0)),
                    float(np.max(np.abs(numeric), initial=0.0)))
    return diff / max(scale, 1e-12)


def fd_check(loss_fn, arrays: dict, analytic: dict, step: float = STEP,
             rng: Rng | None = None, max_entries: int | None = None) -> dict[str, float]:
    """Compare ``analytic`` gradients to central differences of ``loss_fn``.

    ``arrays`` are perturbed in place (and restored), so ``loss_fn`` must read
    them by reference.  With ``max_entries`` only that many randomly chosen
    entries per tensor are differenced; the error scale still uses the full
    analytic tensor.
    """
    errors = {}
    for name, arr in arrays.items():
        grad = analytic[name]
        if grad.shape != arr.shape:
            raise ValueError(f"{name}: gradient shape {grad.shape} != array shape {arr.shape}")
        flat = arr.reshape(-1)
        if not np.shares_memory(flat, arr):
            raise ValueError(f"{name} must be contiguous to be perturbed in place")
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = idx[rng.permutation(flat.size)[:max_entries]]
        numeric = np.empty(len(idx))
        for j, i in enumerate(idx):
            old = flat[i]
            flat[i] = old + step
            lp = loss_fn()
            flat[i] = old - step
            lm = loss_fn()
            flat[i] = old
            numeric[j] = (lp - lm) / (2 * step)
        a = grad.reshape(-1)[idx]
        scale = max(float(np.max(np.abs(grad), initial=0.0)),
                    float(np.max(np.abs(numeric), initial=0.0)))
        errors[name] = rel_error(a, numeric, scale)
    return errors


def _probe_loss(fwd, probe):
    return lambda: float(np.sum(fwd() * probe))


def random_fc(rng: Rng, c_in: int, c_out: int, kernel=(1, 1)) -> CycleFcParams:
    return CycleFcParams(_normal(rng, c_in, c_out, scale=0.5), _normal(rng, c_out, scale=0.5),
                         kernel)


def random_ln(rng: Rng, c: int) -> LayerNormParams:
    return LayerNormParams(1.0 + _normal(rng, c, scale=0.3), _normal(rng, c, scale=0.3))


def random_block(rng: Rng, c: int, expand: int = 2,
                 kernels=((1, 3), (3, 1), (1, 1))) -> BlockParams:
    hid = max(c // 4, 1)
    return BlockParams(
        norm1=random_ln(rng, c),
        branches=[random_fc(rng, c, c, k) for k in kernels],
        fuse=FusionParams(random_fc(rng, c, hid), random_fc(rng, hid, len(kernels) * c)),
        proj=random_fc(rng, c, c),
        norm2=random_ln(rng, c),
        mlp=MlpParams(random_fc(rng, c, expand * c), random_fc(rng, expand * c, c)),
    )


def _fc_arrays(prefix, p):
    return {f"{prefix}weight": p.weight, f"{prefix}bias": p.bias}


def check_op(name: str, seed: int = 0, corrupt: bool = False) -> dict[str, float]:
    """Per-gradient errors for one target in ``TARGETS``.

    ``corrupt`` scales the analytic input gradient by 1.01, a negative
    control that must fail.
    """
    if name not in TARGETS:
        raise ValueError(f"unknown gradcheck target {name!r}; choose from {', '.join(TARGETS)}")
    rng = Rng(seed)
    if name == "model-toy":
        arrays, analytic, loss_fn, max_entries = _setup_model(rng)
    else:
        arrays, analytic, loss_fn = _SETUPS[name](rng)
        max_entries = None
    if corrupt:
        first = next(iter(analytic))
        analytic = dict(analytic, **{first: analytic[first] * 1.01})
    return fd_check(loss_fn, arrays, analytic, rng=rng, max_entries=max_entries)


def _setup_channel_fc(rng):
    x = _normal(rng, 2, 3, 3, 4)
    p = random_fc(rng, 3, 5)
    y, tape = ops.channel_fc_forward(x, p)
    probe = _normal(rng, *y.shape)
    dx, dw, db = ops.channel_fc_vjp(tape, probe)
    loss = _probe_loss(lambda: ops.channel_fc_forward(x, p)[0], probe)
    return {"x": x, **_fc_arrays("", p)}, {"x": dx, "weight": dw, "bias": db}, loss


def _setup_cycle_fc(rng):
    kernels = [(1, 3), (3, 1), (1, 5), (5, 1), (1, 1)]
    k = kernels[int(rng.integers(0, len(kernels), 1)[0])]
    x = _normal(rng, 1, 4, 3, 3) if k == (1, 3) else _normal(rng, 2, 6, 4, 5)
    p = random_fc(rng, x.shape[1], 3, k)
    y, tape = ops.cycle_fc_forward(x, p)
    probe = _normal(rng, *y.shape)
    dx, dw, db = ops.cycle_fc_vjp(tape, probe)
    loss = _probe_loss(lambda: ops.cycle_fc_forward(x, p)[0], probe)
    return {"x": x, **_fc_arrays("", p)}, {"x": dx, "weight": dw, "bias": db}, loss


def _setup_layer_norm(rng):
    x = _normal(rng, 2, 5, 3, 3, scale=2.0)
    p = random_ln(rng, 5)
    y, tape = ops.layer_norm_forward(x, p)
    probe = _normal(rng, *y.shape)
    dx, dg, db = ops.layer_norm_vjp(tape, probe)
    loss = _probe_loss(lambda: ops.layer_norm_forward(x, p)[0], probe)
    return {"x": x, "gamma": p.gamma, "beta": p.beta}, {"x": dx, "gamma": dg, "beta": db}, loss


def _setup_gelu(rng):
    x = _normal(rng, 2, 3, 4, 4, scale=2.0)
    y, tape = ops.gelu_forward(x)
    probe = _normal(rng, *y.shape)
    dx = ops.gelu_vjp(tape, probe)
    loss = _probe_loss(lambda: ops.gelu_forward(x)[0], probe)
    return {"x": x}, {"x": dx}, loss


def _setup_channel_mlp(rng):
    x = _normal(rng, 2, 4, 3, 3)
    p = MlpParams(random_fc(rng, 4, 8), random_fc(rng, 8, 4))
    y, tape = ops.channel_mlp_forward(x, p)
    probe = _normal(rng, *y.shape)
    dx, g = ops.channel_mlp_vjp(tape, probe)
    loss = _probe_loss(lambda: ops.channel_mlp_forward(x, p)[0], probe)
    arrays = {"x": x, **_fc_arrays("fc1.", p.fc1), **_fc_arrays("fc2.", p.fc2)}
    analytic = {"x": dx, **_fc_arrays("fc1.", g.fc1), **_fc_arrays("fc2.", g.fc2)}
    return arrays, analytic, loss


def _setup_patch_embed(rng):
    x = _normal(rng, 2, 3, 9, 8)
    p = PatchEmbedParams(_normal(rng, 4, 3, 3, 3, scale=0.5), _normal(rng, 4), stride=2,
                         padding=1)
    y, tape = ops.patch_embed_forward(x, p)
    probe = _normal(rng, *y.shape)
    dx, dw, db = ops.patch_embed_vjp(tape, probe)
    loss = _probe_loss(lambda: ops.patch_embed_forward(x, p)[0], probe)
    return {"x": x, "weight": p.weight, "bias": p.bias}, {"x": dx, "weight": dw, "bias": db}, loss


def _setup_avg_pool(rng):
    x = _normal(rng, 2, 3, 4, 5)
    y, tape = ops.global_avg_pool_forward(x)
    probe = _normal(rng, *y.shape)
    dx = ops.global_avg_pool_vjp(tape, probe)
    loss = _probe_loss(lambda: ops.global_avg_pool_forward(x)[0], probe)
    return {"x": x}, {"x": dx}, loss


def _setup_softmax_xent(rng):
    logits = _normal(rng, 4, 5, 1, 1, scale=2.0)
    labels = rng.integers(0, 5, 4)
    _, d = ops.softmax_xent(logits, labels)
    return {"logits": logits}, {"logits": d}, lambda: ops.softmax_xent(logits, labels)[0]


def _setup_block(rng):
    x = _normal(rng, 2, 8, 4, 5)
    bp = random_block(rng, 8)
    y, tape = block_forward(x, bp)
    probe = _normal(rng, *y.shape)
    dx, g = block_vjp(tape, probe)
    loss = _probe_loss(lambda: block_forward(x, bp)[0], probe)
    arrays, analytic = {"x": x}, {"x": dx}
    arrays.update(_block_arrays(bp))
    analytic.update(_block_arrays(g))
    return arrays, analytic, loss


def _block_arrays(bp: BlockParams) -> dict:
    out = {"norm1.gamma": bp.norm1.gamma, "norm1.beta": bp.norm1.beta,
           "norm2.gamma": bp.norm2.gamma, "norm2.beta": bp.norm2.beta}
    for i, br in enumerate(bp.branches):
        out.update(_fc_arrays(f"branch{i}.", br))
    for name, p in (("fuse.fc1.", bp.fuse.fc1), ("fuse.fc2.", bp.fuse.fc2), ("proj.", bp.proj),
                    ("mlp.fc1.", bp.mlp.fc1), ("mlp.fc2.", bp.mlp.fc2)):
        out.update(_fc_arrays(name, p))
    return out


def _setup_model(rng):
    cfg = variant_config("toy", num_classes=3)
    mp = model_init(cfg, rng, dtype=np.float64)
    # move LN affines and biases off their init values so every path is exercised
    state = mp.state_dict()
    for name, arr in state.items():
        if not name.endswith("weight"):
            arr += _normal(rng, *arr.shape, scale=0.2)
    mp.head.weight *= 10.0
    x = _normal(rng, 2, 3, 8, 8)
    labels = np.array([0, 2])
    logits, _, tape = model_forward(x, mp)
    _, dlogits = ops.softmax_xent(logits, labels)
    grads, dx = model_backward(tape, dlogits, return_input_grad=True)

    def loss():
        return ops.softmax_xent(model_forward(x, mp, record=False)[0], labels)[0]

    arrays = {"input": x, **state}
    analytic = {"input": dx, **grads.state_dict()}
    return arrays, analytic, loss, 4


_SETUPS = {
    "channel_fc": _setup_channel_fc,
    "cycle_fc": _setup_cycle_fc,
    "layer_norm": _setup_layer_norm,
    "gelu": _setup_gelu,
    "channel_mlp": _setup_channel_mlp,
    "patch_embed": _setup_patch_embed,
    "avg_pool": _setup_avg_pool,
    "softmax_xent": _setup_softmax_xent,
    "block": _setup_block,
}
