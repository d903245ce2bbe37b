"""The hierarchical CycleMLP backbone: configs, parameters, forward, backward.

Block layout (per stage, repeated ``depth`` times)::

    u   = LN1(z)
    b_k = CycleFC_k(u)                          one branch per pseudo-kernel
    a   = softmax_k(fc2(gelu(fc1(avgpool(u)))))  per channel, over branches
    z^  = z + proj(sum_k a_k * b_k)
    out = z^ + MLP(LN2(z^))

The fusion ``fc2`` output is branch-major: channel ``k * C + c`` is the
logit of branch ``k`` for channel ``c``.

Parameter names are canonical dotted paths shared with the CYMW checkpoint
format: stages count from 1, blocks and branches from 0, e.g.
``stage2.block0.branch1.weight``.  See ``param_names``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ops
from .errors import ShapeError
from .ops import CycleFcParams, LayerNormParams, MlpParams, PatchEmbedParams, Tape
from .tensor import Rng, check_tensor

DEFAULT_BRANCHES = ((1, 3), (3, 1), (1, 1))
HEAD_INIT_STD = 0.02


@dataclass(frozen=True)
class StageConfig:
    stride: int
    channels: int
    depth: int
    expand: int

    def __post_init__(self):
        if min(self.stride, self.channels, self.depth, self.expand) < 1:
            raise ValueError(f"stage fields must be positive: {self}")


@dataclass(frozen=True)
class ModelConfig:
    stages: tuple[StageConfig, ...]
    num_classes: int = 1000
    branch_kernels: tuple[tuple[int, int], ...] = DEFAULT_BRANCHES
    stem_kernel: int = 7
    stem_padding: int = 3
    transition_kernel: int = 3
    transition_padding: int = 1
    eps: float = 1e-6
    name: str = "custom"

    def __post_init__(self):
        if len(self.stages) != 4:
            raise ValueError(f"exactly four stages required, got {len(self.stages)}")
        if not self.branch_kernels:
            raise ValueError("at least one branch kernel is required")
        for k in self.branch_kernels:
            ops.check_kernel(k)
        if self.num_classes < 1:
            raise ValueError("num_classes must be positive")

    def embed_geometry(self, s: int) -> tuple[int, int, int]:
        """(kernel, stride, padding) of the patch embedding entering stage ``s`` (0-based)."""
        stride = self.stages[s].stride
        if s == 0:
            return self.stem_kernel, stride, self.stem_padding
        return self.transition_kernel, stride, self.transition_padding


_VARIANTS = {
    #        channels               depths           expands
    "b1": ((64, 128, 320, 512), (2, 2, 4, 2), (4, 4, 4, 4)),
    "b2": ((64, 128, 320, 512), (2, 3, 10, 3), (4, 4, 4, 4)),
    "b3": ((64, 128, 320, 512), (3, 4, 18, 3), (8, 8, 4, 4)),
    "b4": ((64, 128, 320, 512), (3, 8, 27, 3), (8, 8, 4, 4)),
    "b5": ((96, 192, 384, 768), (3, 4, 24, 3), (4, 4, 4, 4)),
    "toy": ((16, 32, 64, 128), (1, 1, 2, 1), (2, 2, 2, 2)),
}
VARIANTS = tuple(_VARIANTS)
STRIDES = (4, 2, 2, 2)


def variant_config(name: str, num_classes: int = 1000,
                   branch_kernels=DEFAULT_BRANCHES) -> ModelConfig:
    try:
        chans, depths, expands = _VARIANTS[name.lower()]
    except KeyError:
        raise ValueError(f"unknown variant {name!r}; choose from {', '.join(VARIANTS)}") from None
    stages = tuple(StageConfig(s, c, l, e) for s, c, l, e in zip(STRIDES, chans, depths, expands))
    return ModelConfig(stages=stages, num_classes=num_classes,
                       branch_kernels=tuple(tuple(k) for k in branch_kernels), name=name.lower())


def fusion_hidden(channels: int) -> int:
    return max(channels // 4, 1)


def stage_dims(cfg: ModelConfig, height: int, width: int) -> list[tuple[int, int]]:
    """Spatial size of each stage's output for an ``height x width`` input."""
    dims = []
    h, w = height, width
    for s in range(4):
        k, stride, pad = cfg.embed_geometry(s)
        h, w = ops.conv_out_size(h, k, stride, pad), ops.conv_out_size(w, k, stride, pad)
        dims.append((h, w))
    return dims


# -- parameters ---------------------------------------------------------------------


@dataclass
class FusionParams:
    fc1: CycleFcParams
    fc2: CycleFcParams


@dataclass
class BlockParams:
    norm1: LayerNormParams
    branches: list[CycleFcParams]
    fuse: FusionParams
    proj: CycleFcParams
    norm2: LayerNormParams
    mlp: MlpParams


@dataclass
class ModelParams:
    config: ModelConfig
    embeds: list[PatchEmbedParams]
    stages: list[list[BlockParams]]
    norm: LayerNormParams
    head: CycleFcParams

    def state_dict(self) -> dict[str, np.ndarray]:
        """Canonical name -> array (references, not copies)."""
        return dict(_iter_named(self))

    @property
    def dtype(self):
        return self.head.weight.dtype

    @property
    def num_params(self) -> int:
        return sum(a.size for a in self.state_dict().values())

    def map(self, fn) -> "ModelParams":
        """New ModelParams with ``fn`` applied to every array."""
        return from_state(self.config, {k: fn(v) for k, v in self.state_dict().items()})


def _shapes(cfg: ModelConfig):
    """Yield (name, shape, fan_in, fan_out, kind) in canonical order."""
    c_prev = 3
    for s, st in enumerate(cfg.stages, start=1):
        k, _, _ = cfg.embed_geometry(s - 1)
        C = st.channels
        yield f"stage{s}.embed.weight", (C, c_prev, k, k), c_prev * k * k, C * k * k, "w"
        yield f"stage{s}.embed.bias", (C,), 0, 0, "b"
        hid = fusion_hidden(C)
        nb = len(cfg.branch_kernels)
        for b in range(st.depth):
            p = f"stage{s}.block{b}"
            yield f"{p}.norm1.gamma", (C,), 0, 0, "g"
            yield f"{p}.norm1.beta", (C,), 0, 0, "b"
            for i in range(nb):
                yield f"{p}.branch{i}.weight", (C, C), C, C, "w"
                yield f"{p}.branch{i}.bias", (C,), 0, 0, "b"
            for name, cin, cout in (("fuse.fc1", C, hid), ("fuse.fc2", hid, nb * C),
                                    ("proj", C, C)):
                yield f"{p}.{name}.weight", (cin, cout), cin, cout, "w"
                yield f"{p}.{name}.bias", (cout,), 0, 0, "b"
            yield f"{p}.norm2.gamma", (C,), 0, 0, "g"
            yield f"{p}.norm2.beta", (C,), 0, 0, "b"
            E = st.expand * C
            for name, cin, cout in (("mlp.fc1", C, E), ("mlp.fc2", E, C)):
                yield f"{p}.{name}.weight", (cin, cout), cin, cout, "w"
                yield f"{p}.{name}.bias", (cout,), 0, 0, "b"
        c_prev = C
    yield "norm.gamma", (c_prev,), 0, 0, "g"
    yield "norm.beta", (c_prev,), 0, 0, "b"
    yield "head.weight", (c_prev, cfg.num_classes), c_prev, cfg.num_classes, "w"
    yield "head.bias", (cfg.num_classes,), 0, 0, "b"


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    return {name: shape for name, shape, *_ in _shapes(cfg)}


def param_names(cfg: ModelConfig) -> list[str]:
    return [name for name, *_ in _shapes(cfg)]


def model_init(cfg: ModelConfig, rng: Rng, dtype=np.float32) -> ModelParams:
    """Weights ~ N(0, std^2) with std = sqrt(2 / (fan_in + fan_out)), biases and
    LN beta 0, LN gamma 1.  The classifier weight uses std 0.02 so that the
    initial logits are near uniform.

    Weights are drawn in canonical name order from ``rng``.
    """
    state = {}
    for name, shape, fan_in, fan_out, kind in _shapes(cfg):
        if kind == "w":
            std = HEAD_INIT_STD if name == "head.weight" else np.sqrt(2.0 / (fan_in + fan_out))
            state[name] = (std * rng.normal(int(np.prod(shape)))).astype(dtype).reshape(shape)
        elif kind == "g":
            state[name] = np.ones(shape, dtype=dtype)
        else:
            state[name] = np.zeros(shape, dtype=dtype)
    return from_state(cfg, state)


def zeros_like_params(mp: ModelParams) -> ModelParams:
    return mp.map(np.zeros_like)


def from_state(cfg: ModelConfig, state: dict[str, np.ndarray]) -> ModelParams:
    """Build ModelParams from canonical names; shapes must match ``cfg`` exactly."""
    expected = param_shapes(cfg)
    missing = expected.keys() - state.keys()
    extra = state.keys() - expected.keys()
    if missing or extra:
        raise ShapeError(f"state does not match config: missing {sorted(missing)[:5]}, "
                         f"unexpected {sorted(extra)[:5]}")
    for name, shape in expected.items():
        if tuple(state[name].shape) != shape:
            raise ShapeError(f"{name}: expected shape {shape}, got {state[name].shape}")

    def fc(prefix, kernel=(1, 1)):
        return CycleFcParams(state[f"{prefix}.weight"], state[f"{prefix}.bias"], kernel)

    def ln(prefix):
        return LayerNormParams(state[f"{prefix}.gamma"], state[f"{prefix}.beta"], cfg.eps)

    embeds, stages = [], []
    for s, st in enumerate(cfg.stages, start=1):
        _, stride, pad = cfg.embed_geometry(s - 1)
        embeds.append(PatchEmbedParams(state[f"stage{s}.embed.weight"],
                                       state[f"stage{s}.embed.bias"], stride, pad))
        blocks = []
        for b in range(st.depth):
            p = f"stage{s}.block{b}"
            blocks.append(BlockParams(
                norm1=ln(f"{p}.norm1"),
                branches=[fc(f"{p}.branch{i}", k) for i, k in enumerate(cfg.branch_kernels)],
                fuse=FusionParams(fc(f"{p}.fuse.fc1"), fc(f"{p}.fuse.fc2")),
                proj=fc(f"{p}.proj"),
                norm2=ln(f"{p}.norm2"),
                mlp=MlpParams(fc(f"{p}.mlp.fc1"), fc(f"{p}.mlp.fc2")),
            ))
        stages.append(blocks)
    return ModelParams(cfg, embeds, stages, ln("norm"), fc("head"))


def _iter_named(mp: ModelParams):
    for s, (emb, blocks) in enumerate(zip(mp.embeds, mp.stages), start=1):
        yield f"stage{s}.embed.weight", emb.weight
        yield f"stage{s}.embed.bias", emb.bias
        for b, bp in enumerate(blocks):
            yield from _iter_block(f"stage{s}.block{b}", bp)
    yield "norm.gamma", mp.norm.gamma
    yield "norm.beta", mp.norm.beta
    yield "head.weight", mp.head.weight
    yield "head.bias", mp.head.bias


def _iter_block(p: str, bp: BlockParams):
    yield f"{p}.norm1.gamma", bp.norm1.gamma
    yield f"{p}.norm1.beta", bp.norm1.beta
    for i, br in enumerate(bp.branches):
        yield f"{p}.branch{i}.weight", br.weight
        yield f"{p}.branch{i}.bias", br.bias
    for name, fcp in (("fuse.fc1", bp.fuse.fc1), ("fuse.fc2", bp.fuse.fc2), ("proj", bp.proj)):
        yield f"{p}.{name}.weight", fcp.weight
        yield f"{p}.{name}.bias", fcp.bias
    yield f"{p}.norm2.gamma", bp.norm2.gamma
    yield f"{p}.norm2.beta", bp.norm2.beta
    yield f"{p}.mlp.fc1.weight", bp.mlp.fc1.weight
    yield f"{p}.mlp.fc1.bias", bp.mlp.fc1.bias
    yield f"{p}.mlp.fc2.weight", bp.mlp.fc2.weight
    yield f"{p}.mlp.fc2.bias", bp.mlp.fc2.bias


# -- block --------------------------------------------------------------------------


def block_forward(x: np.ndarray, bp: BlockParams):
    check_tensor(x, "x")
    N, C, H, W = x.shape
    if C != bp.norm1.gamma.shape[0]:
        raise ShapeError(f"block expects {bp.norm1.gamma.shape[0]} channels, got {C}")
    nb = len(bp.branches)

    u, t_ln1 = ops.layer_norm_forward(x, bp.norm1)
    outs, t_br = [], []
    for br in bp.branches:
        o, t = ops.cycle_fc_forward(u, br)
        outs.append(o)
        t_br.append(t)

    pooled, t_pool = ops.global_avg_pool_forward(u)
    h, t_f1 = ops.channel_fc_forward(pooled, bp.fuse.fc1)
    g, t_act = ops.gelu_forward(h)
    logits, t_f2 = ops.channel_fc_forward(g, bp.fuse.fc2)
    attn = ops.softmax(logits.reshape(N, nb, C), axis=1)

    mix = attn[:, 0, :, None, None] * outs[0]
    for k in range(1, nb):
        mix = mix + attn[:, k, :, None, None] * outs[k]
    t_out, t_proj = ops.channel_fc_forward(mix, bp.proj)
    zh = x + t_out

    v, t_ln2 = ops.layer_norm_forward(zh, bp.norm2)
    m, t_mlp = ops.channel_mlp_forward(v, bp.mlp)
    y = zh + m
    return y, Tape("block", {
        "ln1": t_ln1, "branches": t_br, "outs": outs, "pool": t_pool, "f1": t_f1,
        "act": t_act, "f2": t_f2, "attn": attn, "proj": t_proj, "ln2": t_ln2, "mlp": t_mlp,
        "shape": x.shape,
    })


def block_vjp(tape: Tape, dy: np.ndarray):
    """Returns ``(dx, BlockParams of gradients)``."""
    if tape.op != "block":
        raise ShapeError(f"tape from {tape.op!r} passed to block VJP")
    N, C, H, W = tape["shape"]
    if dy.shape != (N, C, H, W):
        raise ShapeError(f"gradient shape {dy.shape} does not match block output {(N, C, H, W)}")
    attn, outs = tape["attn"], tape["outs"]
    nb = attn.shape[1]

    dv, g_mlp = ops.channel_mlp_vjp(tape["mlp"], dy)
    dzh_ln, dg2, db2 = ops.layer_norm_vjp(tape["ln2"], dv)
    dzh = dy + dzh_ln

    dmix, dwp, dbp = ops.channel_fc_vjp(tape["proj"], dzh)
    dattn = np.stack([(dmix * o).sum(axis=(2, 3)) for o in outs], axis=1)
    dlogits = attn * (dattn - (attn * dattn).sum(axis=1, keepdims=True))
    dg, dwf2, dbf2 = ops.channel_fc_vjp(tape["f2"], dlogits.reshape(N, nb * C, 1, 1))
    dh = ops.gelu_vjp(tape["act"], dg)
    dpooled, dwf1, dbf1 = ops.channel_fc_vjp(tape["f1"], dh)
    du = ops.global_avg_pool_vjp(tape["pool"], dpooled)

    g_branches = []
    for k, t in enumerate(tape["branches"]):
        dub, dwk, dbk = ops.cycle_fc_vjp(t, attn[:, k, :, None, None] * dmix)
        du += dub
        g_branches.append(CycleFcParams(dwk, dbk, t["kernel"]))
    dx_ln, dg1, db1 = ops.layer_norm_vjp(tape["ln1"], du)
    dx = dzh + dx_ln

    grads = BlockParams(
        norm1=LayerNormParams(dg1, db1),
        branches=g_branches,
        fuse=FusionParams(CycleFcParams(dwf1, dbf1), CycleFcParams(dwf2, dbf2)),
        proj=CycleFcParams(dwp, dbp),
        norm2=LayerNormParams(dg2, db2),
        mlp=g_mlp,
    )
    return dx, grads


# -- full model -----------------------------------------------------------------------


@dataclass
class PyramidFeatures:
    """Stage outputs at strides 4, 8, 16, 32."""

    levels: list[np.ndarray] = field(default_factory=list)

    def __getitem__(self, i):
        return self.levels[i]

    def __len__(self):
        return len(self.levels)

    @property
    def shapes(self):
        return [f.shape for f in self.levels]


def model_forward(x: np.ndarray, mp: ModelParams, record: bool = True):
    """Returns ``(logits (N, K, 1, 1), PyramidFeatures, tape)``.

    With ``record=False`` no intermediate values are kept and the tape is None.
    """
    check_tensor(x, "x")
    if x.shape[1] != 3:
        raise ShapeError(f"expected a 3-channel image batch, got {x.shape[1]} channels")
    x = x.astype(mp.dtype, copy=False)
    feats, t_embeds, t_blocks = [], [], []
    z = x
    for emb, blocks in zip(mp.embeds, mp.stages):
        z, t = ops.patch_embed_forward(z, emb)
        t_embeds.append(t if record else None)
        stage_tapes = []
        for bp in blocks:
            z, t = block_forward(z, bp)
            stage_tapes.append(t if record else None)
        t_blocks.append(stage_tapes)
        feats.append(z)
    v, t_norm = ops.layer_norm_forward(z, mp.norm)
    pooled, t_pool = ops.global_avg_pool_forward(v)
    logits, t_head = ops.channel_fc_forward(pooled, mp.head)
    tape = None
    if record:
        tape = Tape("model", {"embeds": t_embeds, "blocks": t_blocks, "norm": t_norm,
                              "pool": t_pool, "head": t_head, "config": mp.config})
    return logits, PyramidFeatures(feats), tape


def model_backward(tape: Tape, dlogits: np.ndarray, return_input_grad: bool = False):
    """Gradients for every parameter, as a ModelParams of gradient arrays."""
    if tape is None or tape.op != "model":
        raise ShapeError("model_backward needs the tape of a recording model_forward")
    cfg = tape["config"]
    dpooled, dwh, dbh = ops.channel_fc_vjp(tape["head"], dlogits)
    dv = ops.global_avg_pool_vjp(tape["pool"], dpooled)
    dz, dgn, dbn = ops.layer_norm_vjp(tape["norm"], dv)

    g_embeds, g_stages = [None] * 4, [None] * 4
    for s in reversed(range(4)):
        g_blocks = []
        for t in reversed(tape["blocks"][s]):
            dz, gb = block_vjp(t, dz)
            g_blocks.append(gb)
        g_stages[s] = g_blocks[::-1]
        t_emb = tape["embeds"][s]
        dz, dw, db = ops.patch_embed_vjp(t_emb, dz)
        g_embeds[s] = PatchEmbedParams(dw, db, t_emb["stride"], t_emb["padding"])
    grads = ModelParams(cfg, g_embeds, g_stages, LayerNormParams(dgn, dbn, cfg.eps),
                        CycleFcParams(dwh, dbh))
    if return_input_grad:
        return grads, dz
    return grads
